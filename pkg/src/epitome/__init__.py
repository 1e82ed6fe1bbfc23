"""Epitome learning for sparse image representation and denoising."""

__version__ = "0.1.0"

from .core import (
    EpitomeGeometry,
    EpitomeOperator,
    EpitomeSet,
    FlatOperator,
    GeometryError,
    PatchShape,
    column_norms,
    load_epitome,
    phi,
    phi_star,
    project,
    save_epitome,
)
from .denoise import DenoiseConfig, NoiseModel, add_gaussian_noise, denoise_image, psnr
from .learning import LearnConfig, grad_d, init_epitome, learn, objective, renormalize
from .multiscale import ScaleSchedule, downscale_image, multiscale_learn, upscale_epitome
from .solvers import LassoSettings, SparseCode, lasso, omp, weighted_lasso
