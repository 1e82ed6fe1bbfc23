"""Patch-based denoising with a learned epitome dictionary.

Pipeline: learn an epitome on the noisy image, sparse-code every
overlapping patch with OMP until its residual falls below the noise energy,
then average the overlapping clean estimates.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from .core import EpitomeGeometry, EpitomeOperator, EpitomeSet, PatchShape
from .learning import LearnConfig
from .multiscale import ScaleSchedule, multiscale_learn
from .patches import image_patches, reconstruct_average
from .solvers import omp_batch

# Pilot-calibrated lambda / sqrt(m) per noise level, for patches in [0, 1].
LAMBDA_BY_SIGMA = {10: 0.4, 15: 0.4, 20: 0.4, 25: 0.1, 50: 0.05}


def default_lambda(sigma: float, m: int) -> float:
    keys = sorted(LAMBDA_BY_SIGMA)
    rel = float(np.interp(sigma, keys, [LAMBDA_BY_SIGMA[k] for k in keys]))
    return rel * math.sqrt(m)


@dataclass
class NoiseModel:
    sigma: float
    seed: int = 0

    def __post_init__(self):
        if not self.sigma >= 0:
            raise ValueError("sigma must be >= 0")


def add_gaussian_noise(img, nm: NoiseModel) -> np.ndarray:
    img = np.asarray(img, dtype=np.float64)
    if nm.sigma == 0:
        return img.copy()
    rng = np.random.default_rng(nm.seed)
    return img + nm.sigma * rng.standard_normal(img.shape)


def psnr(a, b, peak: float = 255.0) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"image shapes differ: {a.shape} vs {b.shape}")
    mse = float(np.mean((a - b) ** 2))
    if mse == 0:
        return math.inf
    return 10.0 * math.log10(peak * peak / mse)


@dataclass
class DenoiseConfig:
    C: float = 1.15
    patch: PatchShape = field(default_factory=lambda: PatchShape(8, 8))
    geometry: EpitomeGeometry = field(default_factory=lambda: EpitomeGeometry(20, 15, 15))
    schedule: ScaleSchedule = field(default_factory=lambda: ScaleSchedule(3, 2.0))
    lam: float | None = None  # None: default_lambda(sigma, m)
    fista_iters: int = 20
    stride: int = 2
    seed: int = 0
    blend: float = 0.0
    scale_patches: bool = False
    max_nonzeros: int | None = None

    def __post_init__(self):
        if not self.C > 0:
            raise ValueError("C must be > 0")
        if not 0 <= self.blend <= 1:
            raise ValueError("blend must lie in [0, 1]")

    def learn_config(self, sigma: float) -> LearnConfig:
        lam = self.lam if self.lam is not None else default_lambda(sigma, self.patch.m)
        return LearnConfig(lam=lam, patch=self.patch, geometry=self.geometry,
                           fista_iters=self.fista_iters, seed=self.seed)


@dataclass
class DenoiseResult:
    image: np.ndarray
    epitome: EpitomeSet
    lam: float
    mean_support: float
    seconds: float


def omp_threshold(sigma: float, m: int, C: float) -> float:
    """Residual energy allowed per patch: m * (C * sigma)^2."""
    return m * (C * sigma) ** 2


def denoise_image(y, cfg: DenoiseConfig, sigma: float, epitome: EpitomeSet | None = None,
                  history=None) -> DenoiseResult:
    """Denoise a [0, 255] image with known noise level ``sigma``.

    Learning and coding run on intensities divided by 255.  When
    ``epitome`` is given it is used as is and no learning happens.
    """
    if not sigma > 0:
        raise ValueError("sigma must be > 0")
    t0 = time.perf_counter()
    y = np.asarray(y, dtype=np.float64)
    scale = 255.0
    yn = y / scale
    sig = sigma / scale
    lcfg = cfg.learn_config(sigma)
    if epitome is None:
        epitome = multiscale_learn(yn, cfg.schedule, lcfg, stride=cfg.stride,
                                   scale_patches=cfg.scale_patches, history=history)
    D = EpitomeOperator(epitome.geometry, cfg.patch).phi(epitome.vector)
    Y = image_patches(yn, cfg.patch, 1)
    A = omp_batch(Y, D, omp_threshold(sig, cfg.patch.m, cfg.C), cfg.max_nonzeros)
    est = np.asarray((A.T @ D.T).T)
    out = reconstruct_average(est, yn.shape, cfg.patch)
    if cfg.blend:
        out = (1 - cfg.blend) * out + cfg.blend * yn
    return DenoiseResult(out * scale, epitome, lcfg.lam, A.nnz / Y.shape[1], time.perf_counter() - t0)
