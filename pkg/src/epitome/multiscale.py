"""Coarse-to-fine epitome learning: learn small, upscale, learn again."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import EpitomeGeometry, EpitomeSet, GeometryError, PatchShape
from .learning import LearnConfig, init_epitome, learn
from .patches import image_patches


@dataclass
class ScaleSchedule:
    n_scales: int = 3
    ratio: float = 2.0
    iters: tuple[int, ...] = field(default=())

    def __post_init__(self):
        if self.n_scales < 1:
            raise ValueError("n_scales must be >= 1")
        if not self.ratio > 1:
            raise ValueError("ratio must be > 1")
        if not self.iters:
            self.iters = (20,) + (5,) * (self.n_scales - 1)
        self.iters = tuple(int(i) for i in self.iters)
        if len(self.iters) != self.n_scales or min(self.iters) < 1:
            raise ValueError("need one positive iteration count per scale")

    def factor(self, k: int) -> float:
        """Image scale at 1-based scale index ``k``."""
        return self.ratio ** -(self.n_scales - k)


def _area_weights(n_in: int, n_out: int) -> np.ndarray:
    # Output cell i covers [i, i+1) * n_in / n_out of the input axis.
    edges = np.arange(n_out + 1) * (n_in / n_out)
    lo = np.arange(n_in)
    W = np.minimum(edges[1:, None], lo[None, :] + 1) - np.maximum(edges[:-1, None], lo[None, :])
    W = np.clip(W, 0.0, None)
    return W / W.sum(axis=1, keepdims=True)


def _linear_weights(n_in: int, n_out: int) -> np.ndarray:
    # Pixel-centre aligned linear interpolation, clamped at the borders.
    src = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
    src = np.clip(src, 0.0, n_in - 1)
    i0 = np.floor(src).astype(int)
    i1 = np.minimum(i0 + 1, n_in - 1)
    frac = src - i0
    W = np.zeros((n_out, n_in))
    W[np.arange(n_out), i0] += 1.0 - frac
    W[np.arange(n_out), i1] += frac
    return W


def resize_area(img, out_shape) -> np.ndarray:
    img = np.asarray(img, dtype=np.float64)
    return _area_weights(img.shape[0], out_shape[0]) @ img @ _area_weights(img.shape[1], out_shape[1]).T


def resize_linear(img, out_shape) -> np.ndarray:
    img = np.asarray(img, dtype=np.float64)
    return _linear_weights(img.shape[0], out_shape[0]) @ img @ _linear_weights(img.shape[1], out_shape[1]).T


def downscale_image(img, factor: float, min_shape: PatchShape | None = None) -> np.ndarray:
    if not 0 < factor <= 1:
        raise ValueError(f"downscale factor must lie in (0, 1], got {factor}")
    img = np.asarray(img, dtype=np.float64)
    if factor == 1:
        return img.copy()
    out = (max(1, round(img.shape[0] * factor)), max(1, round(img.shape[1] * factor)))
    if min_shape is not None and (out[0] < min_shape.height or out[1] < min_shape.width):
        raise GeometryError(f"downscaled image {out} smaller than patch")
    return resize_area(img, out)


def upscale_epitome(E: EpitomeSet, factor: float = 1.0, size: tuple[int, int] | None = None) -> EpitomeSet:
    """Bilinear upscaling of every epitome, to ``round(dims * factor)`` or ``size``."""
    if not factor >= 1:
        raise ValueError(f"upscale factor must be >= 1, got {factor}")
    g = E.geometry
    if size is None:
        size = (round(g.height * factor), round(g.width * factor))
    if size == (g.height, g.width):
        return EpitomeSet(E.pixels.copy(), dict(E.meta))
    return EpitomeSet(np.stack([resize_linear(img, size) for img in E.pixels]), dict(E.meta))


def scale_plan(sched: ScaleSchedule, geom: EpitomeGeometry, patch: PatchShape, scale_patches=False):
    """Per-scale (image factor, epitome geometry, patch shape).

    The final scale uses the requested geometry; coarser epitomes shrink by
    the image factor but never below the patch size.
    """
    plan = []
    for k in range(1, sched.n_scales + 1):
        f = sched.factor(k)
        if scale_patches:
            ps = PatchShape(max(1, round(patch.height * f)), max(1, round(patch.width * f)))
        else:
            ps = patch
        g = EpitomeGeometry(geom.count,
                            max(ps.height, round(geom.height * f)),
                            max(ps.width, round(geom.width * f)))
        plan.append((f, g, ps))
    return plan


def multiscale_learn(img, sched: ScaleSchedule, cfg: LearnConfig, init: EpitomeSet | None = None,
                     stride: int = 1, scale_patches: bool = False, history=None) -> EpitomeSet:
    """Learn an epitome on progressively finer versions of ``img``.

    ``cfg.geometry`` is the final geometry; ``cfg.patch`` the final patch
    shape.  ``history`` (if given) receives ``(scale, record)`` pairs.
    """
    if cfg.geometry is None and init is None:
        raise ValueError("need a target epitome geometry")
    geom = cfg.geometry or init.geometry
    plan = scale_plan(sched, geom, cfg.patch, scale_patches)
    E = init
    for k, ((f, g, ps), iters) in enumerate(zip(plan, sched.iters), start=1):
        Ik = downscale_image(img, f, min_shape=ps)
        Xk = image_patches(Ik, ps, stride)
        if E is None:
            E = init_epitome(g, ps, cfg.seed, (float(Xk.min()), float(Xk.max())))
        else:
            E = upscale_epitome(E, size=(g.height, g.width))
        step_cfg = LearnConfig(**{**cfg.__dict__, "patch": ps, "geometry": g, "outer_iters": iters})
        recs = [] if history is not None else None
        E = learn(Xk, E, step_cfg, history=recs, prefix=f"{k}\t")
        if history is not None:
            history.extend((k, r) for r in recs)
    return E
