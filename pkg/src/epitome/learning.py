"""Alternating epitome learning.

Minimises, over codes ``A`` and epitome pixels ``E`` with ``D = phi(E)``,

    (1/n) * sum_i [ 0.5 * |x_i - D a_i|^2 + lam * sum_j |d_j| |a_ji| ]

by alternating an exact weighted-lasso code update, a scale renormalisation
and an accelerated projected-gradient update of ``E``.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy import ndimage

from .core import (
    EpitomeGeometry,
    EpitomeOperator,
    EpitomeSet,
    PatchShape,
    column_norms,
)
from .solvers import weighted_lasso_batch

log = logging.getLogger(__name__)

ZERO_NORM = 1e-10


@dataclass
class LearnConfig:
    lam: float
    patch: PatchShape = field(default_factory=lambda: PatchShape(8, 8))
    geometry: EpitomeGeometry | None = None
    outer_iters: int = 20
    fista_iters: int = 20
    step: float | None = None  # None: 1 / power-iteration estimate of |A A^T|
    backtrack: float = 0.5
    accelerated: bool = True
    seed: int = 0
    max_nonzeros: int | None = None

    def __post_init__(self):
        if not self.lam >= 0:
            raise ValueError("lam must be >= 0")
        if self.outer_iters < 1 or self.fista_iters < 1:
            raise ValueError("iteration counts must be >= 1")
        if not 0 < self.backtrack < 1:
            raise ValueError("backtrack factor must lie in (0, 1)")
        if self.step is not None and not self.step > 0:
            raise ValueError("step must be > 0")


def _dense(A) -> np.ndarray:
    return A.toarray() if sp.issparse(A) else np.asarray(A, dtype=np.float64)


def _row_l1(A) -> np.ndarray:
    if sp.issparse(A):
        return np.asarray(abs(A).sum(axis=1)).ravel()
    return np.abs(A).sum(axis=1)


def _times(D, A) -> np.ndarray:
    if sp.issparse(A):
        return np.asarray((A.T @ D.T).T)
    return D @ A


def objective(X, D, A, lam: float) -> float:
    X = np.asarray(X, dtype=np.float64)
    D = np.asarray(D, dtype=np.float64)
    if X.shape[0] != D.shape[0] or D.shape[1] != A.shape[0] or A.shape[1] != X.shape[1]:
        raise ValueError(f"shape mismatch: X{X.shape} D{D.shape} A{A.shape}")
    R = X - _times(D, A)
    fit = 0.5 * np.einsum("ij,ij->", R, R)
    pen = lam * float(column_norms(D) @ _row_l1(A))
    return (fit + pen) / X.shape[1]


def grad_d(X, D, A, lam: float) -> np.ndarray:
    """Gradient of ``0.5 |X - DA|_F^2 + lam sum_j |d_j| |a^j|_1`` in ``D``."""
    X = np.asarray(X, dtype=np.float64)
    D = np.asarray(D, dtype=np.float64)
    R = X - _times(D, A)
    g = -np.asarray(R @ A.T) if sp.issparse(A) else -(R @ A.T)
    return g + D * _delta(D, _row_l1(A), lam)


def _delta(D, row_l1, lam):
    norms = column_norms(D)
    used = row_l1 > 0
    if np.any(norms[used] == 0):
        raise ValueError("zero-norm atom with nonzero code row; zero the row first")
    out = np.zeros_like(norms)
    out[used] = lam * row_l1[used] / norms[used]
    return out


def renormalize(D, A, active=None):
    """Rescale so the smallest (active) atom has unit norm; ``DA`` is unchanged."""
    norms = column_norms(np.asarray(D, dtype=np.float64))
    pool = norms if active is None else norms[active]
    s = pool.min() if pool.size else 0.0
    if not s > 0:
        raise ValueError("degenerate dictionary: smallest atom norm is zero")
    return D / s, A * s


class _DProblem:
    """The D-step objective with ``A`` frozen, via cached second moments."""

    def __init__(self, X, A, lam):
        self.lam = lam
        self.xx = float(np.einsum("ij,ij->", X, X))
        if sp.issparse(A):
            A = sp.csr_matrix(A)
            self.XAt = np.asarray((A @ X.T).T)
            self.AAt = (A @ A.T).toarray()
        else:
            self.XAt = X @ A.T
            self.AAt = A @ A.T
        self.row_l1 = _row_l1(A)

    def value(self, D, DAAt=None):
        if DAAt is None:
            DAAt = D @ self.AAt
        quad = 0.5 * self.xx - np.einsum("ij,ij->", D, self.XAt) + 0.5 * np.einsum("ij,ij->", D, DAAt)
        return quad + self.lam * float(column_norms(D) @ self.row_l1)

    def value_and_grad(self, D):
        DAAt = D @ self.AAt
        g = DAAt - self.XAt + D * _delta(D, self.row_l1, self.lam)
        return self.value(D, DAAt), g

    def lipschitz(self, seed=0, iters=30):
        p = self.AAt.shape[0]
        v = np.random.default_rng(seed).standard_normal(p)
        est = 0.0
        for _ in range(iters):
            w = self.AAt @ v
            nrm = np.linalg.norm(w)
            if nrm == 0:
                return 1.0
            est, v = nrm / np.linalg.norm(v), w / nrm
        return max(est, 1e-12)


def _projected_step(op, prob, e, De, fe, ge, L, shrink):
    # Backtrack until the quadratic upper model holds at the projected point.
    for _ in range(200):
        z = e - op.phi_star(ge) / L
        Dz = op.phi(z)
        diff = Dz - De
        fz = prob.value(Dz)
        model = fe + np.einsum("ij,ij->", ge, diff) + 0.5 * L * np.einsum("ij,ij->", diff, diff)
        if fz <= model + 1e-13 * (abs(fe) + 1.0):
            return z, Dz, fz, L
        L /= shrink
    raise FloatingPointError("line search failed to find a descent step")


def update_d_fista(X, A, e, op, cfg: LearnConfig, trace=None) -> np.ndarray:
    """Accelerated projected gradient on the D-step objective.

    ``e`` is the epitome parameter vector; the iterate stays in the range of
    ``op.phi`` by construction.  An accelerated step that would increase the
    objective is replaced by a plain projected step from the last iterate.
    """
    prob = _DProblem(np.asarray(X, dtype=np.float64), A, cfg.lam)
    L = 1.0 / cfg.step if cfg.step is not None else prob.lipschitz(cfg.seed)
    x = np.array(e, dtype=np.float64)
    Dx = op.phi(x)
    fx = prob.value(Dx)
    if trace is not None:
        trace.append(fx)
    y, t = x, 1.0
    for _ in range(cfg.fista_iters):
        Dy = op.phi(y)
        fy, gy = prob.value_and_grad(Dy)
        if not np.all(np.isfinite(gy)):
            raise FloatingPointError("non-finite gradient in D-step")
        z, Dz, fz, L = _projected_step(op, prob, y, Dy, fy, gy, L, cfg.backtrack)
        if fz > fx:
            _, gx = prob.value_and_grad(Dx)
            z, Dz, fz, L = _projected_step(op, prob, x, Dx, fx, gx, L, cfg.backtrack)
            t = 1.0
            y_next = z
        elif cfg.accelerated:
            t_next = 0.5 * (1.0 + math.sqrt(1.0 + 4.0 * t * t))
            y_next = z + ((t - 1.0) / t_next) * (z - x)
            t = t_next
        else:
            y_next = z
        x, Dx, fx, y = z, Dz, fz, y_next
        if trace is not None:
            trace.append(fx)
    return x


def lowpass_noise(geom: EpitomeGeometry, seed: int, sigma: float = 1.0, radius: int = 2) -> np.ndarray:
    """I.i.d. Gaussian pixels smoothed by a normalised (2r+1)^2 Gaussian kernel."""
    rng = np.random.default_rng(seed)
    raw = rng.standard_normal((geom.count, geom.height, geom.width))
    ax = np.arange(-radius, radius + 1)
    k1 = np.exp(-0.5 * (ax / sigma) ** 2)
    kernel = np.outer(k1, k1)
    kernel /= kernel.sum()
    return np.stack([ndimage.convolve(img, kernel, mode="reflect") for img in raw])


def init_epitome(geom: EpitomeGeometry, shape: PatchShape | None, seed: int,
                 value_range: tuple[float, float] = (0.0, 1.0)) -> EpitomeSet:
    if shape is not None:
        EpitomeOperator(geom, shape)  # geometry check
    smooth = lowpass_noise(geom, seed)
    lo, hi = value_range
    span = smooth.max() - smooth.min()
    if span > 0:
        smooth = (smooth - smooth.min()) / span
    else:
        smooth = np.full_like(smooth, 0.5)
    return EpitomeSet(lo + (hi - lo) * smooth, {"seed": seed})


@dataclass
class IterationRecord:
    iteration: int
    objective: float
    mean_support: float
    min_norm: float
    max_norm: float

    def tsv(self) -> str:
        return (f"{self.iteration}\t{self.objective:.12g}\t{self.mean_support:.4f}"
                f"\t{self.min_norm:.6g}\t{self.max_norm:.6g}")


def learn_params(X, e0, op, cfg: LearnConfig, history=None, prefix="", check=False):
    """Run ``cfg.outer_iters`` alternations on the parameter vector ``e0``.

    Works for any operator exposing ``phi``/``phi_star``/``project``; returns
    ``(e, A)``.  With ``check`` set, asserts the dictionary stays in the
    range of the operator after every D-step.
    """
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] < 1 or X.shape[0] != op.m:
        raise ValueError(f"training set must be {op.m} x n, got {X.shape}")
    if not np.all(np.isfinite(X)):
        raise ValueError("training set must be finite")
    e = np.array(e0, dtype=np.float64)
    A = None
    for it in range(1, cfg.outer_iters + 1):
        D = op.phi(e)
        norms = column_norms(D)
        active = norms > ZERO_NORM
        if not active.any():
            raise ValueError("degenerate epitome: every atom has zero norm")
        A = weighted_lasso_batch(X, D, cfg.lam, cfg.max_nonzeros, active=active)
        s = norms[active].min()
        e = e / s
        A = A * s
        e = update_d_fista(X, A, e, op, cfg)
        D = op.phi(e)
        if check and not np.allclose(op.project(D), D, rtol=0, atol=1e-12 * (1 + np.abs(D).max())):
            raise AssertionError("dictionary left the range of phi")
        norms = column_norms(D)
        rec = IterationRecord(it, objective(X, D, A, cfg.lam), A.nnz / X.shape[1],
                              float(norms.min()), float(norms.max()))
        log.info("%s%s", prefix, rec.tsv())
        if history is not None:
            history.append(rec)
    return e, A


def learn(X, init: EpitomeSet, cfg: LearnConfig, history=None, prefix="") -> EpitomeSet:
    op = EpitomeOperator(init.geometry, cfg.patch)
    e, _ = learn_params(X, init.vector, op, cfg, history=history, prefix=prefix)
    return EpitomeSet.from_vector(e, init.geometry, {**init.meta, "lambda": cfg.lam})
