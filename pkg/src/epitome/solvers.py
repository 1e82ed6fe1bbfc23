"""Sparse decomposition: lasso, weighted lasso and orthogonal matching pursuit.

The lasso is solved exactly with a LARS homotopy on the Gram matrix.  The
weighted problem

    min_a 0.5 * |x - D a|^2 + lam * sum_j |d_j| |a_j|

is reduced to a plain lasso on the column-normalised dictionary ``D / |d_j|``
and the solution is mapped back by dividing by the column norms.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from . import _kernels
from .core import column_norms


@dataclass(frozen=True)
class SparseCode:
    indices: np.ndarray
    values: np.ndarray
    p: int

    def __post_init__(self):
        idx = np.asarray(self.indices, dtype=np.int64)
        val = np.asarray(self.values, dtype=np.float64)
        keep = val != 0.0
        idx, val = idx[keep], val[keep]
        order = np.argsort(idx, kind="stable")
        idx, val = idx[order], val[order]
        if idx.size and (idx[-1] >= self.p or idx[0] < 0 or np.any(np.diff(idx) <= 0)):
            raise ValueError("sparse code indices must be unique and within [0, p)")
        object.__setattr__(self, "indices", idx)
        object.__setattr__(self, "values", val)

    def to_dense(self) -> np.ndarray:
        out = np.zeros(self.p)
        out[self.indices] = self.values
        return out

    @property
    def nnz(self) -> int:
        return self.indices.size


@dataclass(frozen=True)
class LassoSettings:
    lam: float
    max_nonzeros: int | None = None
    tol: float = 1e-8

    def __post_init__(self):
        if not self.lam >= 0:
            raise ValueError(f"lambda must be >= 0, got {self.lam}")
        if not self.tol > 0:
            raise ValueError(f"tol must be > 0, got {self.tol}")
        if self.max_nonzeros is not None and self.max_nonzeros < 0:
            raise ValueError("max_nonzeros must be >= 0")


def _finite(*arrays):
    for a in arrays:
        if not np.all(np.isfinite(a)):
            raise ValueError("non-finite input")


def _cap(max_nonzeros, m, p):
    cap = min(m, p)
    if max_nonzeros is not None:
        cap = min(cap, int(max_nonzeros))
    return cap


def set_threads(n: int | None = None) -> int:
    """Bound the worker threads used by the batch solvers.

    Defaults to ``$EPITOME_THREADS`` when set, otherwise leaves numba's
    default in place.
    """
    import numba

    if n is None:
        env = os.environ.get("EPITOME_THREADS")
        if not env:
            return numba.get_num_threads()
        n = int(env)
    n = max(1, min(int(n), numba.config.NUMBA_NUM_THREADS))
    numba.set_num_threads(n)
    return n


def lasso(x, D, settings: LassoSettings) -> SparseCode:
    x = np.asarray(x, dtype=np.float64)
    D = np.asarray(D, dtype=np.float64)
    _finite(x, D)
    m, p = D.shape
    cap = _cap(settings.max_nonzeros, m, p)
    idx = np.empty(max(cap, 1), dtype=np.int64)
    val = np.empty(max(cap, 1))
    k, _ = _kernels.lars_lasso(D.T @ D, D.T @ x, float(settings.lam), cap, idx, val)
    return SparseCode(idx[:k], val[:k], p)


def weighted_lasso(x, D, settings: LassoSettings) -> SparseCode:
    D = np.asarray(D, dtype=np.float64)
    norms = column_norms(D)
    if np.any(norms <= 0):
        raise ValueError("weighted lasso needs every column norm > 0; zero the atom first")
    code = lasso(x, D / norms, settings)
    return SparseCode(code.indices, code.values / norms[code.indices], code.p)


# Columns per compiled call; bounds the dense p x CHUNK correlation block.
CHUNK = 4096


def _stack(blocks, p) -> sp.csc_matrix:
    if not blocks:
        return sp.csc_matrix((p, 0))
    return sp.csc_matrix(sp.hstack(blocks, format="csc"))


def _assemble(idx, val, sizes, p) -> sp.csc_matrix:
    n, cap = idx.shape
    indptr = np.concatenate([[0], np.cumsum(sizes)])
    mask = np.arange(cap)[None, :] < sizes[:, None]
    rows, vals = idx[mask], val[mask]
    # Rows per column arrive in selection order; csc wants them sorted.
    A = sp.csc_matrix((vals, rows, indptr), shape=(p, n))
    A.sort_indices()
    A.eliminate_zeros()
    return A


def lasso_batch(X, D, lam: float, max_nonzeros=None, gram=None) -> sp.csc_matrix:
    """Solve one lasso per column of ``X``; returns a sparse p x n code matrix."""
    X = np.asarray(X, dtype=np.float64)
    D = np.asarray(D, dtype=np.float64)
    _finite(X, D)
    m, p = D.shape
    cap = _cap(max_nonzeros, m, p)
    G = D.T @ D if gram is None else gram
    blocks = []
    for lo in range(0, X.shape[1], CHUNK):
        C = np.asfortranarray(D.T @ X[:, lo:lo + CHUNK])
        idx, val, sizes, _ = _kernels.lars_lasso_batch(G, C, float(lam), max(cap, 0))
        blocks.append(_assemble(idx, val, sizes, p))
    return _stack(blocks, p)


def weighted_lasso_batch(X, D, lam: float, max_nonzeros=None, active=None) -> sp.csc_matrix:
    """Weighted lasso per column of ``X``.

    ``active`` optionally masks atoms out of the problem (their rows stay
    zero); this is how zero-norm atoms are handled by the learner.
    """
    D = np.asarray(D, dtype=np.float64)
    norms = column_norms(D)
    if active is None:
        active = norms > 0
    if np.any(norms[active] <= 0):
        raise ValueError("weighted lasso needs every active column norm > 0")
    cols = np.flatnonzero(active)
    sub = lasso_batch(X, D[:, cols] / norms[cols], lam, max_nonzeros)
    sub = sp.diags(1.0 / norms[cols]) @ sub
    if cols.size == D.shape[1]:
        return sp.csc_matrix(sub)
    sub = sp.coo_matrix(sub)
    return sp.csc_matrix((sub.data, (cols[sub.row], sub.col)), shape=(D.shape[1], sub.shape[1]))


def omp(y, D, eps: float, max_nonzeros=None, return_residuals=False):
    """Greedy sparse approximation until ``|y - D a|^2 <= eps``.

    Atoms are compared after l2 normalisation; coefficients refer to the
    original atoms.  Zero-norm atoms are never selected.
    """
    if eps < 0:
        raise ValueError(f"eps must be >= 0, got {eps}")
    y = np.asarray(y, dtype=np.float64)
    D = np.asarray(D, dtype=np.float64)
    _finite(y, D)
    m, p = D.shape
    norms = column_norms(D)
    usable = norms > 0
    Dn = D / np.where(usable, norms, 1.0)
    cap = _cap(max_nonzeros, m, p)
    idx = np.empty(max(cap, 1), dtype=np.int64)
    val = np.empty(max(cap, 1))
    res = np.empty(max(cap, 1))
    k = _kernels.omp_gram(Dn.T @ Dn, Dn.T @ y, float(y @ y), float(eps), cap, usable, idx, val, res)
    code = SparseCode(idx[:k], val[:k] / norms[idx[:k]], p)
    if return_residuals:
        return code, res[:k].copy()
    return code


def omp_batch(Y, D, eps: float, max_nonzeros=None) -> sp.csc_matrix:
    if eps < 0:
        raise ValueError(f"eps must be >= 0, got {eps}")
    Y = np.asarray(Y, dtype=np.float64)
    D = np.asarray(D, dtype=np.float64)
    _finite(Y, D)
    m, p = D.shape
    norms = column_norms(D)
    usable = norms > 0
    Dn = D / np.where(usable, norms, 1.0)
    cap = _cap(max_nonzeros, m, p)
    G = Dn.T @ Dn
    blocks = []
    for lo in range(0, Y.shape[1], CHUNK):
        Yc = Y[:, lo:lo + CHUNK]
        C = np.asfortranarray(Dn.T @ Yc)
        yy = np.einsum("ij,ij->j", Yc, Yc)
        idx, val, sizes = _kernels.omp_batch(G, C, yy, float(eps), cap, usable)
        blocks.append(_assemble(idx, val, sizes, p))
    A = _stack(blocks, p)
    return sp.csc_matrix(sp.diags(1.0 / np.where(usable, norms, 1.0)) @ A)


def kkt_violation(x, D, alpha, lam, weights=None) -> float:
    """Largest violation of the (weighted) lasso optimality conditions.

    Off the support the correlation must stay within ``lam * w_j``; on the
    support it must equal ``lam * w_j * sign(alpha_j)``.
    """
    D = np.asarray(D, dtype=np.float64)
    alpha = np.asarray(alpha, dtype=np.float64)
    w = np.ones(D.shape[1]) if weights is None else np.asarray(weights, dtype=np.float64)
    corr = D.T @ (np.asarray(x, dtype=np.float64) - D @ alpha)
    on = alpha != 0
    viol_off = np.abs(corr[~on]) - lam * w[~on]
    viol_on = np.abs(corr[on] - lam * w[on] * np.sign(alpha[on]))
    return float(max(viol_off.max(initial=0.0), viol_on.max(initial=0.0), 0.0))
