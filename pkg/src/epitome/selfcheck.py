"""Fast numerical self-tests exposed through ``epitome check``."""

from __future__ import annotations

import numpy as np

from .core import EpitomeGeometry, EpitomeOperator, PatchShape
from .learning import grad_d, objective
from .solvers import LassoSettings, column_norms, kkt_violation, lasso, weighted_lasso


def check_operator(rng, trials=50):
    worst = 0.0
    for _ in range(trials):
        ph, pw = rng.integers(1, 8, size=2)
        g = EpitomeGeometry(int(rng.integers(1, 4)), int(ph + rng.integers(0, 10)), int(pw + rng.integers(0, 10)))
        op = EpitomeOperator(g, PatchShape(int(ph), int(pw)))
        e = rng.standard_normal(g.size)
        D = rng.standard_normal((op.m, op.p))
        PD = op.project(D)
        worst = max(
            worst,
            np.abs(op.phi_star(op.phi(e)) - e).max() / np.abs(e).max(),
            np.abs(op.project(PD) - PD).max() / np.abs(PD).max(),
            abs(np.sum((D - PD) ** 2) + np.sum(PD ** 2) - np.sum(D ** 2)) / np.sum(D ** 2),
        )
    return worst <= 1e-10, f"max relative defect {worst:.2e}"


def check_gradient(rng, trials=5):
    worst = 0.0
    for _ in range(trials):
        m, p, n = 6, 9, 12
        X = rng.standard_normal((m, n))
        D = rng.standard_normal((m, p))
        A = rng.standard_normal((p, n)) * (rng.random((p, n)) < 0.4)
        A[rng.integers(p)] = 0.0
        lam = 0.3
        G = grad_d(X, D, A, lam)
        h = 1e-6
        num = np.zeros_like(D)
        for i in range(m):
            for j in range(p):
                Dp, Dm = D.copy(), D.copy()
                Dp[i, j] += h
                Dm[i, j] -= h
                num[i, j] = n * (objective(X, Dp, A, lam) - objective(X, Dm, A, lam)) / (2 * h)
        worst = max(worst, np.linalg.norm(G - num) / np.linalg.norm(num))
    return worst <= 1e-5, f"max relative error {worst:.2e}"


def check_equivalence(rng, trials=20):
    worst = 0.0
    for _ in range(trials):
        m, p = int(rng.integers(3, 12)), int(rng.integers(3, 20))
        D = rng.standard_normal((m, p)) * rng.uniform(0.2, 3.0, size=p)
        x = rng.standard_normal(m)
        gamma = column_norms(D)
        lam = 0.2 * np.abs((D / gamma).T @ x).max()
        a = weighted_lasso(x, D, LassoSettings(lam)).to_dense()
        a2 = lasso(x, D / gamma, LassoSettings(lam)).to_dense()
        worst = max(worst, np.abs(gamma * a - a2).max(), kkt_violation(x, D, a, lam, gamma))
    return worst <= 1e-8, f"max defect {worst:.2e}"


CHECKS = {
    "operator": check_operator,
    "gradient": check_gradient,
    "weighted-lasso": check_equivalence,
}


def run_checks(seed=0):
    rng = np.random.default_rng(seed)
    return [(name, *fn(rng)) for name, fn in CHECKS.items()]
