import numpy as np
import pytest
import scipy.sparse as sp

from epitome.core import EpitomeGeometry, EpitomeOperator, EpitomeSet, FlatOperator, PatchShape, column_norms
from epitome.learning import (
    LearnConfig,
    _DProblem,
    _projected_step,
    grad_d,
    init_epitome,
    learn,
    learn_params,
    lowpass_noise,
    objective,
    renormalize,
    update_d_fista,
)
from epitome.patches import image_patches
from epitome.solvers import kkt_violation, weighted_lasso_batch

from oracles import central_differences, objective_by_terms


def sparse_codes(rng, p, n, density=0.3):
    return rng.standard_normal((p, n)) * (rng.random((p, n)) < density)


def boat_patches(boat, n, seed, shape=PatchShape(8, 8)):
    X = image_patches(boat / 255.0, shape, 1)
    idx = np.random.default_rng(seed).choice(X.shape[1], n, replace=False)
    return X[:, np.sort(idx)]


class TestObjective:
    def test_zero_codes(self, rng):
        X = rng.standard_normal((5, 7))
        D = rng.standard_normal((5, 4))
        assert objective(X, D, np.zeros((4, 7)), 0.3) == pytest.approx(0.5 * np.sum(X * X) / 7, rel=1e-15)

    def test_exact_fit_without_penalty(self, rng):
        D = rng.standard_normal((5, 4))
        A = rng.standard_normal((4, 6))
        assert objective(D @ A, D, A, 0.0) == pytest.approx(0.0, abs=1e-28)

    def test_matches_termwise_sum(self, rng):
        X = rng.standard_normal((4, 6))
        D = rng.standard_normal((4, 5))
        A = sparse_codes(rng, 5, 6)
        ref = objective_by_terms(X, D, A, 0.7)
        assert objective(X, D, A, 0.7) == pytest.approx(ref, rel=1e-12)
        assert objective(X, D, sp.csc_matrix(A), 0.7) == pytest.approx(ref, rel=1e-12)

    def test_shape_mismatch(self, rng):
        with pytest.raises(ValueError):
            objective(np.zeros((3, 4)), np.zeros((3, 2)), np.zeros((3, 4)), 0.1)


class TestGradient:
    def test_zero_codes(self, rng):
        G = grad_d(rng.standard_normal((4, 5)), rng.standard_normal((4, 3)), np.zeros((3, 5)), 0.5)
        assert np.all(G == 0)

    def test_least_squares_gradient_without_penalty(self, rng):
        X, D, A = rng.standard_normal((4, 5)), rng.standard_normal((4, 3)), rng.standard_normal((3, 5))
        np.testing.assert_allclose(grad_d(X, D, A, 0.0), -(X - D @ A) @ A.T, rtol=1e-14)

    @pytest.mark.parametrize("seed", range(4))
    def test_finite_differences(self, seed):
        rng = np.random.default_rng(seed)
        m, p, n = 5, 7, 9
        X, D = rng.standard_normal((m, n)), rng.standard_normal((m, p))
        A = sparse_codes(rng, p, n)
        A[1] = 0.0
        lam = 0.4
        num = central_differences(lambda Dv: n * objective(X, Dv, A, lam), D)
        G = grad_d(X, D, sp.csc_matrix(A), lam)
        assert np.linalg.norm(G - num) <= 1e-5 * np.linalg.norm(num)

    def test_zero_atom_with_codes_rejected(self, rng):
        D = rng.standard_normal((3, 3))
        D[:, 1] = 0
        with pytest.raises(ValueError):
            grad_d(rng.standard_normal((3, 2)), D, np.ones((3, 2)), 0.1)

    def test_zero_atom_with_zero_row_allowed(self, rng):
        D = rng.standard_normal((3, 3))
        D[:, 1] = 0
        A = np.ones((3, 2))
        A[1] = 0
        assert np.all(np.isfinite(grad_d(rng.standard_normal((3, 2)), D, A, 0.1)))


class TestRenormalize:
    def test_already_normalised(self, rng):
        D = rng.standard_normal((4, 5))
        D /= column_norms(D).min()
        A = rng.standard_normal((5, 3))
        D2, A2 = renormalize(D, A)
        np.testing.assert_allclose(D2, D, rtol=1e-15)
        np.testing.assert_allclose(A2, A, rtol=1e-15)

    def test_scale_class(self, rng):
        D, A = rng.standard_normal((4, 5)), rng.standard_normal((5, 3))
        D1, A1 = renormalize(D, A)
        D5, A5 = renormalize(5 * D, A / 5)
        np.testing.assert_allclose(D5, D1, rtol=1e-14)
        np.testing.assert_allclose(A5, A1, rtol=1e-14)

    def test_objective_and_product_unchanged(self, rng):
        for _ in range(10):
            X, D = rng.standard_normal((6, 8)), 3 * rng.standard_normal((6, 4))
            A = sparse_codes(rng, 4, 8)
            D2, A2 = renormalize(D, A)
            assert column_norms(D2).min() == pytest.approx(1.0, abs=1e-12)
            np.testing.assert_allclose(D2 @ A2, D @ A, rtol=1e-13, atol=1e-14)
            assert objective(X, D2, A2, 0.3) == pytest.approx(objective(X, D, A, 0.3), rel=1e-12)

    def test_stays_in_range(self, rng):
        op = EpitomeOperator(EpitomeGeometry(1, 9, 9), PatchShape(4, 4))
        D = op.phi(rng.standard_normal(op.size))
        D2, _ = renormalize(D, np.ones((op.p, 1)))
        np.testing.assert_allclose(op.project(D2), D2, atol=1e-13)

    def test_zero_atom_rejected(self):
        with pytest.raises(ValueError):
            renormalize(np.zeros((3, 2)), np.ones((2, 1)))


class TestDStep:
    def test_exact_fit_is_fixed_point(self, rng):
        op = EpitomeOperator(EpitomeGeometry(1, 8, 8), PatchShape(4, 4))
        e = rng.standard_normal(op.size)
        A = sparse_codes(rng, op.p, 30)
        X = op.phi(e) @ A
        cfg = LearnConfig(lam=0.0, patch=op.shape, fista_iters=10)
        np.testing.assert_allclose(update_d_fista(X, A, e, op, cfg), e, atol=1e-10)

    def test_small_plain_step_descends(self, rng):
        op = EpitomeOperator(EpitomeGeometry(2, 7, 7), PatchShape(3, 3))
        X = rng.standard_normal((op.m, 40))
        A = sparse_codes(rng, op.p, 40)
        e = rng.standard_normal(op.size)
        prob = _DProblem(X, A, 0.2)
        f0, g = prob.value_and_grad(op.phi(e))
        e1 = e - 1e-4 * op.phi_star(g)
        assert prob.value(op.phi(e1)) < f0

    def test_projected_step_is_line_search_safe(self, rng):
        op = EpitomeOperator(EpitomeGeometry(1, 6, 6), PatchShape(3, 3))
        X = rng.standard_normal((op.m, 20))
        A = sparse_codes(rng, op.p, 20)
        e = rng.standard_normal(op.size)
        prob = _DProblem(X, A, 0.2)
        D = op.phi(e)
        f0, g = prob.value_and_grad(D)
        _, _, f1, L = _projected_step(op, prob, e, D, f0, g, 1e-3, 0.5)
        assert f1 <= f0
        assert L >= 1e-3

    def test_monotone_on_boat_patches(self, boat):
        X = boat_patches(boat, 500, 3)
        E = init_epitome(EpitomeGeometry(1, 16, 16), PatchShape(8, 8), 1, (0.0, 1.0))
        op = EpitomeOperator(E.geometry, PatchShape(8, 8))
        A = weighted_lasso_batch(X, op.phi(E.vector), 0.4)
        trace = []
        for accelerated in (True, False):
            trace.clear()
            cfg = LearnConfig(lam=0.4, fista_iters=30, accelerated=accelerated)
            update_d_fista(X, A, E.vector, op, cfg, trace=trace)
            assert np.all(np.diff(trace) <= 1e-12 * abs(trace[0]))
            assert trace[-1] < trace[0]


class TestLearn:
    def test_rank_one_fit(self, rng):
        x = rng.standard_normal((9, 1))
        init = EpitomeSet(rng.standard_normal((1, 3, 3)))
        cfg = LearnConfig(lam=0.0, patch=PatchShape(3, 3), outer_iters=3, fista_iters=50)
        E = learn(x, init, cfg)
        d = E.vector / np.linalg.norm(E.vector)
        resid = x[:, 0] - d * (d @ x[:, 0])
        assert np.linalg.norm(resid) <= 1e-8 * np.linalg.norm(x)

    def test_monotone_and_in_range(self, boat):
        X = boat_patches(boat, 1000, 11)
        geom, shape = EpitomeGeometry(1, 20, 20), PatchShape(8, 8)
        init = init_epitome(geom, shape, 2, (0.0, 1.0))
        op = EpitomeOperator(geom, shape)
        hist = []
        e, A = learn_params(X, init.vector, op, LearnConfig(lam=0.4, patch=shape, outer_iters=20),
                            history=hist, check=True)
        obj = np.array([h.objective for h in hist])
        assert np.all(np.diff(obj) <= 1e-9)
        assert obj[-1] < obj[0]
        D = op.phi(e)
        np.testing.assert_allclose(op.project(D), D, atol=1e-12)

    def test_codes_satisfy_kkt_after_a_step(self, boat):
        X = boat_patches(boat, 200, 5)
        op = EpitomeOperator(EpitomeGeometry(1, 12, 12), PatchShape(8, 8))
        e, _ = learn_params(X, init_epitome(op.geometry, op.shape, 0).vector, op,
                            LearnConfig(lam=0.3, outer_iters=2))
        D = op.phi(e)
        A = weighted_lasso_batch(X, D, 0.3).toarray()
        w = column_norms(D)
        worst = max(kkt_violation(X[:, i], D, A[:, i], 0.3, w) for i in range(X.shape[1]))
        assert worst <= 1e-9

    def test_renormalised_min_norm(self, boat):
        X = boat_patches(boat, 200, 6)
        op = EpitomeOperator(EpitomeGeometry(2, 10, 10), PatchShape(8, 8))
        hist = []
        learn_params(X, init_epitome(op.geometry, op.shape, 0).vector, op,
                     LearnConfig(lam=0.3, outer_iters=3), history=hist)
        # one D-step moves the norms only slightly away from the renormalised value 1
        assert all(0.5 < h.min_norm < 2 for h in hist)

    def test_flat_regime_matches_constrained_formulation(self, boat):
        # epitomes of patch size: normalising the learned atoms and rescaling the
        # codes gives the same value under the unit-norm l1 objective
        X = boat_patches(boat, 300, 9)
        shape = PatchShape(8, 8)
        op = EpitomeOperator(EpitomeGeometry(12, 8, 8), shape)
        e, A = learn_params(X, init_epitome(op.geometry, shape, 4).vector, op,
                            LearnConfig(lam=0.3, patch=shape, outer_iters=4))
        D = op.phi(e)
        A = A.toarray()
        g = column_norms(D)
        weighted = objective(X, D, A, 0.3)
        Dn, An = D / g, A * g[:, None]
        R = X - Dn @ An
        plain = (0.5 * np.sum(R * R) + 0.3 * np.abs(An).sum()) / X.shape[1]
        assert plain == pytest.approx(weighted, rel=1e-12)
        np.testing.assert_allclose(column_norms(Dn), 1.0, rtol=1e-14)

    def test_flat_operator_runs_plain_dictionary_learning(self, rng):
        X = rng.standard_normal((6, 40))
        op = FlatOperator(6, 10)
        e, A = learn_params(X, rng.standard_normal(60), op, LearnConfig(lam=0.2, outer_iters=3))
        assert A.shape == (10, 40)
        assert np.isfinite(e).all()


class TestInit:
    def test_deterministic(self):
        g = EpitomeGeometry(3, 10, 12)
        assert init_epitome(g, PatchShape(4, 4), 5) == init_epitome(g, PatchShape(4, 4), 5)

    def test_seed_matters(self):
        g = EpitomeGeometry(1, 10, 10)
        a, b = init_epitome(g, None, 1), init_epitome(g, None, 2)
        assert np.linalg.norm(a.vector - b.vector) > 0

    def test_value_range(self):
        E = init_epitome(EpitomeGeometry(2, 9, 9), None, 0, (-1.0, 3.0))
        assert E.vector.min() == pytest.approx(-1.0)
        assert E.vector.max() == pytest.approx(3.0)

    def test_lowpass_contracts_variance(self):
        g = EpitomeGeometry(1, 40, 40)
        ratios = [lowpass_noise(g, s).var() for s in range(50)]
        # i.i.d. unit-variance pixels; the smoothed field is far below 1
        assert max(ratios) < 0.5
        assert np.mean(ratios) < 1.0

    def test_incompatible_geometry(self):
        with pytest.raises(ValueError):
            init_epitome(EpitomeGeometry(1, 5, 5), PatchShape(6, 6), 0)


def test_config_validation():
    with pytest.raises(ValueError):
        LearnConfig(lam=-1)
    with pytest.raises(ValueError):
        LearnConfig(lam=1, backtrack=1.0)
    with pytest.raises(ValueError):
        LearnConfig(lam=1, outer_iters=0)
