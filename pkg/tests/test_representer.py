import numpy as np
import pytest

from paris.exceptions import NotConverged
from paris.representer import (
    LAMBDA_FLOOR,
    build_influence_matrix,
    build_state,
    build_t_cache,
    compute_alpha,
    compute_alpha_cg,
    estimate_lambda,
    fit_ridge_primal,
    predict,
)


def random_problem(rng, n, d, n_val=5):
    phi = rng.standard_normal((n, d))
    y = rng.standard_normal(n)
    phi_val = rng.standard_normal((n_val, d))
    y_val = rng.standard_normal(n_val)
    return phi, y, phi_val, y_val


# -------------------------------------------------------------------- ridge


def test_ridge_identity_features():
    chol, w = fit_ridge_primal(np.eye(2), np.array([1.0, 2.0]), lam=1.0)
    assert np.allclose(w, [0.5, 1.0], rtol=1e-12)
    assert chol.dim == 2


def test_ridge_interpolation_limit():
    _, w = fit_ridge_primal(np.eye(2), np.array([1.0, 2.0]), lam=1e-8)
    assert np.allclose(w, [1.0, 2.0], rtol=1e-6)


def test_ridge_matches_explicit_inverse():
    rng = np.random.default_rng(41)
    phi = rng.standard_normal((20, 5))
    y = rng.standard_normal(20)
    lam = 0.1
    _, w = fit_ridge_primal(phi, y, lam)
    oracle = np.linalg.inv(phi.T @ phi + lam * np.eye(5)) @ phi.T @ y
    assert np.linalg.norm(w - oracle) / np.linalg.norm(oracle) <= 1e-9


def test_ridge_normal_equation_residual():
    rng = np.random.default_rng(43)
    phi = rng.standard_normal((30, 8))
    y = rng.standard_normal(30)
    lam = 0.5
    _, w = fit_ridge_primal(phi, y, lam)
    lhs = (phi.T @ phi + lam * np.eye(8)) @ w
    rhs = phi.T @ y
    assert np.linalg.norm(lhs - rhs) / np.linalg.norm(rhs) <= 1e-9


def test_ridge_rejects_nonpositive_lambda():
    with pytest.raises(ValueError):
        fit_ridge_primal(np.eye(2), np.ones(2), lam=0.0)


# -------------------------------------------------------------------- alpha


def test_alpha_identity_features():
    _, w = fit_ridge_primal(np.eye(2), np.array([1.0, 2.0]), lam=1.0)
    alpha = compute_alpha(np.eye(2), np.array([1.0, 2.0]), w, lam=1.0)
    assert np.allclose(alpha, [0.5, 1.0], rtol=1e-12)


def test_alpha_primal_equals_dual_oracle():
    rng = np.random.default_rng(47)
    phi = rng.standard_normal((30, 6))
    y = rng.standard_normal(30)
    lam = 0.3
    _, w = fit_ridge_primal(phi, y, lam)
    alpha = compute_alpha(phi, y, w, lam)
    oracle = np.linalg.solve(phi @ phi.T + lam * np.eye(30), y)
    assert np.linalg.norm(alpha - oracle) / np.linalg.norm(oracle) <= 1e-7


def test_alpha_recovers_primal_weights():
    # the reverse identity w* = phi.T @ alpha, exact up to rounding
    rng = np.random.default_rng(49)
    phi = rng.standard_normal((30, 6))
    y = rng.standard_normal(30)
    lam = 0.3
    _, w = fit_ridge_primal(phi, y, lam)
    alpha = compute_alpha(phi, y, w, lam)
    assert np.allclose(phi.T @ alpha, w, rtol=1e-9, atol=1e-12)


def test_alpha_zero_targets():
    phi = np.random.default_rng(3).standard_normal((10, 4))
    _, w = fit_ridge_primal(phi, np.zeros(10), lam=1.0)
    assert np.allclose(compute_alpha(phi, np.zeros(10), w, 1.0), 0.0, atol=1e-14)


def test_alpha_cg_matches_primal_route():
    rng = np.random.default_rng(53)
    phi = rng.standard_normal((25, 7))
    y = rng.standard_normal(25)
    lam = 0.8
    _, w = fit_ridge_primal(phi, y, lam)
    primal = compute_alpha(phi, y, w, lam)
    dual = compute_alpha_cg(phi, y, lam, tol=1e-12)
    assert np.linalg.norm(primal - dual) / np.linalg.norm(primal) <= 1e-7


def test_alpha_cg_raises_not_converged():
    rng = np.random.default_rng(59)
    phi = rng.standard_normal((40, 4))
    y = rng.standard_normal(40)
    with pytest.raises(NotConverged) as info:
        compute_alpha_cg(phi, y, lam=1e-6, tol=1e-14, max_iter=2)
    assert info.value.residual > 0


def test_primal_dual_equivalence_grid():
    rng = np.random.default_rng(61)
    for lam in [1e-3, 0.1, 1.0, 10.0]:
        for n, d in [(12, 3), (40, 10), (64, 16)]:
            phi = rng.standard_normal((n, d))
            y = rng.standard_normal(n)
            _, w = fit_ridge_primal(phi, y, lam)
            primal = compute_alpha(phi, y, w, lam)
            dual = np.linalg.solve(phi @ phi.T + lam * np.eye(n), y)
            err = np.linalg.norm(primal - dual) / np.linalg.norm(dual)
            assert err <= 1e-7, (lam, n, d, err)


# ------------------------------------------------------------------ t-cache


def test_t_cache_unit_vectors():
    t = build_t_cache(np.array([[1.0, 0.0]]), np.array([[1.0, 0.0], [0.0, 1.0]]))
    assert np.array_equal(t, np.array([[1.0, 0.0]]))


def test_t_cache_orthogonal_rows_are_zero():
    phi_val = np.array([[1.0, 0.0, 0.0], [0.0, 0.0, 2.0]])
    phi = np.array([[0.0, 3.0, 0.0]])
    assert np.array_equal(build_t_cache(phi_val, phi), np.zeros((2, 1)))


def test_t_cache_matches_naive_loops():
    rng = np.random.default_rng(67)
    phi_val = rng.standard_normal((4, 3))
    phi = rng.standard_normal((10, 3))
    t = build_t_cache(phi_val, phi)
    for i in range(4):
        for j in range(10):
            dot = sum(phi_val[i, k] * phi[j, k] for k in range(3))
            assert abs(t[i, j] - dot) <= 1e-12


# -------------------------------------------------------------- influence S


def test_influence_zero_alpha():
    t = np.arange(6.0).reshape(2, 3)
    s = build_influence_matrix(t, np.zeros(3))
    assert np.array_equal(s, np.zeros((2, 3)))


def test_influence_unit_alpha_is_t():
    t = np.arange(6.0).reshape(2, 3)
    assert np.array_equal(build_influence_matrix(t, np.ones(3)), t)


def test_influence_row_sums_are_predictions():
    rng = np.random.default_rng(71)
    phi, y, phi_val, y_val = random_problem(rng, 30, 6, n_val=8)
    state = build_state(phi, phi_val, y, y_val, lam=0.2)
    preds = predict(phi_val, state.w_star)
    assert np.allclose(state.s.sum(axis=1), preds, rtol=1e-8, atol=1e-10)


def test_orthogonal_training_point_has_zero_influence():
    # training point 1 is exactly orthogonal to validation point 0
    phi = np.array([[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]])
    phi_val = np.array([[1.0, 0.0]])
    y = np.array([1.0, -1.0, 0.5])
    state = build_state(phi, phi_val, y, np.array([1.0]), lam=0.5)
    assert state.s[0, 1] == 0.0


# ------------------------------------------------------------------- lambda


def test_lambda_identity_example():
    est = estimate_lambda(np.eye(2), np.array([1.0, 2.0]), np.array([0.5, 1.0]))
    assert not est.fallback_used
    assert abs(est.value - 1.0) <= 1e-12


def test_lambda_zero_weights_fallback():
    est = estimate_lambda(np.eye(2), np.array([1.0, 2.0]), np.zeros(2))
    assert est.fallback_used
    assert est.value == LAMBDA_FLOOR


def test_lambda_negative_estimate_fallback():
    est = estimate_lambda(np.eye(2), np.array([1.0, 1.0]), np.array([-1.0, -1.0]))
    assert est.fallback_used
    assert est.value == LAMBDA_FLOOR
    assert est.raw_value < 0


def test_lambda_recovers_known_value():
    rng = np.random.default_rng(73)
    phi = rng.standard_normal((25, 6))
    y = rng.standard_normal(25)
    _, w = fit_ridge_primal(phi, y, lam=0.37)
    est = estimate_lambda(phi, y, w)
    assert not est.fallback_used
    assert abs(est.value - 0.37) / 0.37 <= 1e-8


def test_lambda_fixed_point_over_range():
    rng = np.random.default_rng(79)
    for lam0 in [1e-4, 1e-3, 0.05, 0.7, 3.0, 10.0]:
        phi = rng.standard_normal((40, 8))
        y = rng.standard_normal(40)
        _, w = fit_ridge_primal(phi, y, lam=lam0)
        est = estimate_lambda(phi, y, w)
        assert abs(est.value - lam0) / lam0 <= 1e-8, lam0


def test_lambda_centering_by_bias():
    rng = np.random.default_rng(83)
    phi = rng.standard_normal((30, 5))
    y = rng.standard_normal(30)
    b_nn = 2.5
    _, w = fit_ridge_primal(phi, y - b_nn, lam=0.9)
    est = estimate_lambda(phi, y, w, b_nn=b_nn)
    assert abs(est.value - 0.9) / 0.9 <= 1e-8


# ------------------------------------------------------------------ predict


def test_predict_zero_weights():
    assert np.array_equal(predict(np.ones((3, 2)), np.zeros(2)), np.zeros(3))


def test_predict_one_hot_rows_extract_entries():
    w = np.array([3.0, -1.0, 2.0])
    q = np.eye(3)[[2, 0]]
    assert np.array_equal(predict(q, w), np.array([2.0, 3.0]))


def test_representer_exactness_per_point():
    rng = np.random.default_rng(89)
    phi, y, phi_val, y_val = random_problem(rng, 40, 9, n_val=6)
    state = build_state(phi, phi_val, y, y_val, lam=0.4)
    for i in range(6):
        direct = float(phi_val[i] @ state.w_star)
        via_alpha = float(np.sum(state.alpha * (phi_val[i] @ phi.T)))
        assert abs(direct - via_alpha) <= 1e-8 * max(1.0, abs(direct))


# -------------------------------------------------------------------- state


def test_state_invariants():
    rng = np.random.default_rng(97)
    phi, y, phi_val, y_val = random_problem(rng, 35, 7, n_val=9)
    state = build_state(phi, phi_val, y, y_val, lam=0.15)
    # alpha solves the dual system; w* = phi.T @ alpha recovers the head
    dual = np.linalg.solve(phi @ phi.T + 0.15 * np.eye(35), y)
    assert np.allclose(state.alpha, dual, rtol=1e-7)
    assert np.allclose(phi.T @ state.alpha, state.w_star, rtol=1e-9, atol=1e-12)
    # column scaling is exact
    assert np.array_equal(state.s, state.t_cache * state.alpha)
    # residuals are row-sum complements
    assert np.allclose(
        state.residuals, y_val - state.s.sum(axis=1), rtol=0, atol=1e-10
    )
    assert np.array_equal(state.train_indices, np.arange(35))


def test_state_arrays_are_readonly():
    rng = np.random.default_rng(101)
    phi, y, phi_val, y_val = random_problem(rng, 10, 3)
    state = build_state(phi, phi_val, y, y_val, lam=1.0)
    with pytest.raises(ValueError):
        state.s[0, 0] = 99.0


def test_s_rebuild_from_fixed_t_matches_scaled_features():
    # rebuilding S by column scaling a fixed T equals the from-scratch
    # product phi_val @ (phi * alpha).T for any alpha
    rng = np.random.default_rng(103)
    phi = rng.standard_normal((20, 4))
    phi_val = rng.standard_normal((6, 4))
    t = build_t_cache(phi_val, phi)
    for _ in range(5):
        alpha = rng.standard_normal(20)
        s_scaled = build_influence_matrix(t, alpha)
        s_scratch = phi_val @ (phi * alpha[:, None]).T
        assert np.allclose(s_scaled, s_scratch, rtol=0, atol=1e-12)
