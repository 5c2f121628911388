import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from polgrad.diagnostics import (ScalingStudyConfig, ensemble_variance, error_decomposition, fit_growth,
                                 hessian_fd, hessian_scalar_lq, scaling_study, spectral_norm, transition_table)
from polgrad.distributions import InitialDistribution
from polgrad.dynamics import ScalarLinear, rollout
from polgrad.estimator import QuadraticTracking, sensitivities_forward
from polgrad.policy import OpenLoop, Proportional
from polgrad.running_example import bias_study, blowup_table, hessian_table, variance_study


# ---------------------------------------------------------------- transition matrices

def test_open_loop_transition():
    phi = transition_table(np.full(5, 2.0))
    assert phi(3, 0)[0, 0] == 4.0
    assert all(phi(t + 1, t)[0, 0] == 1.0 for t in range(5))
    with pytest.raises(IndexError):
        phi(2, 2)


def test_feedback_transition_is_half_power():
    a, b, k = 2.0, 1.0, 1.5
    phi = transition_table(np.full(8, a - b * k))
    for t in range(1, 9):
        for tp in range(t):
            assert phi(t, tp)[0, 0] == 0.5 ** (t - tp - 1)


@given(st.integers(1, 12), st.integers(1, 4), st.integers(0, 2**31 - 1))
def test_transition_semigroup(T, n, seed):
    rng = np.random.default_rng(seed)
    Acl = rng.normal(size=(T, n, n))
    phi = transition_table(Acl)
    for tp in range(T):
        np.testing.assert_array_equal(phi(tp + 1, tp), np.eye(n))
        for t in range(tp + 2, T + 1):
            np.testing.assert_allclose(phi(t, tp), Acl[t - 1] @ phi(t - 1, tp), rtol=1e-12, atol=1e-12)
            s = (t + tp) // 2 + 1 if t - tp > 2 else tp + 1
            # Phi[t, t'] = Phi[t, s] Acl_s Phi[s, t'] splits at any s strictly between
            if tp < s < t:
                np.testing.assert_allclose(phi(t, tp), phi(t, s) @ Acl[s] @ phi(s, tp),
                                           rtol=1e-10, atol=1e-10 * np.abs(phi(t, tp)).max())


# ---------------------------------------------------------------- error decomposition

def test_exact_model_has_no_error():
    rng = np.random.default_rng(0)
    A, B, K = rng.normal(size=(6, 3, 3)), rng.normal(size=(6, 3, 2)), rng.normal(size=(6, 2, 3))
    d = error_decomposition((A, B), (A, B), K)
    assert not np.any(d.lhs) and not np.any(d.term_A) and not np.any(d.term_B)


@given(st.integers(1, 20), st.integers(1, 4), st.integers(1, 3), st.integers(0, 2**31 - 1))
def test_decomposition_identity(T, n, m, seed):
    rng = np.random.default_rng(seed)
    A, B, K = rng.normal(size=(T, n, n)) * 0.6, rng.normal(size=(T, n, m)), rng.normal(size=(T, m, n)) * 0.3
    Ah, Bh = A + 0.1 * rng.normal(size=A.shape), B + 0.1 * rng.normal(size=B.shape)
    d = error_decomposition((A, B), (Ah, Bh), K)
    assert d.max_residual <= 1e-12 * d.scale


def test_scalar_blowup_matches_closed_form():
    rows = [r for r in blowup_table() if r["scenario"] == "mismatched"]
    for r in rows:
        assert abs(r["residual"]) <= 1e-12 * max(1.0, abs(r["lhs"]))
        assert r["lhs"] == pytest.approx(r["lhs_reference"], rel=1e-12, abs=1e-12)
    first = [r for r in rows if r["t_prime"] == 0]
    assert [r["lhs_reference"] for r in first[:3]] == [0.0, 2.2 - 2.0, 2.2 ** 2 - 2.0 ** 2]
    # scalar expansion: sum_s a^(t-s-1) ahat^(s-t'-1) b (ahat - a) with b = bhat
    for r in first:
        t = r["t"]
        expansion = sum(2.0 ** (t - s - 1) * 2.2 ** (s - 1) * 0.2 for s in range(1, t))
        assert r["term_A"] == pytest.approx(expansion, rel=1e-12, abs=1e-15)
    assert all(r["lhs"] == r["term_A"] == r["term_B"] == 0.0 for r in blowup_table() if r["scenario"] == "exact")


def test_decomposition_rejects_mismatched_shapes():
    with pytest.raises(ValueError):
        error_decomposition((np.ones(3), np.ones(3)), (np.ones(4), np.ones(4)), np.zeros(3))


# ---------------------------------------------------------------- Hessians

def test_reference_sum_example():
    ref = hessian_scalar_lq(2, 1, 0, 1, 3)
    assert ref.delta.tolist() == [14.0, 6.0, 2.0] and ref.kappa == 7.0
    assert hessian_scalar_lq(2, 1, T=1).kappa == 1.0
    with pytest.raises(ValueError):
        hessian_scalar_lq(2, 1, T=0)


@pytest.mark.parametrize("T", range(3, 51))
def test_feedback_reference_sum_is_bounded(T):
    ref = hessian_scalar_lq(2, 1, 1.5, 1, T)
    assert np.all(ref.delta < 2.0) and ref.kappa < 2.0


def _exact_lq_hessian(a, b, Q, T):
    """d^2/du_i du_j of -Q sum_{t<=T} x_t^2 for x+ = a x + b u."""
    H = np.zeros((T, T))
    for i in range(T):
        for j in range(T):
            H[i, j] = -2 * Q * b * b * sum(a ** (t - 1 - i) * a ** (t - 1 - j) for t in range(max(i, j) + 1, T + 1))
    return H


@pytest.mark.parametrize("a, b, T", [(2.0, 1.0, 3), (1.2, 0.7, 6), (0.5, 1.5, 4)])
def test_finite_difference_hessian_matches_exact_quadratic(a, b, T):
    est = hessian_fd(ScalarLinear(a, b), OpenLoop(T), np.zeros(T), QuadraticTracking(1.0), [0.3], T)
    exact = _exact_lq_hessian(a, b, 1.0, T)
    assert np.abs(est.H - exact).max() <= 1e-6 * np.abs(exact).max()
    assert est.asymmetry <= 1e-6 and est.method == "FiniteDifference"


def test_linear_quadratic_hessian_is_theta_free(rng):
    env, pol, r = ScalarLinear(1.1, 0.9), Proportional(5, 0.6), QuadraticTracking(0.5)
    H1 = hessian_fd(env, pol, rng.normal(size=5), r, [0.2], 5).H
    H2 = hessian_fd(env, pol, rng.normal(size=5), r, [0.2], 5).H
    assert np.abs(H1 - H2).max() <= 1e-6 * np.abs(H1).max()


def test_open_loop_hessian_is_not_diagonal():
    # the reference sum only keeps one sensitivity factor; the true Hessian is a Gram matrix
    est = hessian_fd(ScalarLinear(2, 1), OpenLoop(3), np.zeros(3), QuadraticTracking(1.0), [0.0], 3)
    off = est.H - np.diag(est.diagonal)
    assert np.abs(off).max() > 0.1 * np.abs(est.H).max()
    np.testing.assert_allclose(est.diagonal, [-42.0, -10.0, -2.0], rtol=1e-6)


def test_hessian_table_reports_both_curves():
    rows = hessian_table(horizons=(1, 3))
    fd3 = [r for r in rows if r["mode"] == "open_loop" and r["T"] == 3]
    assert [r["delta_reference"] for r in fd3] == [14.0, 6.0, 2.0]
    assert fd3[0]["kappa_reference"] == 7.0
    assert all(r["kappa_reference"] < 2.0 for r in rows if r["mode"] == "feedback")


def test_singular_hessian_has_infinite_condition():
    est = hessian_fd(ScalarLinear(1.2, 1.0), OpenLoop(4), np.zeros(4), QuadraticTracking(1.0, running=False),
                     [1.0], 4)
    assert est.condition_number == math.inf and est.zero_eigenvalues == 3


def test_spectral_norm_examples(rng):
    assert spectral_norm(np.eye(4)) == pytest.approx(1.0, rel=1e-12)
    assert spectral_norm(np.diag([14.0, 6.0, 2.0])) == pytest.approx(14.0, rel=1e-12)
    assert spectral_norm(np.zeros((3, 3))) == 0.0
    for _ in range(10):
        M = rng.normal(size=(10, 10))
        S = M + M.T
        assert spectral_norm(S) == pytest.approx(np.abs(np.linalg.eigvalsh(S)).max(), rel=1e-6)


@given(st.integers(0, 2**31 - 1))
def test_spectral_norm_bounds_eigenvalues(seed):
    rng = np.random.default_rng(seed)
    M = rng.normal(size=(6, 6))
    S = M + M.T
    assert spectral_norm(S) >= np.abs(np.linalg.eigvalsh(S)).max() * (1 - 1e-6)


# ---------------------------------------------------------------- growth fits

def test_fit_recovers_exponential_rate():
    T = np.arange(5, 45, 5)
    fit = fit_growth(T, 3.0 * 1.3 ** T)
    assert fit.slope_exp == pytest.approx(np.log(1.3)) and fit.regime == "exponential"
    assert fit.residual < 1e-12


def test_fit_recovers_polynomial_degree():
    T = np.arange(5, 45, 5)
    fit = fit_growth(T, 0.1 * T.astype(float) ** 2)
    assert fit.slope_poly == pytest.approx(2.0) and fit.regime == "polynomial"


def test_fit_on_constant_is_polynomial():
    fit = fit_growth([1, 2, 3, 4, 5], [2.0] * 5)
    assert fit.regime == "polynomial" and fit.slope_exp == 0.0


def test_fit_input_validation():
    with pytest.raises(ValueError):
        fit_growth([1], [1.0])
    with pytest.raises(ValueError):
        fit_growth([1, 2], [1.0, -1.0])


# ---------------------------------------------------------------- scaling studies

def test_study_needs_five_increasing_horizons():
    cfg = bias_study("open_loop")
    with pytest.raises(ValueError):
        ScalingStudyConfig(cfg.env, cfg.model, cfg.make_policy, cfg.make_theta, cfg.reward, (1, 2, 3, 4),
                           cfg.init_dist)
    with pytest.raises(ValueError):
        ScalingStudyConfig(cfg.env, cfg.model, cfg.make_policy, cfg.make_theta, cfg.reward, (1, 2, 3, 5, 5),
                           cfg.init_dist)


BIAS_HORIZONS = tuple(range(5, 45, 5))


def test_open_loop_bias_rate_is_bracketed():
    res = scaling_study(bias_study("open_loop", BIAS_HORIZONS))
    assert np.log(1.2) - 0.1 <= res.fits["bias"].slope_exp <= np.log(1.3) + 0.1
    assert res.fits["hessian"].regime == "exponential"


def test_wider_horizon_range_labels_open_loop_bias_exponential():
    res = scaling_study(bias_study("open_loop"))
    assert res.fits["bias"].regime == "exponential"


def test_feedback_bias_is_flat_and_small():
    fb = scaling_study(bias_study("feedback", BIAS_HORIZONS))
    ol = scaling_study(bias_study("open_loop", BIAS_HORIZONS))
    assert fb.fits["bias"].regime == "polynomial" and fb.fits["bias"].slope_exp <= 0.02
    assert ol.series("bias")[-1] > 10 * fb.series("bias")[-1]


def test_exact_model_has_no_bias():
    cfg = bias_study("feedback", BIAS_HORIZONS)
    exact = ScalingStudyConfig(cfg.env, cfg.env, cfg.make_policy, cfg.make_theta, cfg.reward, cfg.horizons,
                               cfg.init_dist, quantities=("bias",))
    assert np.all(scaling_study(exact).series("bias") <= 1e-8)


def test_variance_regimes():
    ol = scaling_study(variance_study("open_loop"))
    fb = scaling_study(variance_study("feedback"))
    assert ol.fits["variance"].regime == "exponential" and fb.fits["variance"].regime == "polynomial"
    assert all(len(m.seed_norms) == 64 for m in ol.measurements)


def test_study_is_deterministic():
    a = scaling_study(variance_study("open_loop", horizons=(1, 2, 3, 4, 5), n_seeds=8))
    b = scaling_study(variance_study("open_loop", horizons=(1, 2, 3, 4, 5), n_seeds=8))
    assert a.measurements == b.measurements


def test_divergent_horizons_truncate_the_study():
    cfg = ScalingStudyConfig(ScalarLinear(1e60, 1.0), ScalarLinear(1e60, 1.0), OpenLoop,
                             lambda p: np.zeros(p.n_params), QuadraticTracking(0.5), (1, 2, 4, 8, 16),
                             InitialDistribution("point", (1.0,)), quantities=("bias",))
    res = scaling_study(cfg)
    assert res.truncated_at is not None and res.truncated_at > 1
    assert [m.T for m in res.measurements] == [T for T in cfg.horizons if T < res.truncated_at]
    assert "diverged" in res.note


def test_ensemble_variance_is_covariance_trace(rng):
    G = rng.normal(size=(50, 3))
    assert ensemble_variance(G) == pytest.approx(np.trace(np.cov(G.T)))


def test_stable_sensitivity_saturates():
    a, b, k = 1.2, 1.0, 0.7
    peaks = []
    for T in range(10, 41):
        traj = rollout(ScalarLinear(a, b), None, Proportional(T, k), np.ones(T), [1.0], T)
        peaks.append(np.abs(sensitivities_forward(traj, "true")).max())
    assert all(b2 <= b1 + 1e-9 for b1, b2 in zip(peaks, peaks[1:]))
