"""The scalar system x+ = a x + b u as a worked example.

Each table pairs a measured quantity with its closed form so the two can be
read side by side.
"""
from __future__ import annotations

import numpy as np

from .diagnostics import (ScalingStudyConfig, ensemble_variance, error_decomposition, hessian_fd,
                          hessian_scalar_lq, seed_ensemble)
from .distributions import InitialDistribution
from .dynamics import ScalarLinear
from .estimator import QuadraticTracking
from .policy import OpenLoop, Proportional

HESSIAN_COLUMNS = ("mode", "k", "T", "t", "delta_reference", "hessian_fd_diag", "kappa_reference", "kappa_fd")
BLOWUP_COLUMNS = ("scenario", "t", "t_prime", "lhs", "term_B", "term_A", "residual", "lhs_reference")
VARIANCE_COLUMNS = ("sweep", "T", "N", "variance", "variance_reference")


def hessian_table(a=2.0, b=1.0, Q=1.0, gain=1.5, horizons=(1, 2, 3, 5, 10, 20, 50)) -> list[dict]:
    """Reference Delta_t and kappa beside the finite-difference Hessian of J_T.

    J_T uses R_t(x) = -Q x^2 from x0 = 0, with open-loop inputs (k = 0) or
    proportional waypoint tracking with gain k.
    """
    env = ScalarLinear(a, b)
    reward = QuadraticTracking(Q)
    rows = []
    for mode, k in (("open_loop", 0.0), ("feedback", gain)):
        for T in horizons:
            ref = hessian_scalar_lq(a, b, k, Q, T)
            policy = OpenLoop(T) if k == 0.0 else Proportional(T, k)
            est = hessian_fd(env, policy, np.zeros(T), reward, np.zeros(1), T)
            diag = est.diagonal
            for t in range(T):
                rows.append({"mode": mode, "k": k, "T": T, "t": t, "delta_reference": ref.delta[t],
                             "hessian_fd_diag": diag[t], "kappa_reference": ref.kappa,
                             "kappa_fd": est.condition_number})
    return rows


def blowup_table(a=2.0, a_hat=2.2, b=1.0, b_hat=1.0, T=8) -> list[dict]:
    """Decomposition of Phihat Bhat - Phi B for open-loop inputs, mismatched and exact model.

    Closed form: a_hat^(t-t'-1) b_hat - a^(t-t'-1) b.
    """
    rows = []
    K = np.zeros((T, 1, 1))
    for scenario, ah, bh in (("mismatched", a_hat, b_hat), ("exact", a, b)):
        d = error_decomposition((np.full(T, a), np.full(T, b)), (np.full(T, ah), np.full(T, bh)), K)
        for t, tp in d.pairs():
            rows.append({"scenario": scenario, "t": t, "t_prime": tp, "lhs": d.lhs[t, tp, 0, 0],
                         "term_B": d.term_B[t, tp, 0, 0], "term_A": d.term_A[t, tp, 0, 0],
                         "residual": d.residual[t, tp, 0, 0],
                         "lhs_reference": ah ** (t - tp - 1) * bh - a ** (t - tp - 1) * b})
    return rows


def variance_reference(a, a_hat, b_hat, T, N) -> float:
    """Trace of Var(g_hat^N) for theta = 0, x0 ~ U[-1, 1], R_t = -x^2 / 2.

    Along x_t = a^t x0 the estimate is -x0 c with
    c_i = sum_{t=i+1}^{T} a^t a_hat^(t-1-i) b_hat, so the trace is |c|^2 / (3 N).
    """
    c = np.array([sum(a ** t * a_hat ** (t - 1 - i) * b_hat for t in range(i + 1, T + 1)) for i in range(T)])
    return float(c @ c) / (3.0 * N)


def variance_table(a=2.0, a_hat=2.2, b=1.0, b_hat=1.0, horizons=tuple(range(1, 11)),
                   batch_sizes=(1, 4, 16, 64), T_fixed=5, N_fixed=1, n_seeds=64, seed=0,
                   workers=None) -> list[dict]:
    """Seed-ensemble variance of the batch estimate against T and against N."""
    env, model = ScalarLinear(a, b), ScalarLinear(a_hat, b_hat)
    reward = QuadraticTracking(0.5)
    dist = InitialDistribution("uniform", (-1.0,), (1.0,))
    rows = []
    cases = [("T", T, N_fixed) for T in horizons] + [("N", T_fixed, N) for N in batch_sizes]
    for sweep, T, N in cases:
        ss = np.random.SeedSequence([seed, T, N])
        seeds = [int(s.generate_state(1)[0]) for s in ss.spawn(n_seeds)]
        policy = OpenLoop(T)
        G = seed_ensemble(env, model, policy, np.zeros(T), reward, T, dist, N, seeds, workers)
        rows.append({"sweep": sweep, "T": T, "N": N, "variance": ensemble_variance(G),
                     "variance_reference": variance_reference(a, a_hat, b_hat, T, N)})
    return rows


# ---------------------------------------------------------------- growth studies

#: true / model pair: unstable a = 1.2 against a = 1.3
A_TRUE, A_MODEL = 1.2, 1.3
#: gain and model input coefficient that put both closed loops at rate 0.5
GAIN, B_MODEL_FEEDBACK = 0.7, 8.0 / 7.0


def _pair(mode):
    if mode == "open_loop":
        return ScalarLinear(A_TRUE, 1.0), ScalarLinear(A_MODEL, 1.0), OpenLoop
    if mode == "feedback":
        return ScalarLinear(A_TRUE, 1.0), ScalarLinear(A_MODEL, B_MODEL_FEEDBACK), lambda T: Proportional(T, GAIN)
    raise ValueError(f"mode must be 'open_loop' or 'feedback', got {mode!r}")


def bias_study(mode, horizons=(5, 10, 20, 40, 60, 80), seed=0) -> ScalingStudyConfig:
    """Model bias and curvature against T from x0 = 1 with a terminal reward -x_T^2 / 2.

    Open loop uses u_t = -0.2, which holds the true state at its fixed point
    x = 1, so the reward gradient stays bounded and only the sensitivities grow.
    Feedback tracks the waypoint 1.
    """
    env, model, make_policy = _pair(mode)
    fill = -0.2 if mode == "open_loop" else 1.0
    return ScalingStudyConfig(env, model, make_policy, lambda p: np.full(p.n_params, fill),
                              QuadraticTracking(0.5, running=False), tuple(horizons),
                              InitialDistribution("point", (1.0,)), bias_samples=1, seed=seed,
                              quantities=("bias", "hessian"), name=f"bias_{mode}")


def variance_study(mode, horizons=(5, 10, 15, 20, 25, 30, 35, 40), N=1, n_seeds=64,
                   seed=0) -> ScalingStudyConfig:
    """Seed-ensemble variance against T at theta = 0 with x0 ~ U[-1, 1] and R_t = -x^2 / 2."""
    env, model, make_policy = _pair(mode)
    return ScalingStudyConfig(env, model, make_policy, lambda p: np.zeros(p.n_params), QuadraticTracking(0.5),
                              tuple(horizons), InitialDistribution("uniform", (-1.0,), (1.0,)), N=N,
                              n_seeds=n_seeds, seed=seed, quantities=("variance",), name=f"variance_{mode}")
