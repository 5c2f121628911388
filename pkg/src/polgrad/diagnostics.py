"""Transition matrices, model-error propagation, Hessians and growth studies.

Convention: Phi[t, t'] = Acl_{t-1} ... Acl_{t'+1} for t' < t, so that
Phi[t'+1, t'] = I and dx_t/dtheta = sum_{t'<t} Phi[t, t'] B_{t'} P_{t'}.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, NamedTuple, Optional

import numpy as np
from scipy import stats

from .distributions import InitialDistribution, sample_initial_conditions
from .dynamics import DivergenceError, DynamicsModel, Trajectory, rollout
from .estimator import Reward, batch_gradient, gradient_backward, worker_count


# ---------------------------------------------------------------- transition matrices

@dataclass(frozen=True)
class TransitionTable:
    """All Phi[t, t'] for 0 <= t' < t <= T, stored densely (zeros elsewhere)."""

    phi: np.ndarray  # (T+1, T+1, n, n)

    @property
    def horizon(self) -> int:
        return self.phi.shape[0] - 1

    def __call__(self, t: int, tp: int) -> np.ndarray:
        if not 0 <= tp < t <= self.horizon:
            raise IndexError(f"Phi[{t}, {tp}] needs 0 <= t' < t <= {self.horizon}")
        return self.phi[t, tp]


def transition_table(closed_loop_jacobians) -> TransitionTable:
    """Build Phi from Acl_0..Acl_{T-1} with Phi[t, t'] = Acl_{t-1} Phi[t-1, t']."""
    Acl = np.asarray(closed_loop_jacobians, dtype=float)
    if Acl.ndim == 1:
        Acl = Acl.reshape(-1, 1, 1)
    if Acl.ndim != 3 or Acl.shape[1] != Acl.shape[2]:
        raise ValueError("closed-loop Jacobians must be a (T, n, n) sequence")
    T, n, _ = Acl.shape
    phi = np.zeros((T + 1, T + 1, n, n))
    eye = np.eye(n)
    for tp in range(T):
        phi[tp + 1, tp] = eye
        for t in range(tp + 2, T + 1):
            phi[t, tp] = Acl[t - 1] @ phi[t - 1, tp]
    phi.flags.writeable = False
    return TransitionTable(phi)


def closed_loop_jacobians(traj: Trajectory, source: str = "true") -> np.ndarray:
    return traj.closed_loop(source)


# ---------------------------------------------------------------- error propagation

@dataclass(frozen=True)
class ErrorDecomposition:
    """Entries [t, t'] (valid for t' < t) of

    lhs    = Phihat[t,t'] Bhat_t' - Phi[t,t'] B_t'
    term_B = Phi[t,t'] dB_t'
    term_A = sum_{s=t'+1}^{t-1} Phi[t,s] dAcl_s Phihat[s,t'] Bhat_t'
    """

    lhs: np.ndarray       # (T+1, T, n, m)
    term_B: np.ndarray
    term_A: np.ndarray
    residual: np.ndarray

    @property
    def horizon(self) -> int:
        return self.lhs.shape[0] - 1

    @property
    def scale(self) -> float:
        return max(1.0, float(np.max(np.abs(self.lhs), initial=0.0)),
                   float(np.max(np.abs(self.term_B), initial=0.0)),
                   float(np.max(np.abs(self.term_A), initial=0.0)))

    @property
    def max_residual(self) -> float:
        return float(np.max(np.abs(self.residual), initial=0.0))

    def pairs(self):
        T = self.horizon
        return [(t, tp) for t in range(1, T + 1) for tp in range(t)]


def _as_seq(x, name):
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x.reshape(-1, 1, 1)
    if x.ndim != 3:
        raise ValueError(f"{name} must be a (T, rows, cols) sequence")
    return x


def error_decomposition(true_jacs, model_jacs, K_seq) -> ErrorDecomposition:
    """Split the model error in Phi B into a dB part and a propagated dAcl part.

    ``true_jacs`` and ``model_jacs`` are (A, B) pairs of (T, n, n) and
    (T, n, m) sequences; ``K_seq`` is (T, m, n).  The two parts add up to the
    directly computed difference up to rounding.
    """
    A, B = (_as_seq(v, "true Jacobians") for v in true_jacs)
    Ah, Bh = (_as_seq(v, "model Jacobians") for v in model_jacs)
    K = _as_seq(K_seq, "K")
    T, n, m = B.shape
    if not (A.shape == Ah.shape == (T, n, n) and Bh.shape == B.shape and K.shape == (T, m, n)):
        raise ValueError("Jacobian sequences must share horizon and dimensions")
    Acl = A + B @ K
    Aclh = Ah + Bh @ K
    dAcl = Aclh - Acl
    dB = Bh - B
    phi = transition_table(Acl).phi
    phih = transition_table(Aclh).phi

    lhs = np.zeros((T + 1, T, n, m))
    term_B = np.zeros_like(lhs)
    term_A = np.zeros_like(lhs)
    for tp in range(T):
        for t in range(tp + 1, T + 1):
            lhs[t, tp] = phih[t, tp] @ Bh[tp] - phi[t, tp] @ B[tp]
            term_B[t, tp] = phi[t, tp] @ dB[tp]
            acc = np.zeros((n, m))
            for s in range(tp + 1, t):
                acc += phi[t, s] @ dAcl[s] @ phih[s, tp] @ Bh[tp]
            term_A[t, tp] = acc
    residual = lhs - term_B - term_A
    for arr in (lhs, term_B, term_A, residual):
        arr.flags.writeable = False
    return ErrorDecomposition(lhs, term_B, term_A, residual)


# ---------------------------------------------------------------- Hessians

@dataclass(frozen=True)
class HessianEstimate:
    H: np.ndarray
    method: str                    # FiniteDifference | AnalyticScalarLQ
    spectral_norm: float
    condition_number: float        # +inf when singular
    zero_eigenvalues: int = 0
    asymmetry: float = 0.0         # max |H - H^T| / max(1, max |H|) before symmetrizing

    @property
    def diagonal(self) -> np.ndarray:
        return np.diag(self.H).copy()


def _condition(H: np.ndarray, rtol: float = 1e-12) -> tuple[float, int]:
    """max |lambda| / min |lambda| of a symmetric matrix, and the count of zero eigenvalues."""
    lam = np.abs(np.linalg.eigvalsh(H))
    top = float(lam.max(initial=0.0))
    zeros = int(np.count_nonzero(lam <= rtol * max(top, 1e-300)))
    if zeros:
        return math.inf, zeros
    return top / float(lam.min()), 0


#: eigenvalues below this fraction of the largest count as zero; differenced
#: gradients only resolve H to about 1e-10 relative
ZERO_RTOL = {"FiniteDifference": 1e-8, "AnalyticScalarLQ": 1e-12}


def _estimate(H, method, asymmetry=0.0) -> HessianEstimate:
    H = np.asarray(H, dtype=float)
    H.flags.writeable = False
    cond, zeros = _condition(H, ZERO_RTOL[method])
    return HessianEstimate(H, method, spectral_norm(H), cond, zeros, asymmetry)


def hessian_fd(env: DynamicsModel, policy, theta, reward: Reward, x0, T: int,
               h: Optional[float] = None) -> HessianEstimate:
    """Hessian of J_T from central differences of exact (true-Jacobian) gradients.

    Column i is (g(theta + h_i e_i) - g(theta - h_i e_i)) / (2 h_i) with
    h_i = 1e-5 max(1, |theta_i|).  The result is symmetrized; the defect
    before symmetrizing is kept in ``asymmetry``.
    """
    theta = np.asarray(theta, dtype=float)
    p = theta.size

    def grad(th):
        traj = rollout(env, env, policy, th, x0, T)
        return gradient_backward(traj, "true", reward).g

    H = np.zeros((p, p))
    for i in range(p):
        hi = h if h is not None else 1e-5 * max(1.0, abs(theta[i]))
        tp = theta.copy()
        tm = theta.copy()
        tp[i] += hi
        tm[i] -= hi
        H[:, i] = (grad(tp) - grad(tm)) / (2.0 * hi)
    scale = max(1.0, float(np.max(np.abs(H), initial=0.0)))
    asym = float(np.max(np.abs(H - H.T), initial=0.0)) / scale
    return _estimate(0.5 * (H + H.T), "FiniteDifference", asym)


class ScalarLqHessian(NamedTuple):
    delta: np.ndarray
    kappa: float

    def estimate(self) -> HessianEstimate:
        return _estimate(np.diag(self.delta), "AnalyticScalarLQ")


def hessian_scalar_lq(a: float, b: float, k: float = 0.0, Q: float = 1.0, T: int = 1) -> ScalarLqHessian:
    """Delta_t = Q sum_{s=t+1}^{T} (a - b k)^{s-t} b for t = 0..T-1, kappa = Delta_0 / Delta_{T-1}.

    ``k = 0`` is the open-loop case.
    """
    if T < 1:
        raise ValueError("T must be at least 1")
    if not Q > 0:
        raise ValueError("Q must be positive")
    rho = a - b * k
    delta = np.array([Q * sum(rho ** (s - t) * b for s in range(t + 1, T + 1)) for t in range(T)])
    return ScalarLqHessian(delta, float(delta[0] / delta[-1]))


def spectral_norm(H, tol: float = 1e-13, max_iter: int = 100_000) -> float:
    """Induced 2-norm by power iteration on H^T H from a fixed start vector."""
    H = np.atleast_2d(np.asarray(H, dtype=float))
    if H.size == 0 or not np.any(H):
        return 0.0
    M = H.T @ H
    n = M.shape[0]
    v = np.ones(n) + np.arange(n) / (10.0 * n)  # fixed, not orthogonal to common eigvecs
    v /= np.linalg.norm(v)
    est = 0.0
    for _ in range(max_iter):
        w = M @ v
        nw = np.linalg.norm(w)
        if nw == 0.0:
            # start vector in the null space: restart on a coordinate direction
            v = np.eye(n)[int(np.argmax(np.abs(M).sum(axis=0)))]
            continue
        new = float(v @ w)
        v = w / nw
        if abs(new - est) <= tol * new:
            est = new
            break
        est = new
    return math.sqrt(max(est, 0.0))


# ---------------------------------------------------------------- growth fits

@dataclass(frozen=True)
class GrowthFit:
    """Fits of log(value) against T (exponential) and log T (polynomial)."""

    slope_exp: float
    r2_exp: float
    residual_exp: float
    slope_poly: float
    r2_poly: float
    residual_poly: float
    regime: str      # exponential | polynomial

    @property
    def residual(self) -> float:
        return self.residual_exp if self.regime == "exponential" else self.residual_poly


REGIME_MARGIN = 0.05   # exponential only if its R^2 beats the log-log fit by this much
FLAT_LOG_RANGE = 1e-6  # log-range below this counts as constant


def _linfit(x, y):
    res = stats.linregress(x, y)
    resid = y - (res.intercept + res.slope * x)
    return float(res.slope), float(res.rvalue ** 2), float(np.sqrt(np.mean(resid ** 2)))


def fit_growth(horizons, values) -> GrowthFit:
    T = np.asarray(horizons, dtype=float)
    v = np.asarray(values, dtype=float)
    if T.shape != v.shape or T.size < 2:
        raise ValueError("need matching horizon and value lists of length >= 2")
    if np.any(T <= 0) or np.any(~np.isfinite(v)) or np.any(v < 0):
        raise ValueError("horizons must be positive and values finite and non-negative")
    y = np.log(np.maximum(v, 1e-300))
    if np.ptp(y) < FLAT_LOG_RANGE:
        return GrowthFit(0.0, 1.0, 0.0, 0.0, 1.0, 0.0, "polynomial")
    se, re, ee = _linfit(T, y)
    sp, rp, ep = _linfit(np.log(T), y)
    regime = "exponential" if re >= rp + REGIME_MARGIN else "polynomial"
    return GrowthFit(se, re, ee, sp, rp, ep, regime)


# ---------------------------------------------------------------- scaling studies

@dataclass(frozen=True)
class ScalingStudyConfig:
    """One scaling study.

    ``make_policy(T)`` builds the policy for horizon T and ``make_theta(policy)``
    the parameters it is evaluated at.  Bias is the norm of the mean (over
    ``bias_samples`` initial states) of g_true - g_model, variance the trace of
    the covariance of the batch estimate over ``n_seeds`` seeds, and
    hessian_norm the spectral norm of ``hessian_fd`` at the mean initial state.
    """

    env: DynamicsModel
    model: DynamicsModel
    make_policy: Callable
    make_theta: Callable
    reward: Reward
    horizons: tuple
    init_dist: InitialDistribution
    N: int = 1
    n_seeds: int = 64
    bias_samples: int = 16
    seed: int = 0
    quantities: tuple = ("bias", "variance", "hessian")
    name: str = "study"
    workers: Optional[int] = None

    def __post_init__(self):
        hs = tuple(int(T) for T in self.horizons)
        if len(hs) < 5:
            raise ValueError("a scaling study needs at least 5 horizons")
        if any(b <= a for a, b in zip(hs, hs[1:])) or hs[0] < 1:
            raise ValueError("horizons must be positive and strictly increasing")
        unknown = set(self.quantities) - {"bias", "variance", "hessian"}
        if unknown:
            raise ValueError(f"unknown study quantities {sorted(unknown)}")
        if self.N < 1 or self.n_seeds < 2 or self.bias_samples < 1:
            raise ValueError("N >= 1, n_seeds >= 2 and bias_samples >= 1 required")
        object.__setattr__(self, "horizons", hs)


@dataclass(frozen=True)
class HorizonMeasurement:
    T: int
    bias_norm: float
    variance: float
    hessian_norm: float
    seed_norms: tuple          # |g_hat^N| per seed
    seed_sq_deviations: tuple  # |g_hat^N - mean|^2 per seed


@dataclass(frozen=True)
class ScalingStudyResult:
    name: str
    measurements: tuple
    fits: dict                       # quantity -> GrowthFit
    truncated_at: Optional[int] = None  # first horizon that diverged
    note: str = ""

    @property
    def horizons(self) -> list:
        return [m.T for m in self.measurements]

    def series(self, quantity: str) -> np.ndarray:
        attr = {"bias": "bias_norm", "variance": "variance", "hessian": "hessian_norm"}[quantity]
        return np.array([getattr(m, attr) for m in self.measurements])


def _bias(cfg: ScalingStudyConfig, policy, theta, T, x0s) -> float:
    diff = np.zeros(policy.n_params)
    for x0 in x0s:
        traj = rollout(cfg.env, cfg.model, policy, theta, x0, T)
        diff += gradient_backward(traj, "true", cfg.reward).g - gradient_backward(traj, "model", cfg.reward).g
    return float(np.linalg.norm(diff / len(x0s)))


def seed_ensemble(env, model, policy, theta, reward, T, init_dist, N, seeds, workers=None) -> np.ndarray:
    """Batch estimates g_hat^N for each seed, stacked as (len(seeds), p)."""
    def one(s):
        return batch_gradient(env, model, policy, theta, reward, T, init_dist, N, seed=s, workers=1).g

    nw = min(worker_count(workers), len(seeds))
    if nw > 1:
        with ThreadPoolExecutor(max_workers=nw) as pool:
            return np.array(list(pool.map(one, seeds)))
    return np.array([one(s) for s in seeds])


def ensemble_variance(G: np.ndarray) -> float:
    """Trace of the sample covariance of the rows of G."""
    G = np.atleast_2d(G)
    return float(np.sum(np.var(G, axis=0, ddof=1)))


def _measure(cfg: ScalingStudyConfig, T: int) -> HorizonMeasurement:
    policy = cfg.make_policy(T)
    theta = np.asarray(cfg.make_theta(policy), dtype=float)
    ss = np.random.SeedSequence([cfg.seed, T])
    bias_ss, var_ss = ss.spawn(2)
    bias = var = hess = math.nan
    norms, devs = (), ()
    if "bias" in cfg.quantities:
        x0s = sample_initial_conditions(cfg.init_dist, cfg.bias_samples, bias_ss)
        bias = _bias(cfg, policy, theta, T, x0s)
    if "variance" in cfg.quantities:
        seeds = [int(s.generate_state(1)[0]) for s in var_ss.spawn(cfg.n_seeds)]
        G = seed_ensemble(cfg.env, cfg.model, policy, theta, cfg.reward, T, cfg.init_dist, cfg.N,
                          seeds, cfg.workers)
        var = ensemble_variance(G)
        norms = tuple(float(v) for v in np.linalg.norm(G, axis=1))
        devs = tuple(float(v) for v in np.sum((G - G.mean(axis=0)) ** 2, axis=1))
    if "hessian" in cfg.quantities:
        hess = hessian_fd(cfg.env, policy, theta, cfg.reward, cfg.init_dist.mean, T).spectral_norm
    values = [v for v in (bias, var, hess) if not math.isnan(v)]
    if not all(math.isfinite(v) for v in values):
        raise DivergenceError(T)
    return HorizonMeasurement(T, bias, var, hess, norms, devs)


def scaling_study(cfg: ScalingStudyConfig) -> ScalingStudyResult:
    """Measure bias, variance and curvature per horizon and classify their growth.

    A horizon whose rollouts or measurements blow up ends the study; the fits
    use the horizons measured before it.
    """
    measured = []
    truncated = None
    note = ""
    with np.errstate(over="ignore", invalid="ignore"):
        for T in cfg.horizons:
            try:
                measured.append(_measure(cfg, T))
            except (DivergenceError, FloatingPointError, OverflowError) as err:
                truncated = T
                note = f"diverged at T={T}: {err}"
                break
    fits = {}
    if len(measured) >= 2:
        Ts = [m.T for m in measured]
        for q, attr in (("bias", "bias_norm"), ("variance", "variance"), ("hessian", "hessian_norm")):
            if q in cfg.quantities:
                fits[q] = fit_growth(Ts, [getattr(m, attr) for m in measured])
    if truncated is not None and len(measured) < 5:
        note += f"; only {len(measured)} finite horizons, fewer than 5"
    return ScalingStudyResult(cfg.name, tuple(measured), fits, truncated, note)
