"""Policy gradients along real trajectories.

Two algebraically equivalent forms are provided:

* forward: propagate dx_t/dtheta with
  S_{t+1} = (A_t + B_t K_t) S_t + B_t dpi_t/dtheta,  S_0 = 0,
  then g = sum_{t=0}^{T} grad R_t(x_t) S_t;
* backward (costates):
  p_T = grad R_T(x_T),  p_t = p_{t+1} (A_t + B_t K_t) + grad R_t(x_t),
  g = sum_{t=0}^{T-1} (p_{t+1} B_t) dpi_t/dtheta.

With ``source="model"`` the Jacobians of the approximate model, evaluated
along the same real trajectory, replace A_t and B_t; K_t is always the
policy's own state-Jacobian.
"""
from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .distributions import InitialDistribution, sample_initial_conditions
from .dynamics import DivergenceError, DynamicsModel, Trajectory, rollout, simulate


# ---------------------------------------------------------------- rewards

class Reward:
    """R_t(x) with analytic gradient and Hessian.  ``terminal`` marks t = T."""

    def value(self, t: int, x, terminal: bool = False) -> float:
        raise NotImplementedError

    def grad(self, t: int, x, terminal: bool = False) -> np.ndarray:
        raise NotImplementedError

    def hess(self, t: int, x, terminal: bool = False) -> np.ndarray:
        raise NotImplementedError

    def tracking_error(self, t: int, x) -> np.ndarray:
        raise NotImplementedError


@dataclass(frozen=True)
class QuadraticTracking(Reward):
    """R_t(x) = -(x - x_des,t)^T W (x - x_des,t).

    ``weight`` is a scalar, a diagonal or a full symmetric PSD matrix.
    ``target`` is None (zero), a constant vector or a callable ``t -> x_des``.
    With ``running=False`` only the terminal term is kept.
    ``error_indices`` selects the components reported as tracking error
    (default: those with non-zero diagonal weight).
    """

    weight: object
    target: object = None
    running: bool = True
    error_indices: Optional[tuple] = None
    kind = "QuadraticTracking"

    def __post_init__(self):
        W = np.asarray(self.weight, dtype=float)
        if W.ndim == 0:
            W = W.reshape(1, 1)
        elif W.ndim == 1:
            W = np.diag(W)
        if W.shape[0] != W.shape[1] or not np.allclose(W, W.T):
            raise ValueError("reward weight must be a symmetric matrix")
        if np.linalg.eigvalsh(W).min() < -1e-12:
            raise ValueError("reward weight must be positive semidefinite")
        object.__setattr__(self, "_W", W)
        idx = self.error_indices
        if idx is None:
            idx = tuple(int(i) for i in np.flatnonzero(np.diag(W)))
        object.__setattr__(self, "_idx", np.asarray(idx, dtype=int))

    @property
    def n(self) -> int:
        return self._W.shape[0]

    def _target(self, t):
        if self.target is None:
            return np.zeros(self.n)
        if callable(self.target):
            return np.asarray(self.target(t), dtype=float)
        return np.broadcast_to(np.asarray(self.target, dtype=float), (self.n,))

    def _active(self, terminal):
        return terminal or self.running

    def value(self, t, x, terminal=False):
        if not self._active(terminal):
            return 0.0
        e = np.asarray(x, dtype=float) - self._target(t)
        return float(-e @ self._W @ e)

    def grad(self, t, x, terminal=False):
        if not self._active(terminal):
            return np.zeros(self.n)
        e = np.asarray(x, dtype=float) - self._target(t)
        return -2.0 * (self._W @ e)

    def hess(self, t, x, terminal=False):
        if not self._active(terminal):
            return np.zeros((self.n, self.n))
        return -2.0 * self._W

    def tracking_error(self, t, x):
        e = np.asarray(x, dtype=float) - self._target(t)
        return e[self._idx]


@dataclass(frozen=True)
class CustomReward(Reward):
    """Reward from user callables ``f(t, x, terminal)``."""

    value_fn: Callable
    grad_fn: Callable
    hess_fn: Optional[Callable] = None
    error_fn: Optional[Callable] = None
    kind = "Custom"

    def value(self, t, x, terminal=False):
        return float(self.value_fn(t, np.asarray(x, dtype=float), terminal))

    def grad(self, t, x, terminal=False):
        return np.asarray(self.grad_fn(t, np.asarray(x, dtype=float), terminal), dtype=float)

    def hess(self, t, x, terminal=False):
        if self.hess_fn is None:
            raise NotImplementedError("no Hessian supplied for this reward")
        return np.asarray(self.hess_fn(t, np.asarray(x, dtype=float), terminal), dtype=float)

    def tracking_error(self, t, x):
        if self.error_fn is None:
            return np.zeros(0)
        return np.asarray(self.error_fn(t, np.asarray(x, dtype=float)), dtype=float)


def tracking_reward(policy, pos_weight: float = 1.0, speed_weight: float = 0.1) -> QuadraticTracking:
    """-pos_weight |pos error|^2 - speed_weight (speed error)^2 against the policy's reference.

    Position is the tracking error.  For the unicycle there is no speed state
    and only the position term applies.
    """
    tracking = getattr(policy, "tracking", policy)
    n = tracking.n
    w = np.zeros(n)
    w[:2] = pos_weight
    if n == 4:
        w[2] = speed_weight

    def target(t):
        return tracking.reference.desired_state(tracking.model_name, t * tracking.dt)

    return QuadraticTracking(w, target=target, error_indices=(0, 1))


# ---------------------------------------------------------------- estimates

@dataclass(frozen=True)
class GradientEstimate:
    g: np.ndarray
    form: str            # forward | backward | finite_diff
    source: str          # true | model
    horizon: int
    batch_size: int = 1
    seed: Optional[int] = None

    def __post_init__(self):
        g = np.asarray(self.g, dtype=float)
        if not np.all(np.isfinite(g)):
            raise FloatingPointError("gradient estimate has non-finite entries")
        g.flags.writeable = False
        object.__setattr__(self, "g", g)

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.g, dtype=dtype)

    @property
    def norm(self) -> float:
        return float(np.linalg.norm(self.g))


def relative_error(a, b, floor: float = 1e-300) -> float:
    """|a - b| / |b| in the 2-norm (absolute error when b = 0)."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    diff = float(np.linalg.norm(a - b))
    scale = float(np.linalg.norm(b))
    if scale <= floor:
        return diff
    return diff / scale


def _param_jac(traj: Trajectory, policy, theta) -> np.ndarray:
    if traj.param_jac is not None and (policy is None or traj.param_jac.shape[2] == policy.n_params):
        return traj.param_jac
    if policy is None:
        raise ValueError("trajectory carries no parameter Jacobians and no policy was given")
    return np.array([policy.jac_params(theta, t, traj.states[t]) for t in range(traj.horizon)])


def sensitivities_forward(traj: Trajectory, source: str = "model", policy=None, theta=None) -> np.ndarray:
    """dx_t/dtheta for t = 0..T as a (T+1, n, p) array."""
    A, B = traj.jacobians(source)
    P = _param_jac(traj, policy, theta)
    T = traj.horizon
    n = traj.states.shape[1]
    p = P.shape[2]
    S = np.zeros((T + 1, n, p))
    for t in range(T):
        Acl = A[t] + B[t] @ traj.K[t]
        S[t + 1] = Acl @ S[t] + B[t] @ P[t]
    return S


def reward_gradients(traj: Trajectory, reward: Reward) -> np.ndarray:
    T = traj.horizon
    return np.array([reward.grad(t, traj.states[t], terminal=(t == T)) for t in range(T + 1)])


def gradient_forward(traj: Trajectory, reward: Reward, sensitivities: np.ndarray,
                     source: str = "model") -> GradientEstimate:
    """g = sum_t grad R_t(x_t) . dx_t/dtheta."""
    dR = reward_gradients(traj, reward)
    g = np.einsum("tn,tnp->p", dR, sensitivities)
    return GradientEstimate(g, "forward", source, traj.horizon)


def costates(traj: Trajectory, source: str, reward: Reward) -> np.ndarray:
    """Row costates p_t, t = 0..T, as a (T+1, n) array."""
    A, B = traj.jacobians(source)
    dR = reward_gradients(traj, reward)
    T = traj.horizon
    p = np.empty_like(dR)
    p[T] = dR[T]
    for t in range(T - 1, -1, -1):
        p[t] = (p[t + 1] @ A[t] + (p[t + 1] @ B[t]) @ traj.K[t]) + dR[t]
    return p


def gradient_backward(traj: Trajectory, source: str, reward: Reward, policy=None,
                      theta=None) -> GradientEstimate:
    """Backpropagation through time: g = sum_t (p_{t+1} B_t) dpi_t/dtheta."""
    _, B = traj.jacobians(source)
    P = _param_jac(traj, policy, theta)
    p = costates(traj, source, reward)
    lam = np.einsum("tn,tnm->tm", p[1:], B)
    g = np.einsum("tm,tmp->p", lam, P) if traj.horizon else np.zeros(P.shape[2])
    return GradientEstimate(g, "backward", source, traj.horizon)


def objective(env: DynamicsModel, policy, theta, reward: Reward, x0, T: int) -> float:
    """J_T(theta; x0) = sum_{t=0}^{T} R_t(x_t) on the true system."""
    states, _ = simulate(env, policy, theta, x0, T)
    return float(sum(reward.value(t, states[t], terminal=(t == T)) for t in range(T + 1)))


def finite_difference_gradient(env: DynamicsModel, policy, theta, reward: Reward, x0, T: int,
                               h: Optional[float] = None) -> GradientEstimate:
    """Central differences of J_T; default step 1e-5 * max(1, |theta_i|)."""
    theta = np.asarray(theta, dtype=float)
    g = np.zeros_like(theta)
    for i in range(theta.size):
        hi = h if h is not None else 1e-5 * max(1.0, abs(theta[i]))
        if not hi > 0:
            raise ValueError("finite-difference step must be positive")
        tp = theta.copy()
        tm = theta.copy()
        tp[i] += hi
        tm[i] -= hi
        g[i] = (objective(env, policy, tp, reward, x0, T) - objective(env, policy, tm, reward, x0, T)) / (2 * hi)
    return GradientEstimate(g, "finite_diff", "true", T)


def single_gradient(env: DynamicsModel, model: Optional[DynamicsModel], policy, theta, reward: Reward,
                    x0, T: int, source: str = "model") -> tuple[GradientEstimate, Trajectory]:
    traj = rollout(env, model, policy, theta, x0, T)
    return gradient_backward(traj, source, reward), traj


def worker_count(workers: Optional[int] = None) -> int:
    if workers is None:
        workers = int(os.environ.get("POLGRAD_THREADS", "1") or 1)
    return max(1, int(workers))


def batch_gradient(env: DynamicsModel, model: Optional[DynamicsModel], policy, theta, reward: Reward,
                   T: int, init_dist: Optional[InitialDistribution] = None, N: int = 1,
                   seed: Optional[int] = None, x0s=None, workers: Optional[int] = None,
                   source: str = "model") -> GradientEstimate:
    """Mean of backward-form model-based gradients over N initial conditions.

    Initial conditions are drawn from ``init_dist`` with ``seed`` unless
    ``x0s`` is given.  Per-sample work may run on a thread pool, but the
    reduction is always summed in sample order.
    """
    if x0s is None:
        if init_dist is None:
            raise ValueError("need either init_dist or explicit x0s")
        x0s = sample_initial_conditions(init_dist, N, seed)
    x0s = np.atleast_2d(np.asarray(x0s, dtype=float))
    N = len(x0s)
    if N < 1:
        raise ValueError("N must be at least 1")

    def one(i):
        try:
            return single_gradient(env, model, policy, theta, reward, x0s[i], T, source)[0].g
        except DivergenceError as err:
            raise DivergenceError(err.step, sample=i) from err

    nw = min(worker_count(workers), N)
    if nw > 1:
        with ThreadPoolExecutor(max_workers=nw) as pool:
            gs = list(pool.map(one, range(N)))
    else:
        gs = [one(i) for i in range(N)]
    total = np.zeros(policy.n_params)
    for g in gs:
        total = total + g
    return GradientEstimate(total / N, "backward", source, T, batch_size=N, seed=seed)
