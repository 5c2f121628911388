"""Discrete-time systems with analytic Jacobians, and closed-loop rollouts.

Every model exposes ``step(x, u)`` and ``jacobians(x, u) -> (A, B)``.  All
updates are explicit Euler, exactly as printed for each system; there is no
sub-stepping.  Models that declare input bounds clamp ``u`` componentwise
before stepping.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np


class DivergenceError(RuntimeError):
    """A rollout produced a non-finite state."""

    def __init__(self, step: int, sample: Optional[int] = None, iteration: Optional[int] = None):
        self.step = step
        self.sample = sample
        self.iteration = iteration
        where = f"step {step}"
        if sample is not None:
            where += f", sample {sample}"
        if iteration is not None:
            where += f", iteration {iteration}"
        super().__init__(f"rollout diverged at {where}")


def _as_vector(v, size: int, what: str) -> np.ndarray:
    arr = np.asarray(v, dtype=float)
    if arr.ndim == 0:
        arr = arr.reshape(1)
    if arr.shape != (size,):
        raise ValueError(f"{what} must have shape ({size},), got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{what} has non-finite entries")
    return arr


class DynamicsModel:
    """Base class.  Subclasses are frozen dataclasses."""

    name: str = ""
    n: int = 0
    m: int = 0
    #: (lower, upper) input bounds, or None when unbounded
    input_bounds: Optional[tuple] = None

    def _f(self, x: np.ndarray, u: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def _jac(self, x: np.ndarray, u: np.ndarray):
        raise NotImplementedError

    @property
    def params(self) -> dict:
        return {}

    def clamp(self, u) -> tuple[np.ndarray, bool]:
        """Clamp ``u`` to the declared input set; returns (u, clamped?)."""
        u = _as_vector(u, self.m, "input")
        if self.input_bounds is None:
            return u, False
        lo, hi = self.input_bounds
        uc = np.clip(u, lo, hi)
        return uc, bool(np.any(uc != u))

    def check(self, x, u) -> tuple[np.ndarray, np.ndarray]:
        x = _as_vector(x, self.n, "state")
        u, _ = self.clamp(u)
        return x, u

    def step(self, x, u) -> np.ndarray:
        x, u = self.check(x, u)
        return self._f(x, u)

    def jacobians(self, x, u) -> tuple[np.ndarray, np.ndarray]:
        x, u = self.check(x, u)
        return self._jac(x, u)


@dataclass(frozen=True)
class ScalarLinear(DynamicsModel):
    """x+ = a x + b u."""

    a: float = 2.0
    b: float = 1.0
    name = "ScalarLinear"
    n = 1
    m = 1

    @property
    def params(self):
        return {"a": self.a, "b": self.b}

    def _f(self, x, u):
        return self.a * x + self.b * u

    def _jac(self, x, u):
        return np.array([[self.a]]), np.array([[self.b]])


_CAR_BOUNDS = (np.array([0.0, -1.0]), np.array([1.0, 1.0]))


@dataclass(frozen=True)
class CarHiFi(DynamicsModel):
    """Car with input scaling, quadratic drag and steering bias.

    State (x, y, v, phi), input (throttle a in [0, 1], steering w in [-1, 1]):

        x+   = x + v cos(phi) dt
        y+   = y + v sin(phi) dt
        v+   = v + (beta_a a - c_v v^2) dt
        phi+ = phi + (beta_omega w - b_omega) v dt
    """

    dt: float = 0.1
    beta_a: float = 1.0
    beta_omega: float = 1.0
    c_v: float = 0.025
    b_omega: float = 0.05
    name = "CarHiFi"
    n = 4
    m = 2
    input_bounds = _CAR_BOUNDS

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("dt must be positive")

    @property
    def params(self):
        return {"dt": self.dt, "beta_a": self.beta_a, "beta_omega": self.beta_omega,
                "c_v": self.c_v, "b_omega": self.b_omega}

    def mismatched(self, gamma: float) -> "CarHiFi":
        """Copy with all four physical parameters scaled by ``gamma``."""
        return replace(self, beta_a=gamma * self.beta_a, beta_omega=gamma * self.beta_omega,
                       c_v=gamma * self.c_v, b_omega=gamma * self.b_omega)

    def _f(self, x, u):
        px, py, v, phi = x
        a, w = u
        dt = self.dt
        return np.array([
            px + v * np.cos(phi) * dt,
            py + v * np.sin(phi) * dt,
            v + (self.beta_a * a - self.c_v * v * v) * dt,
            phi + (self.beta_omega * w - self.b_omega) * v * dt,
        ])

    def _jac(self, x, u):
        _, _, v, phi = x
        _, w = u
        dt = self.dt
        c, s = np.cos(phi), np.sin(phi)
        A = np.array([
            [1.0, 0.0, c * dt, -v * s * dt],
            [0.0, 1.0, s * dt, v * c * dt],
            [0.0, 0.0, 1.0 - 2.0 * self.c_v * v * dt, 0.0],
            [0.0, 0.0, (self.beta_omega * w - self.b_omega) * dt, 1.0],
        ])
        B = np.array([
            [0.0, 0.0],
            [0.0, 0.0],
            [self.beta_a * dt, 0.0],
            [0.0, self.beta_omega * v * dt],
        ])
        return A, B


@dataclass(frozen=True)
class KinematicCar(DynamicsModel):
    """Simplified car: no drag, unit input scaling, no steering bias.

    x+ = x + v cos(phi) dt, y+ = y + v sin(phi) dt, v+ = v + a dt,
    phi+ = phi + v w dt.  Turn rate is scaled by speed.
    """

    dt: float = 0.1
    name = "KinematicCar"
    n = 4
    m = 2
    input_bounds = _CAR_BOUNDS

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("dt must be positive")

    @property
    def params(self):
        return {"dt": self.dt}

    def _f(self, x, u):
        px, py, v, phi = x
        a, w = u
        dt = self.dt
        return np.array([
            px + v * np.cos(phi) * dt,
            py + v * np.sin(phi) * dt,
            v + a * dt,
            phi + v * w * dt,
        ])

    def _jac(self, x, u):
        _, _, v, phi = x
        _, w = u
        dt = self.dt
        c, s = np.cos(phi), np.sin(phi)
        A = np.array([
            [1.0, 0.0, c * dt, -v * s * dt],
            [0.0, 1.0, s * dt, v * c * dt],
            [0.0, 0.0, 1.0, 0.0],
            [0.0, 0.0, w * dt, 1.0],
        ])
        B = np.array([
            [0.0, 0.0],
            [0.0, 0.0],
            [dt, 0.0],
            [0.0, v * dt],
        ])
        return A, B


@dataclass(frozen=True)
class Unicycle(DynamicsModel):
    """Quadruped abstraction: inputs are commanded speed v and turn rate w.

    x+ = x + v cos(phi) dt, y+ = y + v sin(phi) dt, phi+ = phi + w dt.
    """

    dt: float = 0.1
    name = "Unicycle"
    n = 3
    m = 2

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("dt must be positive")

    @property
    def params(self):
        return {"dt": self.dt}

    def _f(self, x, u):
        px, py, phi = x
        v, w = u
        dt = self.dt
        return np.array([px + v * np.cos(phi) * dt, py + v * np.sin(phi) * dt, phi + w * dt])

    def _jac(self, x, u):
        _, _, phi = x
        v, _ = u
        dt = self.dt
        c, s = np.cos(phi), np.sin(phi)
        A = np.array([[1.0, 0.0, -v * s * dt], [0.0, 1.0, v * c * dt], [0.0, 0.0, 1.0]])
        B = np.array([[c * dt, 0.0], [s * dt, 0.0], [0.0, dt]])
        return A, B


MODELS = {cls.name: cls for cls in (ScalarLinear, KinematicCar, Unicycle, CarHiFi)}


def make_model(name: str, **params) -> DynamicsModel:
    """Build a model by name.  A ``gamma`` key on CarHiFi applies mismatch scaling."""
    if name not in MODELS:
        raise ValueError(f"unknown model {name!r}; expected one of {sorted(MODELS)}")
    gamma = params.pop("gamma", None)
    model = MODELS[name](**params)
    if gamma is not None:
        if not isinstance(model, CarHiFi):
            raise ValueError("gamma applies only to CarHiFi")
        model = model.mismatched(gamma)
    return model


def step(model: DynamicsModel, x, u) -> np.ndarray:
    return model.step(x, u)


def jacobians(model: DynamicsModel, x, u) -> tuple[np.ndarray, np.ndarray]:
    return model.jacobians(x, u)


@dataclass(frozen=True)
class Trajectory:
    """A rollout on the true system with linearizations along it.

    ``A_true``/``B_true`` come from the true model and ``A_model``/``B_model``
    from the approximate model, both evaluated at the same real
    ``(states[t], inputs[t])``.  ``K`` holds the policy state-Jacobians and
    ``param_jac`` the policy parameter-Jacobians dpi_t/dtheta.
    """

    states: np.ndarray        # (T+1, n)
    inputs: np.ndarray        # (T, m), as applied (after clamping)
    A_true: np.ndarray        # (T, n, n)
    B_true: np.ndarray        # (T, n, m)
    A_model: np.ndarray       # (T, n, n)
    B_model: np.ndarray       # (T, n, m)
    K: np.ndarray             # (T, m, n)
    param_jac: np.ndarray     # (T, m, p)
    clamped: np.ndarray = field(default=None)  # (T,) bool

    def __post_init__(self):
        for name in ("states", "inputs", "A_true", "B_true", "A_model", "B_model", "K",
                     "param_jac", "clamped"):
            arr = getattr(self, name)
            if isinstance(arr, np.ndarray):
                arr.flags.writeable = False

    @property
    def horizon(self) -> int:
        return self.inputs.shape[0]

    @property
    def clamp_events(self) -> int:
        return int(np.count_nonzero(self.clamped))

    def jacobians(self, source: str) -> tuple[np.ndarray, np.ndarray]:
        if source == "true":
            return self.A_true, self.B_true
        if source == "model":
            return self.A_model, self.B_model
        raise ValueError(f"jacobian source must be 'true' or 'model', got {source!r}")

    def closed_loop(self, source: str) -> np.ndarray:
        A, B = self.jacobians(source)
        return A + B @ self.K


def _saturated(model: DynamicsModel, u: np.ndarray) -> bool:
    if model.input_bounds is None:
        return False
    lo, hi = model.input_bounds
    return bool(np.any(u <= lo) or np.any(u >= hi))


def rollout(true_model: DynamicsModel, model: Optional[DynamicsModel], policy, theta, x0,
            T: int) -> Trajectory:
    """Unroll ``policy`` on ``true_model`` for ``T`` steps from ``x0``.

    ``model`` (defaults to ``true_model``) only supplies the Jacobians stored
    alongside the true ones.  A step counts as clamped when the applied input
    touches the boundary of the input set.
    """
    if model is None:
        model = true_model
    if model.n != true_model.n or model.m != true_model.m:
        raise ValueError("true and approximate models have different dimensions")
    if T < 0:
        raise ValueError("horizon must be non-negative")
    n, m = true_model.n, true_model.m
    theta = np.asarray(theta, dtype=float)
    p = policy.n_params
    x = _as_vector(x0, n, "initial state")

    states = np.empty((T + 1, n))
    inputs = np.empty((T, m))
    A_t = np.empty((T, n, n))
    B_t = np.empty((T, n, m))
    A_m = np.empty((T, n, n))
    B_m = np.empty((T, n, m))
    K = np.empty((T, m, n))
    P = np.empty((T, m, p))
    clamped = np.zeros(T, dtype=bool)
    states[0] = x
    for t in range(T):
        u, K[t], P[t] = policy.evaluate(theta, t, x)
        if not np.all(np.isfinite(u)):
            raise DivergenceError(t)
        u, hit = true_model.clamp(u)
        clamped[t] = hit or _saturated(true_model, u)
        inputs[t] = u
        A_t[t], B_t[t] = true_model._jac(x, u)
        A_m[t], B_m[t] = model._jac(x, u)
        x = true_model._f(x, u)
        if not np.all(np.isfinite(x)):
            raise DivergenceError(t + 1)
        states[t + 1] = x
    return Trajectory(states, inputs, A_t, B_t, A_m, B_m, K, P, clamped)


def simulate(true_model: DynamicsModel, policy, theta, x0, T: int) -> tuple[np.ndarray, np.ndarray]:
    """Rollout without any Jacobians; returns (states, inputs)."""
    n = true_model.n
    theta = np.asarray(theta, dtype=float)
    x = _as_vector(x0, n, "initial state")
    states = np.empty((T + 1, n))
    inputs = np.empty((T, true_model.m))
    states[0] = x
    for t in range(T):
        u, _ = true_model.clamp(policy.eval(theta, t, x))
        inputs[t] = u
        x = true_model._f(x, u)
        if not np.all(np.isfinite(x)):
            raise DivergenceError(t + 1)
        states[t + 1] = x
    return states, inputs
