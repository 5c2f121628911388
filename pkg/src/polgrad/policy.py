"""Policy classes with exact state- and parameter-Jacobians.

Every policy implements ``evaluate(theta, t, x) -> (u, K, P)`` where
``K = d pi_t / dx`` (m x n) and ``P = d pi_t / d theta`` (m x p), holding the
other arguments fixed.  The closed-loop dependence of ``x`` on ``theta`` is
the estimator's business, not the policy's.
"""
from __future__ import annotations

import json
import os
import tempfile
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .dynamics import MODELS
from .mlp import Mlp
from .reference import Figure8, ReferencePath


def wrap_angle(a):
    """Wrap to (-pi, pi]."""
    return np.pi - np.mod(np.pi - a, 2.0 * np.pi)


class Policy:
    kind = ""
    n: int
    m: int
    horizon: int

    @property
    def n_params(self) -> int:
        raise NotImplementedError

    def _check(self, theta, t):
        if not 0 <= t < self.horizon:
            raise IndexError(f"step {t} outside policy horizon [0, {self.horizon})")
        theta = np.asarray(theta, dtype=float)
        if theta.shape != (self.n_params,):
            raise ValueError(f"expected {self.n_params} parameters, got shape {theta.shape}")
        return theta

    def evaluate(self, theta, t: int, x) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        raise NotImplementedError

    def eval(self, theta, t: int, x) -> np.ndarray:
        return self.evaluate(theta, t, x)[0]

    def jac_state(self, theta, t: int, x) -> np.ndarray:
        return self.evaluate(theta, t, x)[1]

    def jac_params(self, theta, t: int, x) -> np.ndarray:
        return self.evaluate(theta, t, x)[2]

    def header(self) -> dict:
        return {"kind": self.kind, "n_params": self.n_params, "horizon": self.horizon}


@dataclass(frozen=True)
class OpenLoop(Policy):
    """u_t = theta[t]: the parameters are the input sequence itself."""

    horizon: int
    m: int = 1
    n: int = 1
    kind = "OpenLoop"

    @property
    def n_params(self) -> int:
        return self.horizon * self.m

    def evaluate(self, theta, t, x):
        theta = self._check(theta, t)
        u = theta[t * self.m:(t + 1) * self.m].copy()
        P = np.zeros((self.m, self.n_params))
        P[:, t * self.m:(t + 1) * self.m] = np.eye(self.m)
        return u, np.zeros((self.m, self.n)), P


@dataclass(frozen=True)
class Proportional(Policy):
    """u_t = G (xbar_t - x_t) with the waypoints xbar_t as parameters.

    ``gain`` is a scalar (n = m = 1) or an m x n matrix.
    """

    horizon: int
    gain: object = 1.0

    kind = "Proportional"

    def __post_init__(self):
        G = np.atleast_2d(np.asarray(self.gain, dtype=float))
        object.__setattr__(self, "_G", G)

    @property
    def m(self) -> int:
        return self._G.shape[0]

    @property
    def n(self) -> int:
        return self._G.shape[1]

    @property
    def n_params(self) -> int:
        return self.horizon * self.n

    def evaluate(self, theta, t, x):
        theta = self._check(theta, t)
        x = np.asarray(x, dtype=float).reshape(self.n)
        xbar = theta[t * self.n:(t + 1) * self.n]
        u = self._G @ (xbar - x)
        P = np.zeros((self.m, self.n_params))
        P[:, t * self.n:(t + 1) * self.n] = self._G
        return u, -self._G, P

    def header(self):
        h = super().header()
        h["gain"] = self._G.tolist()
        return h


def tracking_control(x, x_des, gains, model_name: str, turn_ff: float = 0.0, speed_ff: float = 0.0,
                     c_e: float = 1.0, c_perp: float = 1.0, bounds=None):
    """Body-frame tracking law.  Returns ``(u, du/dx, du/dx_des, du/dgains)``.

    Position error is rotated into the body frame as (e_par, e_perp).

    Car (x, y, v, phi):
        a = K_v (v_des + c_e e_par - v)
        w = turn_ff + K_w (wrap(phi_des - phi) + atan(c_perp e_perp))
    Unicycle (x, y, phi):
        v = speed_ff + K_v e_par
        w = turn_ff + K_w (wrap(phi_des - phi) + atan(c_perp e_perp))

    ``turn_ff`` is the reference curvature for the car (its heading rate is
    v * w) and the reference turn rate for the unicycle.  Components that
    saturate against ``bounds`` get zero derivative rows.
    """
    x = np.asarray(x, dtype=float)
    xd = np.asarray(x_des, dtype=float)
    Kv, Kw = float(gains[0]), float(gains[1])
    if model_name in ("KinematicCar", "CarHiFi"):
        ih, n = 3, 4
    elif model_name == "Unicycle":
        ih, n = 2, 3
    else:
        raise ValueError(f"no tracking law for model {model_name!r}")
    if x.shape != (n,) or xd.shape != (n,):
        raise ValueError(f"state and desired state must have shape ({n},)")

    phi = x[ih]
    c, s = np.cos(phi), np.sin(phi)
    ex, ey = xd[0] - x[0], xd[1] - x[1]
    e_par = c * ex + s * ey
    e_perp = -s * ex + c * ey
    dpar_dx = np.zeros(n)
    dpar_dx[:2] = (-c, -s)
    dpar_dx[ih] = e_perp
    dpar_dxd = np.zeros(n)
    dpar_dxd[:2] = (c, s)
    dperp_dx = np.zeros(n)
    dperp_dx[:2] = (s, -c)
    dperp_dx[ih] = -e_par
    dperp_dxd = np.zeros(n)
    dperp_dxd[:2] = (-s, c)
    e_head = np.zeros(n)
    e_head[ih] = 1.0

    lat = np.arctan(c_perp * e_perp)
    q = c_perp / (1.0 + (c_perp * e_perp) ** 2)
    steer_err = wrap_angle(xd[ih] - phi) + lat
    w = turn_ff + Kw * steer_err
    dw_dx = Kw * (-e_head + q * dperp_dx)
    dw_dxd = Kw * (e_head + q * dperp_dxd)

    if ih == 3:
        e_v = np.zeros(n)
        e_v[2] = 1.0
        speed_err = xd[2] + c_e * e_par - x[2]
        first = Kv * speed_err
        d1_dx = Kv * (c_e * dpar_dx - e_v)
        d1_dxd = Kv * (c_e * dpar_dxd + e_v)
        d1_dG = speed_err
    else:
        first = speed_ff + Kv * e_par
        d1_dx = Kv * dpar_dx
        d1_dxd = Kv * dpar_dxd
        d1_dG = e_par

    u = np.array([first, w])
    du_dx = np.vstack([d1_dx, dw_dx])
    du_dxd = np.vstack([d1_dxd, dw_dxd])
    du_dG = np.array([[d1_dG, 0.0], [0.0, steer_err]])
    if bounds is not None:
        lo, hi = bounds
        sat = (u < lo) | (u > hi)
        u = np.clip(u, lo, hi)
        du_dx[sat] = 0.0
        du_dxd[sat] = 0.0
        du_dG[sat] = 0.0
    return u, du_dx, du_dxd, du_dG


@dataclass(frozen=True)
class Tracking(Policy):
    """Nominal tracking controller mu(x, psi(t), G_bar); no parameters."""

    model_name: str
    reference: ReferencePath
    gains: tuple = (2.0, 2.0)
    dt: float = 0.1
    horizon: int = 55
    c_e: float = 1.0
    c_perp: float = 1.0

    kind = "Tracking"

    def __post_init__(self):
        if self.model_name not in ("KinematicCar", "CarHiFi", "Unicycle"):
            raise ValueError(f"no tracking law for model {self.model_name!r}")
        if not all(g > 0 for g in self.gains):
            raise ValueError("nominal gains must be strictly positive")

    @property
    def n(self) -> int:
        return MODELS[self.model_name].n

    @property
    def m(self) -> int:
        return 2

    @property
    def n_params(self) -> int:
        return 0

    @property
    def bounds(self):
        return MODELS[self.model_name].input_bounds

    def _chord(self, t: int):
        # direction and length of the step from reference sample t to t+1
        a, b = self.reference(t * self.dt), self.reference((t + 1) * self.dt)
        dx, dy = b.x - a.x, b.y - a.y
        return np.arctan2(dy, dx), np.hypot(dx, dy)

    def target(self, t: int):
        """(desired state, turn feedforward, speed feedforward) at step t.

        An Euler step moves along the current heading, so the desired heading
        and speed are those of the chord to the next reference sample and the
        turn feedforward is the change between consecutive chords.  This stays
        exact where the curvature flips between samples.  A stationary
        reference falls back to its own heading and turn rate.
        """
        r = self.reference(t * self.dt)
        xd = self.reference.desired_state(self.model_name, t * self.dt)
        head0, len0 = self._chord(t)
        head1, len1 = self._chord(t + 1)
        if len0 > 1e-12 and len1 > 1e-12:
            xd[-1] += wrap_angle(head0 - r.heading)
            speed = len0 / self.dt
            rate = wrap_angle(head1 - head0) / self.dt
        else:
            speed, rate = r.speed, r.turn_rate
        if self.model_name == "Unicycle":
            return xd, rate, speed
        xd[2] = speed
        return xd, (rate / speed if speed > 0 else 0.0), speed

    def control(self, x, x_des, gains, t: int):
        _, turn_ff, speed_ff = self.target(t)
        return tracking_control(x, x_des, gains, self.model_name, turn_ff, speed_ff,
                                self.c_e, self.c_perp, self.bounds)

    def evaluate(self, theta, t, x):
        self._check(theta, t)
        xd, _, _ = self.target(t)
        u, du_dx, _, _ = self.control(x, xd, self.gains, t)
        return u, du_dx, np.zeros((self.m, 0))

    def header(self):
        h = super().header()
        h.update(model=self.model_name, nominal_gains=list(self.gains), dt=self.dt,
                 c_e=self.c_e, c_perp=self.c_perp)
        return h


@dataclass(frozen=True)
class NeuralCorrection(Policy):
    """Tracking controller whose gains and reference are corrected by an MLP.

    pi(t, x) = mu(x, psi(t) + dx_des, G_bar + dG) with
    (dG, dx_des) = NN_theta(xi(t), x) and phase features
    xi(t) = (sin(2 pi t dt / period), cos(2 pi t dt / period)).
    """

    tracking: Tracking
    hidden: tuple = (64, 64)
    period: Optional[float] = None

    kind = "NeuralCorrection"

    def __post_init__(self):
        n_out = len(self.tracking.gains) + self.tracking.n
        net = Mlp((2 + self.tracking.n, *self.hidden, n_out))
        object.__setattr__(self, "net", net)
        period = self.period
        if period is None:
            ref = self.tracking.reference
            period = ref.lap_time if isinstance(ref, Figure8) else self.tracking.horizon * self.tracking.dt
        object.__setattr__(self, "_period", float(period))

    @property
    def n(self) -> int:
        return self.tracking.n

    @property
    def m(self) -> int:
        return self.tracking.m

    @property
    def horizon(self) -> int:
        return self.tracking.horizon

    @property
    def n_params(self) -> int:
        return self.net.n_params

    def init_params(self, rng: np.random.Generator) -> np.ndarray:
        return self.net.init(rng)

    def features(self, t: int) -> np.ndarray:
        ph = 2.0 * np.pi * t * self.tracking.dt / self._period
        return np.array([np.sin(ph), np.cos(ph)])

    def evaluate(self, theta, t, x):
        theta = self._check(theta, t)
        x = np.asarray(x, dtype=float)
        k = len(self.tracking.gains)
        inp = np.concatenate([self.features(t), x])
        out, d_theta, d_inp = self.net.jacobians(theta, inp)
        xd, _, _ = self.tracking.target(t)
        gains = np.asarray(self.tracking.gains, dtype=float) + out[:k]
        u, du_dx, du_dxd, du_dG = self.tracking.control(x, xd + out[k:], gains, t)
        D = np.hstack([du_dG, du_dxd])
        K = du_dx + D @ d_inp[:, 2:]
        P = D @ d_theta
        return u, K, P

    def header(self):
        h = self.tracking.header()
        h.update(kind=self.kind, n_params=self.n_params, layer_sizes=list(self.net.sizes),
                 period=self._period)
        return h


def save_checkpoint(path, policy: Policy, theta) -> None:
    """Write a JSON checkpoint: policy header plus the flat parameter vector.

    Floats are written with shortest round-trip repr, so loading is bit-exact.
    """
    theta = np.asarray(theta, dtype=float)
    doc = {"format": "polgrad-policy", "version": 1, "header": policy.header(),
           "theta": [float(v) for v in theta]}
    text = json.dumps(doc, indent=1, allow_nan=False)
    write_atomic(path, text)


def load_checkpoint(path) -> tuple[dict, np.ndarray]:
    with open(path) as fh:
        doc = json.load(fh)
    if doc.get("format") != "polgrad-policy":
        raise ValueError(f"{path} is not a policy checkpoint")
    theta = np.array(doc["theta"], dtype=float)
    header = doc["header"]
    if theta.shape != (header["n_params"],):
        raise ValueError("checkpoint parameter count does not match its header")
    return header, theta


def write_atomic(path, text: str) -> None:
    path = os.fspath(path)
    d = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
