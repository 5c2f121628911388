"""Model-based policy learning: sample, roll out on the true system, ascend.

Each iteration draws N initial states, estimates the batch gradient with the
backward costate pass using the approximate model's Jacobians along the real
rollouts, and takes the step theta <- theta + alpha_k g.  Randomness comes
from one SeedSequence split into independent init/eval/train streams, so a
run is bitwise reproducible from its seed.
"""
from __future__ import annotations

import math
import os
import time
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .distributions import InitialDistribution, sample_initial_conditions
from .dynamics import DivergenceError, DynamicsModel, simulate
from .estimator import Reward, batch_gradient
from .policy import save_checkpoint

__all__ = [
    "TrainingConfig", "EvalResult", "LogEntry", "RunLog", "train", "evaluate",
    "iteration_seed", "initial_theta", "eval_set", "sample_initial_conditions",
]


@dataclass(frozen=True)
class TrainingConfig:
    env: DynamicsModel
    model: DynamicsModel
    policy: object
    reward: Reward
    init_dist: InitialDistribution
    T: int
    N: int = 5
    K: int = 15
    step_size: float = 0.1
    decay: float = 1.0               # alpha_k = step_size * decay**k
    seed: int = 0
    eval_size: int = 10
    theta0: Optional[np.ndarray] = None
    checkpoint_dir: Optional[str] = None
    workers: Optional[int] = None

    def __post_init__(self):
        if min(self.T, self.N, self.K, self.eval_size) < 1:
            raise ValueError("T, N, K and eval_size must all be at least 1")
        if not (self.step_size >= 0 and self.decay >= 0):
            raise ValueError("step sizes must be non-negative")
        if self.init_dist.dim != self.env.n:
            raise ValueError(f"initial distribution has dimension {self.init_dist.dim}, "
                             f"system state has {self.env.n}")
        if self.theta0 is not None and np.shape(self.theta0) != (self.policy.n_params,):
            raise ValueError(f"theta0 must have {self.policy.n_params} entries")

    def alpha(self, k: int) -> float:
        return self.step_size * self.decay ** k


def _streams(seed):
    init, ev, tr = np.random.SeedSequence(seed).spawn(3)
    return init, ev, tr


def iteration_seed(seed, k: int) -> int:
    """Integer seed of the batch drawn at iteration k of a run seeded with ``seed``."""
    _, _, tr = _streams(seed)
    return int(tr.spawn(k + 1)[k].generate_state(1)[0])


def initial_theta(config: TrainingConfig) -> np.ndarray:
    if config.theta0 is not None:
        return np.array(config.theta0, dtype=float)
    init, _, _ = _streams(config.seed)
    if hasattr(config.policy, "init_params"):
        return np.asarray(config.policy.init_params(np.random.default_rng(init)), dtype=float)
    return np.zeros(config.policy.n_params)


def eval_set(config: TrainingConfig) -> np.ndarray:
    _, ev, _ = _streams(config.seed)
    return sample_initial_conditions(config.init_dist, config.eval_size, ev)


# ---------------------------------------------------------------- evaluation

@dataclass(frozen=True)
class EvalResult:
    mean_reward: float
    rewards: np.ndarray
    rms_error: float
    clamp_events: int


def _clamps(env: DynamicsModel, inputs: np.ndarray) -> int:
    if env.input_bounds is None:
        return 0
    lo, hi = env.input_bounds
    return int(np.count_nonzero(np.any((inputs <= lo) | (inputs >= hi), axis=1)))


def evaluate(env: DynamicsModel, policy, theta, reward: Reward, x0s, T: int) -> EvalResult:
    """Rollouts on the true system only.

    ``rms_error`` is the root mean square of the reward's tracking error over
    all samples and steps 0..T; ``clamp_events`` counts saturated steps.
    """
    x0s = np.atleast_2d(np.asarray(x0s, dtype=float))
    rewards = np.empty(len(x0s))
    sq = 0.0
    count = 0
    clamps = 0
    for i, x0 in enumerate(x0s):
        states, inputs = simulate(env, policy, theta, x0, T)
        rewards[i] = sum(reward.value(t, states[t], terminal=(t == T)) for t in range(T + 1))
        for t in range(T + 1):
            e = reward.tracking_error(t, states[t])
            sq += float(e @ e)
            count += 1
        clamps += _clamps(env, inputs)
    rewards.flags.writeable = False
    return EvalResult(float(rewards.mean()), rewards, math.sqrt(sq / count), clamps)


# ---------------------------------------------------------------- training

@dataclass(frozen=True)
class LogEntry:
    iter: int
    mean_reward: float
    grad_norm: float     # norm of the step taken after this evaluation; NaN on the last row
    rms_error: float
    clamp_events: int
    wall_time: float
    checkpoint: Optional[str] = None


@dataclass
class RunLog:
    entries: list = field(default_factory=list)
    thetas: list = field(default_factory=list)

    @property
    def theta(self) -> np.ndarray:
        return self.thetas[-1]

    @property
    def rewards(self) -> np.ndarray:
        return np.array([e.mean_reward for e in self.entries])

    @property
    def rms_errors(self) -> np.ndarray:
        return np.array([e.rms_error for e in self.entries])


def train(config: TrainingConfig, callback: Optional[Callable] = None) -> RunLog:
    """Plain gradient ascent; ``callback(entry, theta)`` is called after each evaluation.

    Raises DivergenceError (with iteration and sample index) if a training
    rollout blows up and FloatingPointError on a non-finite gradient.
    """
    cfg = config
    theta = initial_theta(cfg)
    x_eval = eval_set(cfg)
    _, _, tr = _streams(cfg.seed)
    it_seeds = [int(s.generate_state(1)[0]) for s in tr.spawn(cfg.K)]
    if cfg.checkpoint_dir is not None:
        os.makedirs(cfg.checkpoint_dir, exist_ok=True)
    log = RunLog()
    start = time.perf_counter()
    for k in range(cfg.K + 1):
        ev = evaluate(cfg.env, cfg.policy, theta, cfg.reward, x_eval, cfg.T)
        g_norm = math.nan
        step = None
        if k < cfg.K:
            try:
                g = batch_gradient(cfg.env, cfg.model, cfg.policy, theta, cfg.reward, cfg.T,
                                   cfg.init_dist, cfg.N, seed=it_seeds[k], workers=cfg.workers)
            except DivergenceError as err:
                raise DivergenceError(err.step, sample=err.sample, iteration=k) from err
            except FloatingPointError as err:
                raise FloatingPointError(f"non-finite gradient at iteration {k}") from err
            g_norm = g.norm
            step = cfg.alpha(k) * g.g
        ckpt = None
        if cfg.checkpoint_dir is not None:
            ckpt = os.path.join(cfg.checkpoint_dir, f"theta_{k:04d}.json")
            save_checkpoint(ckpt, cfg.policy, theta)
        entry = LogEntry(k, ev.mean_reward, g_norm, ev.rms_error, ev.clamp_events,
                         time.perf_counter() - start, ckpt)
        log.entries.append(entry)
        log.thetas.append(theta.copy())
        if callback is not None:
            callback(entry, theta)
        if step is not None:
            theta = theta + step
    return log
