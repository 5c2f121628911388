"""Experiment config files.

INI layout with JSON-typed values.  ``seed`` is mandatory and sits above the
first section; the sections are [env], [model], [policy], [reward], [train]
and [study].  Unknown sections or keys are errors, reported with their line.

    seed = 7

    [env]
    model = "ScalarLinear"        # ScalarLinear | CarHiFi | KinematicCar | Unicycle
    a = 2.0
    init = "uniform"              # point | uniform | gaussian
    init_a = [-1.0]
    init_b = [1.0]

    [model]
    model = "ScalarLinear"        # or "exact": the env itself
    a = 2.2

    [policy]
    class = "open_loop"           # open_loop | proportional | tracking | neural
    theta = 0.0

    [reward]
    kind = "quadratic"            # quadratic | tracking
    weight = 0.5

    [train]
    T = 10
    N = 4
    K = 20
    step_size = 0.01
"""
from __future__ import annotations

import configparser
import json
import re
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .distributions import InitialDistribution
from .dynamics import MODELS, make_model
from .estimator import QuadraticTracking, tracking_reward
from .policy import NeuralCorrection, OpenLoop, Proportional, Tracking
from .reference import Figure8
from .trainer import TrainingConfig

_TOP = "__top__"

_MODEL_KEYS = {"model", "a", "b", "dt", "beta_a", "beta_omega", "c_v", "b_omega", "gamma"}

SCHEMA = {
    _TOP: {"seed"},
    "env": _MODEL_KEYS - {"gamma"} | {"init", "init_a", "init_b"},
    "model": _MODEL_KEYS,
    "policy": {"class", "horizon", "theta", "gain", "reference", "diameter", "lap_time",
               "clockwise_first", "gains", "c_e", "c_perp", "hidden", "dt"},
    "reward": {"kind", "weight", "target", "running", "pos_weight", "speed_weight"},
    "train": {"T", "N", "K", "step_size", "decay", "eval_size", "checkpoints"},
    "study": {"name", "horizons", "N", "seeds", "bias_samples", "quantities"},
}

ENUMS = {
    ("env", "model"): tuple(MODELS),
    ("model", "model"): tuple(MODELS) + ("exact",),
    ("env", "init"): ("point", "uniform", "gaussian"),
    ("policy", "class"): ("open_loop", "proportional", "tracking", "neural"),
    ("policy", "reference"): ("figure8",),
    ("reward", "kind"): ("quadratic", "tracking"),
}

_INTS = {("train", "T"), ("train", "N"), ("train", "K"), ("train", "eval_size"),
         ("study", "N"), ("study", "seeds"), ("study", "bias_samples"), ("policy", "horizon"),
         (_TOP, "seed")}


class ConfigError(ValueError):
    pass


def _line_index(text: str) -> dict:
    """(section, key) -> 1-based line number in the original text."""
    where = {}
    section = _TOP
    for no, line in enumerate(text.splitlines(), start=1):
        s = line.strip()
        m = re.match(r"\[(.+)\]$", s)
        if m:
            section = m.group(1).strip()
            where[(section, None)] = no
            continue
        m = re.match(r"([^=:#;\s][^=:]*?)\s*[=:]", s)
        if m:
            where.setdefault((section, m.group(1).strip()), no)
    return where


@dataclass(frozen=True)
class ExperimentConfig:
    seed: int
    sections: dict = field(default_factory=dict)
    source: str = "<string>"

    def section(self, name: str) -> dict:
        return dict(self.sections.get(name, {}))

    def with_seed(self, seed: Optional[int]) -> "ExperimentConfig":
        if seed is None:
            return self
        return ExperimentConfig(int(seed), self.sections, self.source)


def parse_config(text: str, source: str = "<string>") -> ExperimentConfig:
    lines = _line_index(text)

    def loc(section, key=None):
        no = lines.get((section, key))
        return f"{source}:{no}" if no else source

    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#",))
    cp.optionxform = str
    try:
        cp.read_string(f"[{_TOP}]\n" + text, source=source)
    except configparser.Error as err:
        msg = re.sub(r"line (\d+)", lambda m: f"line {int(m.group(1)) - 1}", str(err))
        raise ConfigError(f"{source}: cannot parse config: {msg}") from None

    sections = {}
    for name in cp.sections():
        if name not in SCHEMA:
            raise ConfigError(f"{loc(name)}: unknown section [{name}]")
        values = {}
        for key, raw in cp.items(name):
            if key not in SCHEMA[name]:
                label = "top level" if name == _TOP else f"[{name}]"
                raise ConfigError(f"{loc(name, key)}: unknown key {key!r} in {label}")
            try:
                value = json.loads(raw)
            except json.JSONDecodeError:
                raise ConfigError(f"{loc(name, key)}: value of {key!r} is not valid JSON: {raw!r}") from None
            allowed = ENUMS.get((name, key))
            if allowed is not None and value not in allowed:
                raise ConfigError(f"{loc(name, key)}: {key} = {value!r} is not one of {list(allowed)}")
            if (name, key) in _INTS and not (isinstance(value, int) and not isinstance(value, bool)):
                raise ConfigError(f"{loc(name, key)}: {key} must be an integer")
            values[key] = value
        sections[name] = values

    top = sections.pop(_TOP, {})
    if "seed" not in top:
        raise ConfigError(f"{source}: missing required key 'seed' (top level, before any section)")
    if "env" not in sections:
        raise ConfigError(f"{source}: missing required section [env]")
    if "model" not in sections["env"]:
        raise ConfigError(f"{loc('env')}: missing required key 'model' in [env]")
    return ExperimentConfig(top["seed"], sections, source)


def load_config(path) -> ExperimentConfig:
    with open(path) as fh:
        return parse_config(fh.read(), str(path))


# ---------------------------------------------------------------- builders

def _require(cfg: ExperimentConfig, section: str, key: str):
    sec = cfg.section(section)
    if key not in sec:
        raise ConfigError(f"{cfg.source}: missing required key {key!r} in [{section}]")
    return sec[key]


def _model_from(values: dict):
    params = {k: v for k, v in values.items() if k in _MODEL_KEYS and k != "model"}
    return make_model(values["model"], **params)


def build_env(cfg: ExperimentConfig):
    env = cfg.section("env")
    try:
        return _model_from(env)
    except (TypeError, ValueError) as err:
        raise ConfigError(f"{cfg.source}: [env]: {err}") from None


def build_model(cfg: ExperimentConfig):
    values = cfg.section("model")
    if not values or values.get("model", "exact") == "exact":
        if set(values) - {"model"}:
            raise ConfigError(f"{cfg.source}: [model] model = \"exact\" takes no parameters")
        return build_env(cfg)
    if "model" not in values:
        raise ConfigError(f"{cfg.source}: missing required key 'model' in [model]")
    try:
        return _model_from(values)
    except (TypeError, ValueError) as err:
        raise ConfigError(f"{cfg.source}: [model]: {err}") from None


def build_init_dist(cfg: ExperimentConfig) -> InitialDistribution:
    env = cfg.section("env")
    n = MODELS[env["model"]].n
    kind = env.get("init", "point")
    a = env.get("init_a", [0.0] * n)
    b = env.get("init_b", [])
    try:
        dist = InitialDistribution(kind, tuple(np.atleast_1d(a)), tuple(np.atleast_1d(b)))
    except (TypeError, ValueError) as err:
        raise ConfigError(f"{cfg.source}: [env] initial distribution: {err}") from None
    if dist.dim != n:
        raise ConfigError(f"{cfg.source}: [env] init_a has {dist.dim} entries, state has {n}")
    return dist


def _reference(values: dict):
    return Figure8(values.get("diameter", 3.0), values.get("lap_time", 5.5),
                   bool(values.get("clockwise_first", False)))


def build_policy(cfg: ExperimentConfig, T: int):
    values = cfg.section("policy")
    cls = values.get("class", "open_loop")
    env_name = cfg.section("env")["model"]
    n, m = MODELS[env_name].n, MODELS[env_name].m
    horizon = values.get("horizon", T)
    if horizon < T:
        raise ConfigError(f"{cfg.source}: [policy] horizon {horizon} is shorter than T = {T}")
    try:
        if cls == "open_loop":
            return OpenLoop(horizon, m=m, n=n)
        if cls == "proportional":
            return Proportional(horizon, values.get("gain", 1.0))
        if env_name not in ("KinematicCar", "CarHiFi", "Unicycle"):
            raise ConfigError(f"{cfg.source}: [policy] class {cls!r} needs a car or unicycle env")
        dt = values.get("dt", cfg.section("env").get("dt", 0.1))
        tracking = Tracking(env_name if env_name != "CarHiFi" else "KinematicCar", _reference(values),
                            gains=tuple(values.get("gains", (2.0, 2.0))), dt=dt, horizon=horizon,
                            c_e=values.get("c_e", 1.0), c_perp=values.get("c_perp", 1.0))
        if cls == "tracking":
            return tracking
        return NeuralCorrection(tracking, hidden=tuple(values.get("hidden", (64, 64))))
    except (TypeError, ValueError) as err:
        raise ConfigError(f"{cfg.source}: [policy]: {err}") from None


def build_theta(cfg: ExperimentConfig, policy) -> np.ndarray:
    """Explicit ``theta`` (fill value or full vector), else the policy's seeded init, else zeros."""
    values = cfg.section("policy")
    p = policy.n_params
    if "theta" in values:
        th = np.asarray(values["theta"], dtype=float)
        if th.ndim == 0:
            return np.full(p, float(th))
        if th.shape != (p,):
            raise ConfigError(f"{cfg.source}: [policy] theta has {th.size} entries, policy has {p}")
        return th
    if hasattr(policy, "init_params"):
        init = np.random.SeedSequence(cfg.seed).spawn(3)[0]
        return policy.init_params(np.random.default_rng(init))
    return np.zeros(p)


def build_reward(cfg: ExperimentConfig, policy):
    values = cfg.section("reward")
    kind = values.get("kind", "quadratic")
    try:
        if kind == "tracking":
            return tracking_reward(policy, values.get("pos_weight", 1.0), values.get("speed_weight", 0.1))
        return QuadraticTracking(values.get("weight", 1.0), values.get("target"),
                                 bool(values.get("running", True)))
    except (TypeError, ValueError, AttributeError) as err:
        raise ConfigError(f"{cfg.source}: [reward]: {err}") from None


def train_settings(cfg: ExperimentConfig) -> dict:
    values = cfg.section("train")
    T = _require(cfg, "train", "T")
    out = {"T": T, "N": values.get("N", 1), "K": values.get("K", 1),
           "step_size": float(values.get("step_size", 0.1)), "decay": float(values.get("decay", 1.0)),
           "eval_size": values.get("eval_size", 10), "checkpoints": bool(values.get("checkpoints", True))}
    if min(out["T"], out["N"], out["K"], out["eval_size"]) < 1:
        raise ConfigError(f"{cfg.source}: [train] T, N, K and eval_size must be >= 1")
    if out["step_size"] < 0 or out["decay"] < 0:
        raise ConfigError(f"{cfg.source}: [train] step_size and decay must be >= 0")
    return out


def study_settings(cfg: ExperimentConfig) -> dict:
    values = cfg.section("study")
    horizons = _require(cfg, "study", "horizons")
    if not isinstance(horizons, list) or not all(isinstance(h, int) for h in horizons):
        raise ConfigError(f"{cfg.source}: [study] horizons must be a list of integers")
    if len(horizons) < 5:
        raise ConfigError(f"{cfg.source}: [study] horizons needs at least 5 values, got {len(horizons)}")
    if any(b <= a for a, b in zip(horizons, horizons[1:])) or horizons[0] < 1:
        raise ConfigError(f"{cfg.source}: [study] horizons must be positive and strictly increasing")
    quantities = tuple(values.get("quantities", ["bias", "variance", "hessian"]))
    bad = set(quantities) - {"bias", "variance", "hessian"}
    if bad:
        raise ConfigError(f"{cfg.source}: [study] unknown quantities {sorted(bad)}")
    return {"name": str(values.get("name", "study")), "horizons": tuple(horizons),
            "N": values.get("N", 1), "n_seeds": values.get("seeds", 64),
            "bias_samples": values.get("bias_samples", 16), "quantities": quantities}


def training_config(cfg: ExperimentConfig, checkpoint_dir: Optional[str] = None) -> TrainingConfig:
    """The TrainingConfig a config file describes; checkpoints only if [train] allows them."""
    ts = train_settings(cfg)
    policy = build_policy(cfg, ts["T"])
    return TrainingConfig(env=build_env(cfg), model=build_model(cfg), policy=policy,
                          reward=build_reward(cfg, policy), init_dist=build_init_dist(cfg), T=ts["T"],
                          N=ts["N"], K=ts["K"], step_size=ts["step_size"], decay=ts["decay"], seed=cfg.seed,
                          eval_size=ts["eval_size"], theta0=build_theta(cfg, policy),
                          checkpoint_dir=checkpoint_dir if ts["checkpoints"] else None)
