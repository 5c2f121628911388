"""Initial-state distributions D."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class InitialDistribution:
    """``point`` (a = the point), ``uniform`` (box [a, b]) or ``gaussian`` (mean a, diagonal std b)."""

    kind: str
    a: tuple
    b: tuple = ()

    def __post_init__(self):
        if self.kind not in ("point", "uniform", "gaussian"):
            raise ValueError(f"unknown initial distribution {self.kind!r}")
        a = tuple(float(v) for v in np.atleast_1d(self.a))
        b = tuple(float(v) for v in np.atleast_1d(self.b)) if self.kind != "point" else ()
        if self.kind != "point" and len(b) != len(a):
            raise ValueError("distribution parameters must have matching lengths")
        if self.kind == "uniform" and any(hi < lo for lo, hi in zip(a, b)):
            raise ValueError("uniform box has upper < lower")
        if self.kind == "gaussian" and any(sd < 0 for sd in b):
            raise ValueError("gaussian std must be non-negative")
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", b)

    @property
    def dim(self) -> int:
        return len(self.a)

    @property
    def mean(self) -> np.ndarray:
        a = np.array(self.a)
        return 0.5 * (a + np.array(self.b)) if self.kind == "uniform" else a

    def sample(self, N: int, rng: np.random.Generator) -> np.ndarray:
        a = np.array(self.a)
        if self.kind == "point":
            return np.tile(a, (N, 1))
        b = np.array(self.b)
        if self.kind == "uniform":
            return rng.uniform(a, b, size=(N, len(a)))
        return rng.normal(a, b, size=(N, len(a)))


def sample_initial_conditions(dist: InitialDistribution, N: int, seed) -> np.ndarray:
    """N i.i.d. draws as an (N, n) array; identical for identical seeds."""
    if N < 1:
        raise ValueError("N must be at least 1")
    return dist.sample(N, np.random.default_rng(seed))
