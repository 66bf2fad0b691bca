"""Offspring laws with moments and size-biasing, and branch-rate functions."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

PMF_TOL = 1e-12


class DegenerateLawError(ValueError):
    """Size-biasing is undefined: the law puts all mass on zero children."""


@dataclass(frozen=True)
class OffspringLaw:
    """Finite-support probability mass function over child counts."""

    pmf: dict[int, float]

    def __post_init__(self) -> None:
        if not self.pmf:
            raise ValueError("offspring law needs at least one atom")
        for a, p in self.pmf.items():
            if not isinstance(a, int) or a < 0:
                raise ValueError(f"child count {a!r} must be a nonnegative int")
            if p < 0:
                raise ValueError(f"negative probability {p} at count {a}")
        total = math.fsum(self.pmf.values())
        if abs(total - 1.0) > PMF_TOL:
            raise ValueError(f"probabilities sum to {total}, not 1")
        # drop zero atoms, freeze iteration order
        clean = {a: p for a, p in sorted(self.pmf.items()) if p > 0.0}
        object.__setattr__(self, "pmf", clean)
        counts = np.array(sorted(clean), dtype=np.int64)
        probs = np.array([clean[int(a)] for a in counts], dtype=np.float64)
        object.__setattr__(self, "_counts", counts)
        object.__setattr__(self, "_probs", probs)
        object.__setattr__(self, "_cum", np.cumsum(probs))

    @property
    def support(self) -> tuple[int, ...]:
        return tuple(int(a) for a in self._counts)

    @property
    def max_count(self) -> int:
        return int(self._counts[-1])

    def moment(self, n: int) -> float:
        """n-th moment of the child count; the 0th is 1 by normalization."""
        if n < 0:
            raise ValueError("moment order must be nonnegative")
        return math.fsum(float(a) ** n * p for a, p in self.pmf.items())

    def factorial_moment(self, r: int) -> float:
        """E[A (A-1) ... (A-r+1)]."""
        out = 0.0
        for a, p in self.pmf.items():
            term = 1.0
            for i in range(r):
                term *= a - i
            out += term * p
        return out

    def size_bias(self, n: int) -> "OffspringLaw":
        """Law with mass at a proportional to a^n * pmf(a); kills the atom at 0."""
        if n < 1:
            raise ValueError("size-bias order must be positive")
        m = self.moment(n)
        if m <= 0.0:
            raise DegenerateLawError(
                "law concentrated at zero children; spine cannot continue"
            )
        biased = {a: float(a) ** n * p / m for a, p in self.pmf.items() if a > 0}
        # renormalize away rounding
        total = math.fsum(biased.values())
        return OffspringLaw({a: p / total for a, p in biased.items()})

    def sample(self, rng: np.random.Generator) -> int:
        u = rng.random()
        idx = int(np.searchsorted(self._cum, u, side="right"))
        idx = min(idx, len(self._counts) - 1)
        return int(self._counts[idx])

    @staticmethod
    def point_mass(a: int) -> "OffspringLaw":
        return OffspringLaw({a: 1.0})

    @staticmethod
    def binary() -> "OffspringLaw":
        return OffspringLaw({2: 1.0})


@dataclass(frozen=True)
class BranchRate:
    """Position-dependent branching rate with a declared upper bound.

    A constant rate enables exact exponential clocks; otherwise simulators
    thin a proposal process run at ``r_max``.
    """

    r_max: float
    constant: float | None = None
    fn: Callable[[float], float] | None = field(default=None, compare=False)

    def __post_init__(self) -> None:
        if self.r_max < 0:
            raise ValueError("rate bound must be nonnegative")
        if (self.constant is None) == (self.fn is None):
            raise ValueError("give exactly one of a constant rate or a rate function")
        if self.constant is not None and not 0 <= self.constant <= self.r_max:
            raise ValueError("constant rate must lie in [0, r_max]")

    @property
    def is_constant(self) -> bool:
        return self.constant is not None

    def __call__(self, y: float) -> float:
        r = self.constant if self.constant is not None else self.fn(y)
        if not 0.0 <= r <= self.r_max * (1 + 1e-12):
            raise ValueError(f"rate {r} at {y} escapes [0, {self.r_max}]")
        return r

    @staticmethod
    def const(value: float) -> "BranchRate":
        return BranchRate(r_max=value, constant=value)
