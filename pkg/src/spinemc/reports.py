"""Estimator reports: point estimate, error bars, confidence intervals."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

Z_95 = 1.9599639845400545
Z_99 = 2.5758293035489004


@dataclass(frozen=True)
class EstimateReport:
    """Monte Carlo estimate with normal-approximation confidence intervals.

    Wall time is carried on the in-memory report for operator feedback but is
    excluded from serialized payloads so that identical (config, seed) runs
    produce byte-identical output files.
    """

    name: str
    estimate: float
    std_error: float
    ci95: tuple[float, float]
    ci99: tuple[float, float]
    replicates: int
    seed: int
    wall_time: float = 0.0

    @staticmethod
    def from_values(
        name: str, values: np.ndarray, seed: int, wall_time: float = 0.0
    ) -> "EstimateReport":
        values = np.asarray(values, dtype=np.float64)
        n = values.size
        mean = float(values.mean()) if n else math.nan
        sd = float(values.std(ddof=1)) if n > 1 else 0.0
        se = sd / math.sqrt(n) if n else math.nan
        return EstimateReport(
            name=name,
            estimate=mean,
            std_error=se,
            ci95=(mean - Z_95 * se, mean + Z_95 * se),
            ci99=(mean - Z_99 * se, mean + Z_99 * se),
            replicates=n,
            seed=seed,
            wall_time=wall_time,
        )

    @staticmethod
    def from_moments(
        name: str,
        n: int,
        total: float,
        total_sq: float,
        seed: int,
        wall_time: float = 0.0,
    ) -> "EstimateReport":
        mean = total / n
        var = max(0.0, (total_sq - n * mean * mean) / (n - 1)) if n > 1 else 0.0
        se = math.sqrt(var / n)
        return EstimateReport(
            name=name,
            estimate=mean,
            std_error=se,
            ci95=(mean - Z_95 * se, mean + Z_95 * se),
            ci99=(mean - Z_99 * se, mean + Z_99 * se),
            replicates=n,
            seed=seed,
            wall_time=wall_time,
        )

    def covers(self, value: float, level: float = 0.99) -> bool:
        lo, hi = self.ci99 if level >= 0.99 else self.ci95
        return lo <= value <= hi

    def overlaps(self, other: "EstimateReport", level: float = 0.99) -> bool:
        a = self.ci99 if level >= 0.99 else self.ci95
        b = other.ci99 if level >= 0.99 else other.ci95
        return a[0] <= b[1] and b[0] <= a[1]

    def to_dict(self) -> dict:
        """Deterministic payload for JSON/CSV serialization (no wall time)."""
        return {
            "name": self.name,
            "estimate": self.estimate,
            "std_error": self.std_error,
            "ci95_low": self.ci95[0],
            "ci95_high": self.ci95[1],
            "ci99_low": self.ci99[0],
            "ci99_high": self.ci99[1],
            "replicates": self.replicates,
            "seed": self.seed,
        }

    CSV_FIELDS = (
        "name",
        "estimate",
        "std_error",
        "ci95_low",
        "ci95_high",
        "ci99_low",
        "ci99_high",
        "replicates",
        "seed",
    )
