"""Verification suites: the operational checks behind the verify commands.

``run_verify_discrete`` sweeps the built-in grid of discrete models and
compares the exact population-side and skeleton-side computations case by
case.  ``run_verify_ct`` bundles the statistical continuous-time checks:
estimator agreement against closed forms, unit-mean weight processes,
conditional mark-placement normalization, and the split-time law.  Both
return structured results; the command layer handles files and figures.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import partial

import numpy as np
from scipy import stats

from ._util import replicate_rng
from .core import spine_probability
from .estimators import (
    ConstantOne,
    _z_value,
    _zeta_tilde_value,
    estimate_direct,
    estimate_max_positions,
    estimate_spine,
    many_to_two_closed_form,
    ones,
    run_replicates,
    survival_report,
    tail_lower_bound,
    tail_upper_bound,
)
from .laws import BranchRate, OffspringLaw
from .motion import BrownianMotion, DiscreteChain
from .reports import EstimateReport
from .sim_ct import BranchingModel, gibbs_tuple_weights, sample_split_time, simulate_p
from .sim_dt import (
    DiscreteModel,
    OracleBudgetError,
    gibbs_tuple_weights_dt,
    oracle_lhs,
    oracle_rhs,
    simulate_p_dt,
)

E = math.e
YULE = BranchingModel(BrownianMotion(), BranchRate.const(1.0), OffspringLaw.binary(), 0.0)
YULE_TILTED = BranchingModel(
    BrownianMotion(tilt_drift=1.0), BranchRate.const(1.0), OffspringLaw.binary(), 0.0
)


@dataclass(frozen=True)
class Check:
    name: str
    passed: bool
    detail: str

    def line(self) -> str:
        return f"{'PASS' if self.passed else 'FAIL'}  {self.name}: {self.detail}"


# ---------------------------------------------------------------------------
# discrete grid
# ---------------------------------------------------------------------------

GRID_LAWS = {
    "pm2": {2: 1.0},
    "half-0-2": {0: 0.5, 2: 0.5},
    "half-1-2": {1: 0.5, 2: 0.5},
    "third-0-1-3": {0: 1 / 3, 1: 1 / 3, 3: 1 / 3},
}
GRID_CHAINS = {
    "one-state": ((1.0,),),
    "two-state": ((0.7, 0.3), (0.4, 0.6)),
}
GRID_TILTS = {"plain": None, "eigen-tilt": 0.5}
GRID_KS = (1, 2, 3)
GRID_NS = (1, 2, 3, 4)
IDENTITY_RTOL = 1e-10


@dataclass(frozen=True)
class GridCase:
    law: str
    chain: str
    zeta: str
    k: int
    n: int
    lhs: float
    rhs: float
    abs_diff: float
    within: bool
    skipped: bool = False

    def row(self) -> dict:
        return {
            "law": self.law,
            "chain": self.chain,
            "zeta": self.zeta,
            "k": self.k,
            "n": self.n,
            "lhs": self.lhs,
            "rhs": self.rhs,
            "abs_diff": self.abs_diff,
            "within_tolerance": self.within,
            "skipped": self.skipped,
        }


GRID_CSV_FIELDS = (
    "law", "chain", "zeta", "k", "n", "lhs", "rhs",
    "abs_diff", "within_tolerance", "skipped",
)


@dataclass(frozen=True)
class DiscreteVerifyResult:
    cases: list[GridCase]
    per_edge_m: bool

    @property
    def evaluated(self) -> int:
        return sum(1 for c in self.cases if not c.skipped)

    @property
    def failures(self) -> int:
        return sum(1 for c in self.cases if not c.skipped and not c.within)

    @property
    def passed(self) -> bool:
        return self.failures == 0


def run_verify_discrete(
    *, per_edge_m: bool = False, tolerance: float = IDENTITY_RTOL
) -> DiscreteVerifyResult:
    """Sweep the built-in grid and compare the two exact computations."""
    cases: list[GridCase] = []
    for law_name, pmf in GRID_LAWS.items():
        law = OffspringLaw(dict(pmf))
        for chain_name, matrix in GRID_CHAINS.items():
            for tilt_name, theta in GRID_TILTS.items():
                chain = DiscreteChain(matrix, tilt_theta=theta)
                for k in GRID_KS:
                    for n in GRID_NS:
                        model = DiscreteModel(chain, law, n, k)
                        try:
                            lhs = oracle_lhs(model)
                            rhs = oracle_rhs(model, per_edge_m=per_edge_m)
                        except OracleBudgetError:
                            cases.append(
                                GridCase(law_name, chain_name, tilt_name, k, n,
                                         math.nan, math.nan, math.nan, False, True)
                            )
                            continue
                        diff = abs(lhs - rhs)
                        cases.append(
                            GridCase(
                                law_name, chain_name, tilt_name, k, n, lhs, rhs,
                                diff, diff <= tolerance * (1.0 + abs(lhs)),
                            )
                        )
    return DiscreteVerifyResult(cases=cases, per_edge_m=per_edge_m)


# ---------------------------------------------------------------------------
# continuous-time suite
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CTVerifyResult:
    checks: list[Check]
    reports: list[EstimateReport]
    split_samples: np.ndarray = field(default_factory=lambda: np.empty(0))
    ks_pvalue: float = math.nan

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)


def _split_time_task(model: BranchingModel, seed: int, index: int) -> float:
    rng = replicate_rng(seed, index)
    return sample_split_time(model, rng)


def split_time_samples(
    model: BranchingModel, replicates: int, seed: int, workers: int = 1
) -> np.ndarray:
    return run_replicates(partial(_split_time_task, model), replicates, seed, workers)


def split_time_ks(samples: np.ndarray, rate: float = 2.0) -> float:
    """Kolmogorov-Smirnov p-value against the exponential of the given rate."""
    return float(stats.kstest(samples, "expon", args=(0.0, 1.0 / rate)).pvalue)


def gibbs_normalization_check(
    model: BranchingModel,
    k: int,
    t: float,
    trees: int,
    seed: int,
    *,
    tol: float = 1e-10,
) -> tuple[int, float]:
    """Sum the conditional mark-placement weights on simulated trees.

    Returns (trees with at least one live tuple, worst |sum - 1|).
    """
    worst = 0.0
    used = 0
    for i in range(trees):
        rng = replicate_rng(seed, i)
        tree = simulate_p(model, t, rng, max_population=200_000)
        weights = gibbs_tuple_weights(tree, model, t, k)
        if not weights:
            continue
        used += 1
        worst = max(worst, abs(math.fsum(weights.values()) - 1.0))
    return used, worst


def gibbs_vs_uniform_spines_dt(
    model: DiscreteModel, trees: int, seed: int
) -> float:
    """Worst tuple-wise gap between the tilted conditional weights and the
    uniform-choice probabilities, on plain simulated discrete trees.

    The two coincide exactly when the functional is trivial and the offspring
    count is deterministic.
    """
    worst = 0.0
    for i in range(trees):
        rng = replicate_rng(seed, i)
        tree = simulate_p_dt(model, rng)
        weights = gibbs_tuple_weights_dt(tree, model, model.k)
        for labels, w in weights.items():
            p = spine_probability(tree, labels, float(model.horizon))
            worst = max(worst, abs(w - p))
    return worst


def unit_mean_reports(
    model: BranchingModel,
    k_values: tuple[int, ...],
    t_values: tuple[float, ...],
    replicates: int,
    seed: int,
    workers: int = 1,
    *,
    tag: str = "",
) -> list[EstimateReport]:
    """Sample means of the mark-level and tree-level weight processes."""
    out = []
    for k in k_values:
        for t in t_values:
            task = partial(_zeta_tilde_value, model, t, k, 1_000_000)
            values = run_replicates(task, replicates, seed, workers)
            out.append(
                EstimateReport.from_values(f"mark-weight{tag}[k={k},t={t}]", values, seed)
            )
            task = partial(_z_value, model, t, k, 1_000_000, 2_000_000)
            values = run_replicates(task, replicates, seed, workers)
            out.append(
                EstimateReport.from_values(f"tree-weight{tag}[k={k},t={t}]", values, seed)
            )
    return out


def run_verify_ct(
    seed: int,
    *,
    replicates: int = 20_000,
    unit_mean_replicates: int = 4_000,
    gibbs_trees: int = 100,
    ks_samples: int = 10_000,
    workers: int = 1,
    unsound_plain_rate: bool = False,
) -> CTVerifyResult:
    """Bundle of continuous-time checks on the binary unit-rate model."""
    checks: list[Check] = []
    reports: list[EstimateReport] = []

    # estimator agreement with the closed forms
    m2_target = many_to_two_closed_form(ConstantOne(), ConstantOne(), 1.0)
    direct1 = estimate_direct(YULE, ones(1), 1.0, replicates, seed, workers=workers)
    spine1 = estimate_spine(
        YULE, ones(1), 1.0, replicates, seed, workers=workers,
        unsound_plain_rate=unsound_plain_rate,
    )
    direct2 = estimate_direct(YULE, ones(2), 1.0, replicates, seed, workers=workers)
    spine2 = estimate_spine(
        YULE, ones(2), 1.0, replicates, seed, workers=workers,
        unsound_plain_rate=unsound_plain_rate,
    )
    reports += [direct1, spine1, direct2, spine2]
    checks.append(
        Check(
            "single-sum closed form", direct1.covers(E) and abs(spine1.estimate - E) < 1e-9,
            f"direct {direct1.estimate:.5f} (ci99 {direct1.ci99[0]:.5f}..{direct1.ci99[1]:.5f}), "
            f"skeleton {spine1.estimate:.12f} vs {E:.12f}",
        )
    )
    checks.append(
        Check(
            "pair-sum closed form",
            direct2.covers(m2_target) and spine2.covers(m2_target),
            f"target {m2_target:.5f}, direct {direct2.estimate:.5f}, skeleton {spine2.estimate:.5f}",
        )
    )

    # unit-mean weight processes, plain and drift-tilted functional
    for tag, model in (("", YULE), ("/tilted", YULE_TILTED)):
        for rep in unit_mean_reports(
            model, (1, 2), (0.25, 0.5, 1.0), unit_mean_replicates, seed,
            workers=workers, tag=tag,
        ):
            reports.append(rep)
            checks.append(
                Check(
                    rep.name, rep.covers(1.0),
                    f"mean {rep.estimate:.4f} +- {rep.std_error:.4f}",
                )
            )

    # conditional mark placement sums to 1 per tree
    used, worst = gibbs_normalization_check(YULE_TILTED, 2, 0.6, gibbs_trees, seed + 1)
    checks.append(
        Check(
            "mark-placement normalization", worst <= 1e-10 and used > 0,
            f"{used} trees, worst |sum-1| = {worst:.2e}",
        )
    )
    dt_model = DiscreteModel(
        DiscreteChain(((0.7, 0.3), (0.4, 0.6))), OffspringLaw.binary(), 3, 2
    )
    worst_dt = gibbs_vs_uniform_spines_dt(dt_model, min(gibbs_trees, 50), seed + 2)
    checks.append(
        Check(
            "mark placement vs uniform choices",
            worst_dt <= 1e-10,
            f"worst tuple gap {worst_dt:.2e} (deterministic offspring, trivial functional)",
        )
    )

    # split-time law
    samples = split_time_samples(YULE, ks_samples, seed + 3, workers)
    pvalue = split_time_ks(samples)
    checks.append(
        Check("split-time law", pvalue >= 0.01, f"KS p-value {pvalue:.4f} vs Exp(2)")
    )

    return CTVerifyResult(
        checks=checks, reports=reports, split_samples=samples, ks_pvalue=pvalue
    )


# ---------------------------------------------------------------------------
# bound sandwich table
# ---------------------------------------------------------------------------

BOUNDS_CSV_FIELDS = (
    "x", "t", "lower_bound", "estimate", "std_error", "upper_bound",
    "upper_bound_capped", "sandwich_ok",
)


def bounds_rows(
    x_grid: tuple[float, ...],
    t_grid: tuple[float, ...],
    replicates: int,
    seed: int,
    workers: int = 1,
) -> list[dict]:
    """Per (x, t): second-moment lower bound, simulated probability that some
    particle exceeds x, first-moment upper bound (also capped at 1)."""
    rows = []
    for t in t_grid:
        maxima = estimate_max_positions(YULE, t, replicates, seed, workers=workers)
        for x in x_grid:
            rep = survival_report(maxima, x, seed)
            lower = tail_lower_bound(x, t)
            upper = tail_upper_bound(x, t)
            slack = 3.0 * rep.std_error
            ok = lower <= rep.estimate + slack and rep.estimate <= min(1.0, upper) + slack
            rows.append(
                {
                    "x": x,
                    "t": t,
                    "lower_bound": lower,
                    "estimate": rep.estimate,
                    "std_error": rep.std_error,
                    "upper_bound": upper,
                    "upper_bound_capped": min(1.0, upper),
                    "sandwich_ok": ok,
                }
            )
    return rows
