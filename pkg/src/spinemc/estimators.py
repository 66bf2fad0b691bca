"""Moment estimators, closed forms and tail bounds.

The direct estimator averages the k-fold sum of a statistic over full
simulations of the branching process; the skeleton estimator averages
weight * statistic over skeleton-only simulations under the tilted measure.
Closed forms for the Brownian presets (one- and two-particle sums, tail
bounds for the number of particles above a level) are evaluated by adaptive
quadrature and serve as references for both estimators.
"""

from __future__ import annotations

import math
import time as _time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from functools import partial
from itertools import product as iter_product
from typing import Callable, Sequence

import numpy as np
from scipy import integrate

from ._util import replicate_rng, set_partitions
from .reports import EstimateReport
from .sim_ct import (
    BranchingModel,
    EnumerationCapError,
    attach_spines,
    skeleton_weight,
    simulate_p,
    simulate_skeleton_q,
    z_process,
    zeta_tilde,
)
from .sim_dt import (
    DiscreteModel,
    SpineStateStatistic,
    evaluate_spine_statistic,
    skeleton_weight_dt,
    simulate_p_dt,
    simulate_skeleton_q_dt,
)


class QuadratureError(RuntimeError):
    """Adaptive quadrature failed to reach the requested tolerance."""


# ---------------------------------------------------------------------------
# statistics
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ConstantOne:
    """Single-particle factor 1; the k-fold sum counts ordered tuples."""

    def __call__(self, y: float) -> float:
        return 1.0

    breakpoints: tuple[float, ...] = ()

    def gaussian_expectation(self, mean: float, var: float) -> float:
        return 1.0


@dataclass(frozen=True)
class IndicatorAbove:
    """Single-particle factor 1{y > threshold}."""

    threshold: float

    def __call__(self, y: float) -> float:
        return 1.0 if y > self.threshold else 0.0

    @property
    def breakpoints(self) -> tuple[float, ...]:
        return (self.threshold,)

    def gaussian_expectation(self, mean: float, var: float) -> float:
        if var <= 0.0:
            return 1.0 if mean > self.threshold else 0.0
        return 0.5 * math.erfc((self.threshold - mean) / math.sqrt(2.0 * var))


@dataclass(frozen=True)
class Statistic:
    """Weight function of a k-tuple of particles.

    Factored statistics multiply one single-particle factor per mark, which
    lets the direct estimator collapse the k-fold sum into a product of
    single sums.  An ``evaluator`` receives the tuple of terminal positions
    (spine-measurable by construction).  A ``tree_evaluator`` receives
    (tree, labels, t) and may inspect anything in the realization; skeleton
    estimation then runs in full-tree mode.  Callables must be module-level
    for multi-process runs.
    """

    k: int
    factors: tuple | None = None
    evaluator: Callable[[tuple[float, ...]], float] | None = None
    tree_evaluator: Callable | None = None
    nonnegative: bool = True
    name: str = ""

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("need k >= 1")
        given = sum(x is not None for x in (self.factors, self.evaluator, self.tree_evaluator))
        if given != 1:
            raise ValueError("give exactly one of factors, evaluator or tree_evaluator")
        if self.factors is not None and len(self.factors) != self.k:
            raise ValueError("need one factor per mark")

    @property
    def spine_measurable(self) -> bool:
        return self.tree_evaluator is None

    def evaluate(self, positions: Sequence[float]) -> float:
        if self.factors is not None:
            out = 1.0
            for f, y in zip(self.factors, positions):
                out *= f(y)
            return out
        return self.evaluator(tuple(positions))


def ones(k: int) -> Statistic:
    return Statistic(k=k, factors=tuple(ConstantOne() for _ in range(k)), name=f"ones[k={k}]")


def indicator_above(threshold: float) -> Statistic:
    return Statistic(k=1, factors=(IndicatorAbove(threshold),), name=f"above[{threshold}]")


def first_above(threshold: float, k: int) -> Statistic:
    factors = (IndicatorAbove(threshold),) + tuple(ConstantOne() for _ in range(k - 1))
    return Statistic(k=k, factors=factors, name=f"first-above[{threshold},k={k}]")


def all_above(threshold: float, k: int) -> Statistic:
    return Statistic(
        k=k, factors=tuple(IndicatorAbove(threshold) for _ in range(k)),
        name=f"all-above[{threshold},k={k}]",
    )


# ---------------------------------------------------------------------------
# replicate engine
# ---------------------------------------------------------------------------

_CHUNK = 1024


def _run_chunk(task, seed: int, start: int, stop: int) -> np.ndarray:
    return np.array([task(seed, i) for i in range(start, stop)], dtype=np.float64)


def run_replicates(
    task: Callable[[int, int], float],
    replicates: int,
    seed: int,
    workers: int = 1,
) -> np.ndarray:
    """Evaluate a per-replicate task on independent streams.

    Replicate i always uses the stream derived from (seed, i) and results are
    concatenated in fixed chunks, so the output is identical for any worker
    count.  The task must be picklable for workers > 1.
    """
    bounds = [(s, min(s + _CHUNK, replicates)) for s in range(0, replicates, _CHUNK)]
    if workers <= 1 or len(bounds) == 1:
        chunks = [_run_chunk(task, seed, a, b) for a, b in bounds]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = [pool.submit(_run_chunk, task, seed, a, b) for a, b in bounds]
            chunks = [f.result() for f in futures]
    return np.concatenate(chunks) if chunks else np.empty(0)


# ---------------------------------------------------------------------------
# per-replicate tasks (module level so they pickle)
# ---------------------------------------------------------------------------

def _distinct_factored_sum(factor_values: list[tuple[float, ...]], k: int) -> float:
    """Sum over ordered tuples of pairwise-distinct particles of the factor
    product, by partition inclusion-exclusion on the single sums."""
    total = 0.0
    for part in set_partitions(range(k)):
        coeff = 1.0
        term = 1.0
        for block in part:
            b = len(block)
            coeff *= (-1.0) ** (b - 1) * math.factorial(b - 1)
            term *= math.fsum(
                math.prod(vals[i] for i in block) for vals in factor_values
            )
        total += coeff * term
    return total


def _direct_value_ct(
    model: BranchingModel,
    statistic: Statistic,
    t: float,
    max_population: int,
    max_tuples: int,
    distinct: bool,
    seed: int,
    index: int,
) -> float:
    from .sim_ct import _zeta_positive  # local import keeps pickling light

    rng = replicate_rng(seed, index)
    tree = simulate_p(model, t, rng, max_population=max_population)
    step = model.motion.step_paths
    eligible = [
        u for u in sorted(tree.alive_at(t)) if _zeta_positive(tree, model.motion, u, t)
    ]
    if statistic.factors is not None:
        positions = [tree.line_position(u, t, step=step) for u in eligible]
        if distinct:
            vals = [tuple(f(y) for f in statistic.factors) for y in positions]
            return _distinct_factored_sum(vals, statistic.k)
        out = 1.0
        for f in statistic.factors:
            out *= math.fsum(f(y) for y in positions)
        return out
    if len(eligible) ** statistic.k > max_tuples:
        raise EnumerationCapError(
            f"{len(eligible)}^{statistic.k} tuples exceed the cap {max_tuples}"
        )
    if statistic.tree_evaluator is not None:
        return math.fsum(
            statistic.tree_evaluator(tree, labels, t)
            for labels in iter_product(eligible, repeat=statistic.k)
        )
    positions = [tree.line_position(u, t, step=step) for u in eligible]
    return math.fsum(
        statistic.evaluate(tup) for tup in iter_product(positions, repeat=statistic.k)
    )


def _spine_value_ct(
    model: BranchingModel,
    statistic: Statistic,
    t: float,
    max_population: int,
    unsound_plain_rate: bool,
    seed: int,
    index: int,
) -> float:
    rng = replicate_rng(seed, index)
    mode = "skeleton" if statistic.spine_measurable else "full"
    res = simulate_skeleton_q(
        model, t, statistic.k, rng, mode=mode,
        max_population=max_population, unsound_plain_rate=unsound_plain_rate,
    )
    weight = skeleton_weight(res.weighted)
    if weight == 0.0:
        return 0.0
    if statistic.tree_evaluator is not None:
        labels = res.weighted.skeleton.spine_nodes
        return weight * statistic.tree_evaluator(res.tree, labels, t)
    return weight * statistic.evaluate(res.weighted.skeleton.spine_positions)


def _direct_value_dt(
    model: DiscreteModel,
    statistic: SpineStateStatistic | None,
    max_population: int,
    seed: int,
    index: int,
) -> float:
    rng = replicate_rng(seed, index)
    tree = simulate_p_dt(model, rng, max_population=max_population)
    alive = tree.alive_at(float(model.horizon))
    states = [int(tree.record(u).path[0][1]) for u in alive]
    if statistic is None:
        return float(len(states)) ** model.k
    out = 1.0
    for vec in statistic.factors:
        out *= math.fsum(vec[s] for s in states)
    return out


def _spine_value_dt(
    model: DiscreteModel,
    statistic: SpineStateStatistic | None,
    max_population: int,
    per_edge_m: bool,
    seed: int,
    index: int,
) -> float:
    rng = replicate_rng(seed, index)
    res = simulate_skeleton_q_dt(model, rng, max_population=max_population)
    weight = skeleton_weight_dt(res.skeleton, model, per_edge_m=per_edge_m)
    return weight * evaluate_spine_statistic(statistic, res.skeleton)


def _max_position_ct(
    model: BranchingModel, t: float, max_population: int, seed: int, index: int
) -> float:
    rng = replicate_rng(seed, index)
    tree = simulate_p(model, t, rng, max_population=max_population)
    step = model.motion.step_paths
    alive = tree.alive_at(t)
    if not alive:
        return -math.inf
    return max(tree.line_position(u, t, step=step) for u in alive)


def _zeta_tilde_value(
    model: BranchingModel, t: float, k: int, max_population: int, seed: int, index: int
) -> float:
    rng = replicate_rng(seed, index)
    tree = simulate_p(model, t, rng, max_population=max_population)
    spines = attach_spines(tree, k, rng)
    return zeta_tilde(tree, spines, model, t)


def _z_value(
    model: BranchingModel, t: float, k: int, max_population: int, max_tuples: int,
    seed: int, index: int,
) -> float:
    rng = replicate_rng(seed, index)
    tree = simulate_p(model, t, rng, max_population=max_population)
    return z_process(tree, model, t, k, max_tuples=max_tuples)


# ---------------------------------------------------------------------------
# estimators
# ---------------------------------------------------------------------------

def estimate_direct(
    model: BranchingModel | DiscreteModel,
    statistic,
    horizon: float,
    replicates: int = 100_000,
    seed: int = 0,
    *,
    workers: int = 1,
    distinct: bool = False,
    max_population: int = 1_000_000,
    max_tuples: int = 2_000_000,
) -> EstimateReport:
    """Monte Carlo mean of the k-fold sum over full simulations."""
    tic = _time.perf_counter()
    if isinstance(model, DiscreteModel):
        task = partial(_direct_value_dt, model, statistic, max_population)
        name = "direct/dt"
    else:
        task = partial(
            _direct_value_ct, model, statistic, horizon,
            max_population, max_tuples, distinct,
        )
        name = f"direct/{statistic.name or 'statistic'}"
    values = run_replicates(task, replicates, seed, workers)
    return EstimateReport.from_values(name, values, seed, _time.perf_counter() - tic)


def estimate_spine(
    model: BranchingModel | DiscreteModel,
    statistic,
    horizon: float,
    replicates: int = 100_000,
    seed: int = 0,
    *,
    workers: int = 1,
    max_population: int = 1_000_000,
    unsound_plain_rate: bool = False,
    unsound_per_edge_m: bool = False,
) -> EstimateReport:
    """Monte Carlo mean of weight * statistic over skeleton simulations."""
    tic = _time.perf_counter()
    if isinstance(model, DiscreteModel):
        task = partial(
            _spine_value_dt, model, statistic, max_population, unsound_per_edge_m
        )
        name = "spine/dt"
    else:
        task = partial(
            _spine_value_ct, model, statistic, horizon, max_population,
            unsound_plain_rate,
        )
        name = f"spine/{statistic.name or 'statistic'}"
    values = run_replicates(task, replicates, seed, workers)
    return EstimateReport.from_values(name, values, seed, _time.perf_counter() - tic)


@dataclass(frozen=True)
class VarianceComparison:
    direct: EstimateReport
    spine: EstimateReport
    overlap99: bool
    wall_time_ratio: float


def compare_variance(
    model,
    statistic,
    horizon: float,
    replicates: int,
    seed: int,
    *,
    workers: int = 1,
    **kwargs,
) -> VarianceComparison:
    """Run both estimators on matched budgets and compare their reports."""
    direct = estimate_direct(
        model, statistic, horizon, replicates, seed, workers=workers, **kwargs
    )
    spine = estimate_spine(
        model, statistic, horizon, replicates, seed, workers=workers
    )
    ratio = spine.wall_time / direct.wall_time if direct.wall_time > 0 else math.nan
    return VarianceComparison(
        direct=direct,
        spine=spine,
        overlap99=direct.overlaps(spine, 0.99),
        wall_time_ratio=ratio,
    )


def estimate_max_positions(
    model: BranchingModel,
    t: float,
    replicates: int,
    seed: int,
    *,
    workers: int = 1,
    max_population: int = 1_000_000,
) -> np.ndarray:
    """Per-replicate maximum particle position at t (-inf when extinct)."""
    task = partial(_max_position_ct, model, t, max_population)
    return run_replicates(task, replicates, seed, workers)


def survival_report(maxima: np.ndarray, x: float, seed: int) -> EstimateReport:
    """Report of P(some particle above x) from per-replicate maxima."""
    return EstimateReport.from_values(
        f"survival-above[{x}]", (maxima > x).astype(np.float64), seed
    )


# ---------------------------------------------------------------------------
# closed forms (Brownian presets)
# ---------------------------------------------------------------------------

def _normal_pdf(y: float, var: float) -> float:
    return math.exp(-0.5 * y * y / var) / math.sqrt(2.0 * math.pi * var)


def _quad_pieces(fn, pieces: list[tuple[float, float]], rtol: float) -> float:
    total = 0.0
    err = 0.0
    for a, b in pieces:
        val, abserr = integrate.quad(fn, a, b, epsabs=1e-14, epsrel=rtol, limit=200)
        total += val
        err += abserr
    if err > 100.0 * max(rtol * abs(total), 1e-12):
        raise QuadratureError(f"quadrature error {err:g} too large for result {total:g}")
    return total


def _gauss_quad_expect(f, mean: float, var: float, rtol: float) -> float:
    """E[f(Y)], Y normal(mean, var), by adaptive quadrature split at the
    factor's declared breakpoints."""
    if var <= 0.0:
        return f(mean)
    sd = math.sqrt(var)
    cuts = sorted(set(getattr(f, "breakpoints", ())))
    lo, hi = mean - 40.0 * sd, mean + 40.0 * sd
    knots = [lo] + [c for c in cuts if lo < c < hi] + [hi]
    pieces = list(zip(knots[:-1], knots[1:]))
    return _quad_pieces(lambda y: f(y) * _normal_pdf(y - mean, var), pieces, rtol)


def _gauss_expect(f, mean: float, var: float, rtol: float) -> float:
    """Inner convolution for the nested integrals; exact where the factor
    provides its Gaussian expectation, quadrature otherwise."""
    if hasattr(f, "gaussian_expectation"):
        return f.gaussian_expectation(mean, var)
    return _gauss_quad_expect(f, mean, var, rtol)


def many_to_one_closed_form(f, t: float, *, rtol: float = 1e-10) -> float:
    """Expected single sum: e^t times the Gaussian expectation of f at variance t."""
    if t <= 0:
        raise ValueError("need t > 0")
    return math.exp(t) * _gauss_quad_expect(f, 0.0, t, rtol)


def many_to_two_closed_form(f, g, t: float, *, rtol: float = 1e-8) -> float:
    """Expected sum over ordered pairs for the binary unit-rate model.

    Couples the pair through an exponential split time T of rate 2:
    e^{2t} [ integral_0^t 2 e^{-s} E_s ds + e^{-t} E[f(B_t) g(B_t)] ],
    where E_s mixes a shared normal piece of variance s with independent
    normal pieces of variance t - s on each leg.
    """
    if t <= 0:
        raise ValueError("need t > 0")

    def conditional(s: float) -> float:
        var_tail = t - s

        class _Prod:
            breakpoints = ()

            def __call__(self, z: float) -> float:
                return _gauss_expect(f, z, var_tail, rtol) * _gauss_expect(
                    g, z, var_tail, rtol
                )

        return _gauss_quad_expect(_Prod(), 0.0, s, rtol) if s > 0 else _Prod()(0.0)

    split_part = _quad_pieces(
        lambda s: 2.0 * math.exp(-s) * conditional(s), [(0.0, t)], rtol
    )

    class _Diag:
        @property
        def breakpoints(self):
            return tuple(getattr(f, "breakpoints", ())) + tuple(
                getattr(g, "breakpoints", ())
            )

        def __call__(self, y: float) -> float:
            return f(y) * g(y)

    no_split = math.exp(-t) * _gauss_quad_expect(_Diag(), 0.0, t, rtol)
    return math.exp(2.0 * t) * (split_part + no_split)


def tail_upper_bound(x: float, t: float) -> float:
    """Expected number of particles above x: e^t times the normal(0, t) tail.

    Dominates P(any particle above x) by the first-moment bound; can exceed 1.
    """
    if t <= 0:
        raise ValueError("need t > 0")
    return math.exp(t) * 0.5 * math.erfc(x / math.sqrt(2.0 * t))


def tail_lower_bound(x: float, t: float, *, rtol: float = 1e-8) -> float:
    """Second-moment lower bound: (first moment)^2 / second moment."""
    ind = IndicatorAbove(x)
    m1 = many_to_one_closed_form(ind, t, rtol=min(rtol, 1e-10))
    m2 = many_to_two_closed_form(ind, ind, t, rtol=rtol)
    return m1 * m1 / m2
