"""Continuous-time simulation of the branching process and its skeleton.

Three samplers live here: the plain process (every particle, exponential
branch clocks, thinning for position-dependent rates), uniform mark
attachment on a finished tree, and the skeleton-only sampler under the
tilted measure where a carrier of j marks branches at rate m^j(y) R(y) with
size-biased offspring numbers and tilted motion.  The weight processes that
tie the two sides together (segment functional ratios, rate integrals, the
mark-count powers) are computed from the same records.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass
from itertools import product as iter_product
from typing import Sequence

import numpy as np

from .core import (
    INF,
    Label,
    MarkedTree,
    ParticleRecord,
    PathSegment,
    ROOT,
    SkeletonRealization,
    SpineAssignment,
    ancestors,
    extract_skeleton,
    tuple_skeleton,
)
from .laws import BranchRate, OffspringLaw
from .motion import MotionModel, PathSampler


class ExplosionError(RuntimeError):
    """Simulated population hit the configured cap."""

    def __init__(self, population: int, at_time: float):
        super().__init__(
            f"population cap hit: {population} particles at time {at_time:.6g}"
        )
        self.population = population
        self.at_time = at_time


class EnumerationCapError(RuntimeError):
    """A tuple enumeration would exceed the configured budget."""


@dataclass(frozen=True)
class BranchingModel:
    """Motion, branch rate, offspring law and starting position."""

    motion: MotionModel
    rate: BranchRate
    offspring: OffspringLaw
    origin: float = 0.0


@dataclass(frozen=True)
class WeightedSkeleton:
    """Skeleton realization with its two accumulated weight factors.

    ``zeta_ratio_product`` multiplies zeta(start)/zeta(end) over skeleton
    particles (0.0 once any spine functional is absorbed);
    ``rate_integral_product`` multiplies exp(integral of (m^D(v) - 1) R).
    """

    skeleton: SkeletonRealization
    zeta_ratio_product: float
    rate_integral_product: float


@dataclass(frozen=True)
class QSkeletonResult:
    weighted: WeightedSkeleton
    tree: MarkedTree | None = None
    spines: SpineAssignment | None = None


def skeleton_weight(ws: WeightedSkeleton) -> float:
    """Estimator weight attached to one skeleton realization."""
    return ws.zeta_ratio_product * ws.rate_integral_product


# ---------------------------------------------------------------------------
# helpers
# ---------------------------------------------------------------------------

def _segment_from_sampler(sampler: PathSampler, start: float, end: float) -> PathSegment:
    times: list[float] = []
    positions: list[float] = []
    for tt, xx in sampler.samples:
        if start <= tt <= end:
            times.append(tt)
            positions.append(xx)
    return PathSegment(tuple(times), tuple(positions), sampler.absorbed_at)


def _advance_through_grid(
    sampler: PathSampler, to_time: float, grid_step: float | None
) -> float:
    """Advance a sampler to ``to_time``, visiting grid multiples on the way."""
    if grid_step is not None and grid_step > 0:
        s = sampler.time
        nxt = (math.floor(s / grid_step) + 1) * grid_step
        while nxt < to_time:
            sampler.advance(nxt)
            nxt += grid_step
    return sampler.advance(to_time)


def default_grid_step(rate: BranchRate, t: float, grid_step: float | None) -> float | None:
    """Sampling grid for weight integrals: none for constant rates, t/1000
    unless the caller picked a step."""
    if grid_step is not None or rate.is_constant:
        return grid_step
    return t / 1000.0


def rate_integral(seg: PathSegment, rate: BranchRate, *, step_path: bool = False) -> float:
    """Integral of R along one sampled segment.

    Exact for constant rates and for piecewise-constant (chain) paths;
    otherwise the trapezoid rule on the stored samples.
    """
    if rate.is_constant:
        return rate.constant * (seg.end_time - seg.start_time)
    total = 0.0
    for i in range(len(seg.times) - 1):
        dt = seg.times[i + 1] - seg.times[i]
        if step_path:
            total += rate(seg.positions[i]) * dt
        else:
            total += 0.5 * (rate(seg.positions[i]) + rate(seg.positions[i + 1])) * dt
    return total


# ---------------------------------------------------------------------------
# forward simulation of the plain process
# ---------------------------------------------------------------------------

def simulate_p(
    model: BranchingModel,
    t: float,
    rng: np.random.Generator,
    *,
    max_population: int = 1_000_000,
    grid_step: float | None = None,
) -> MarkedTree:
    """Simulate every particle of the branching process up to horizon t.

    Branch clocks are exact exponentials for a constant rate; otherwise a
    proposal clock at the declared bound is thinned at the sampled position.
    Children start at the parent's death position.
    """
    if t < 0:
        raise ValueError("horizon must be nonnegative")
    motion, rate, law = model.motion, model.rate, model.offspring
    grid_step = default_grid_step(rate, t, grid_step)
    records: dict[Label, ParticleRecord] = {}
    queue: deque[tuple[Label, float, float, float | None]] = deque()
    queue.append((ROOT, 0.0, model.origin, None))
    while queue:
        label, birth, pos, absorbed = queue.popleft()
        if len(records) >= max_population:
            raise ExplosionError(len(records), birth)
        sampler = motion.path_sampler(pos, birth, rng, tilted=False, absorbed_at=absorbed)
        s = birth
        while True:
            delta = rng.exponential(1.0 / rate.r_max) if rate.r_max > 0 else INF
            proposal = s + delta
            if proposal >= t:
                _advance_through_grid(sampler, t, grid_step)
                records[label] = ParticleRecord(
                    label, birth, INF, None, tuple(sampler.samples), sampler.absorbed_at
                )
                break
            x = _advance_through_grid(sampler, proposal, grid_step)
            if not rate.is_constant and rng.random() >= rate(x) / rate.r_max:
                s = proposal
                continue
            count = law.sample(rng)
            records[label] = ParticleRecord(
                label, birth, proposal, count, tuple(sampler.samples), sampler.absorbed_at
            )
            for j in range(1, count + 1):
                queue.append((label + (j,), proposal, x, sampler.absorbed_at))
            break
    return MarkedTree(records=records, horizon=t, origin=model.origin)


def attach_spines(tree: MarkedTree, k: int, rng: np.random.Generator) -> SpineAssignment:
    """Attach k marks, each choosing a child uniformly at every branch event."""
    if k < 1:
        raise ValueError("need k >= 1")
    finals = []
    for _ in range(k):
        node = ROOT
        while True:
            count = tree.record(node).child_count
            if not count:
                break
            node = node + (int(rng.integers(1, count + 1)),)
        finals.append(node)
    return SpineAssignment(k=k, final_nodes=tuple(finals))


# ---------------------------------------------------------------------------
# skeleton-only simulation under the tilted measure
# ---------------------------------------------------------------------------

def simulate_skeleton_q(
    model: BranchingModel,
    t: float,
    k: int,
    rng: np.random.Generator,
    *,
    mode: str = "skeleton",
    max_population: int = 1_000_000,
    grid_step: float | None = None,
    unsound_plain_rate: bool = False,
) -> QSkeletonResult:
    """Simulate the spine-carrying particles under the tilted measure.

    A carrier of j marks branches at rate m^j(y) R(y), draws its child count
    from the j-fold size-biased law, and reassigns marks uniformly; its motion
    is drawn from the tilted sampler once, whatever j is.  In ``full`` mode
    children that receive no mark root independent plain subtrees so the
    returned tree realizes the tilted measure on whole trees.

    ``unsound_plain_rate`` is a diagnostic mutation (carriers branch at the
    plain rate R) used to prove the verification suite can fail.
    """
    if k < 1:
        raise ValueError("need k >= 1")
    if mode not in ("skeleton", "full"):
        raise ValueError("mode must be 'skeleton' or 'full'")
    motion, rate, law = model.motion, model.rate, model.offspring
    grid_step = default_grid_step(rate, t, grid_step)

    moments = {}
    biased = {}
    for j in range(1, k + 1):
        moments[j] = law.moment(j)
        biased[j] = law.size_bias(j)

    records: dict[Label, ParticleRecord] = {}
    mark_count: dict[Label, int] = {}
    final_nodes: dict[int, Label] = {}
    split_times = [[INF] * k for _ in range(k)]
    spine_positions: dict[int, float] = {}
    zeta_ratio_product = 1.0
    rate_integral_product = 1.0
    subtree_roots: list[tuple[Label, float, float, float | None]] = []

    queue: deque[tuple[Label, tuple[int, ...], float, float, float | None]] = deque()
    queue.append((ROOT, tuple(range(k)), 0.0, model.origin, None))
    while queue:
        label, marks, birth, pos, absorbed = queue.popleft()
        j = len(marks)
        mark_count[label] = j
        if len(records) >= max_population:
            raise ExplosionError(len(records), birth)
        sampler = motion.path_sampler(pos, birth, rng, tilted=True, absorbed_at=absorbed)
        bound = (1.0 if unsound_plain_rate else moments[j]) * rate.r_max
        s = birth
        while True:
            delta = rng.exponential(1.0 / bound) if bound > 0 else INF
            proposal = s + delta
            if proposal >= t:
                _advance_through_grid(sampler, t, grid_step)
                records[label] = ParticleRecord(
                    label, birth, INF, None, tuple(sampler.samples), sampler.absorbed_at
                )
                for i in marks:
                    final_nodes[i] = label
                    spine_positions[i] = sampler.position
                break
            x = _advance_through_grid(sampler, proposal, grid_step)
            if not rate.is_constant and rng.random() >= rate(x) / rate.r_max:
                s = proposal
                continue
            count = biased[j].sample(rng)
            records[label] = ParticleRecord(
                label, birth, proposal, count, tuple(sampler.samples), sampler.absorbed_at
            )
            groups: dict[int, list[int]] = {}
            for i in marks:
                child = int(rng.integers(1, count + 1))
                groups.setdefault(child, []).append(i)
            for a, b in iter_product(marks, marks):
                if a < b and split_times[a][b] == INF:
                    ca = next(c for c, ms in groups.items() if a in ms)
                    cb = next(c for c, ms in groups.items() if b in ms)
                    if ca != cb:
                        split_times[a][b] = split_times[b][a] = proposal
            for child in range(1, count + 1):
                child_label = label + (child,)
                if child in groups:
                    queue.append(
                        (child_label, tuple(groups[child]), proposal, x, sampler.absorbed_at)
                    )
                elif mode == "full":
                    subtree_roots.append((child_label, proposal, x, sampler.absorbed_at))
            break
        # close this carrier's weight segment
        end = records[label].clamped_death(t)
        seg = _segment_from_sampler(sampler, birth, end)
        ratio = motion.zeta_segment_ratio(seg)
        zeta_ratio_product = 0.0 if ratio == 0.0 else zeta_ratio_product / ratio
        integral = rate_integral(seg, rate, step_path=motion.step_paths)
        rate_integral_product *= math.exp((moments[j] - 1.0) * integral)

    skeleton_records = dict(records)

    tree = None
    spines = SpineAssignment(k=k, final_nodes=tuple(final_nodes[i] for i in range(k)))
    if mode == "full":
        for child_label, birth, pos, absorbed in subtree_roots:
            _grow_subtree(
                model, records, child_label, birth, pos, absorbed, t, rng,
                max_population=max_population, grid_step=grid_step,
            )
        tree = MarkedTree(records=records, horizon=t, origin=model.origin)
        skeleton = extract_skeleton(tree, spines, t, step_positions=motion.step_paths)
    else:
        skeleton = SkeletonRealization(
            t=t,
            k=k,
            nodes=skeleton_records,
            mark_count=mark_count,
            spine_nodes=tuple(final_nodes[i] for i in range(k)),
            spine_positions=tuple(spine_positions[i] for i in range(k)),
            split_times=tuple(tuple(row) for row in split_times),
        )
    weighted = WeightedSkeleton(
        skeleton=skeleton,
        zeta_ratio_product=zeta_ratio_product,
        rate_integral_product=rate_integral_product,
    )
    return QSkeletonResult(weighted=weighted, tree=tree, spines=spines)


def _grow_subtree(
    model: BranchingModel,
    records: dict[Label, ParticleRecord],
    root_label: Label,
    root_birth: float,
    root_pos: float,
    absorbed: float | None,
    t: float,
    rng: np.random.Generator,
    *,
    max_population: int,
    grid_step: float | None,
) -> None:
    """Grow a plain subtree in place, sharing the caller's record map."""
    motion, rate, law = model.motion, model.rate, model.offspring
    queue: deque[tuple[Label, float, float, float | None]] = deque()
    queue.append((root_label, root_birth, root_pos, absorbed))
    while queue:
        label, birth, pos, abs_at = queue.popleft()
        if len(records) >= max_population:
            raise ExplosionError(len(records), birth)
        sampler = motion.path_sampler(pos, birth, rng, tilted=False, absorbed_at=abs_at)
        s = birth
        while True:
            delta = rng.exponential(1.0 / rate.r_max) if rate.r_max > 0 else INF
            proposal = s + delta
            if proposal >= t:
                _advance_through_grid(sampler, t, grid_step)
                records[label] = ParticleRecord(
                    label, birth, INF, None, tuple(sampler.samples), sampler.absorbed_at
                )
                break
            x = _advance_through_grid(sampler, proposal, grid_step)
            if not rate.is_constant and rng.random() >= rate(x) / rate.r_max:
                s = proposal
                continue
            count = law.sample(rng)
            records[label] = ParticleRecord(
                label, birth, proposal, count, tuple(sampler.samples), sampler.absorbed_at
            )
            for jj in range(1, count + 1):
                queue.append((label + (jj,), proposal, x, sampler.absorbed_at))
            break


def sample_split_time(
    model: BranchingModel,
    rng: np.random.Generator,
    *,
    max_events: int = 100_000,
) -> float:
    """First time two marks land on different particles under the tilted law.

    Runs the two-mark carrier dynamics (rate m^2 R, size-biased offspring,
    uniform reassignment) until the marks separate; not bounded by a horizon.
    """
    motion, rate, law = model.motion, model.rate, model.offspring
    m2 = law.moment(2)
    biased = law.size_bias(2)
    s = 0.0
    pos = model.origin
    for _ in range(max_events):
        sampler = motion.path_sampler(pos, s, rng, tilted=True)
        while True:
            bound = m2 * rate.r_max
            if bound <= 0:
                raise ValueError("zero branch rate: marks never split")
            proposal = s + rng.exponential(1.0 / bound)
            x = sampler.advance(proposal)
            if rate.is_constant or rng.random() < rate(x) / rate.r_max:
                s, pos = proposal, x
                break
            s = proposal
        count = biased.sample(rng)
        c1 = int(rng.integers(1, count + 1))
        c2 = int(rng.integers(1, count + 1))
        if c1 != c2:
            return s
    raise RuntimeError("marks did not split within the event budget")


# ---------------------------------------------------------------------------
# weight processes on a fixed tree
# ---------------------------------------------------------------------------

def _zeta_positive(tree: MarkedTree, model: MotionModel, label: Label, t: float) -> bool:
    rec = tree.record(label)
    if rec.is_graveyard and rec.dead_by(t):
        return False  # functional defined as 0 at a childless death
    return not tree.line_absorbed_by(label, t)


def zeta_tilde(
    tree: MarkedTree,
    spines: SpineAssignment,
    model: BranchingModel,
    t: float,
) -> float:
    """Mark-level change-of-measure weight evaluated on a tree with spines.

    Product over skeleton particles of the segment functional ratio times
    exp(-integral (m^D - 1) R), times A_v^D(v) over dead skeleton particles,
    all gated by the functional being positive on every mark's line.
    """
    motion, rate, law = model.motion, model.rate, model.offspring
    for i in range(spines.k):
        node = spines.node_at(tree, i, t)
        if not _zeta_positive(tree, motion, node, t):
            return 0.0
    skel = extract_skeleton(tree, spines, t, with_positions=False)
    value = 1.0
    for label, rec in skel.nodes.items():
        d = skel.mark_count[label]
        seg = rec.segment(t, step=motion.step_paths)
        ratio = motion.zeta_segment_ratio(seg)
        if ratio == 0.0:
            return 0.0
        integral = rate_integral(seg, rate, step_path=motion.step_paths)
        value *= ratio * math.exp(-(law.moment(d) - 1.0) * integral)
        if rec.dead_by(t):
            value *= float(rec.child_count) ** d
    return value


def _tuple_term(
    tree: MarkedTree,
    model: BranchingModel,
    labels: Sequence[Label],
    t: float,
    node_cache: dict[Label, tuple[float, float]],
) -> float:
    """Product over the tuple's ancestor set of ratio * exp(-(m^D-1) * I)."""
    law = model.offspring
    term = 1.0
    for v, d in tuple_skeleton(tree, labels, t).items():
        ratio, integral = node_cache[v]
        term *= ratio * math.exp(-(law.moment(d) - 1.0) * integral)
    return term


def _node_cache(
    tree: MarkedTree, model: BranchingModel, labels: set[Label], t: float
) -> dict[Label, tuple[float, float]]:
    motion, rate = model.motion, model.rate
    cache: dict[Label, tuple[float, float]] = {}
    for u in labels:
        for v in ancestors(u):
            rec = tree.record(v)
            if rec.birth > t or v in cache:
                continue
            seg = rec.segment(t, step=motion.step_paths)
            cache[v] = (
                motion.zeta_segment_ratio(seg),
                rate_integral(seg, rate, step_path=motion.step_paths),
            )
    return cache


def z_process(
    tree: MarkedTree,
    model: BranchingModel,
    t: float,
    k: int,
    *,
    max_tuples: int = 2_000_000,
) -> float:
    """Tree-measurable projection: the weight summed over ordered k-tuples."""
    alive = sorted(tree.alive_at(t))
    eligible = [u for u in alive if _zeta_positive(tree, model.motion, u, t)]
    n_tuples = len(eligible) ** k
    if n_tuples > max_tuples:
        raise EnumerationCapError(
            f"{len(eligible)}^{k} tuples exceed the cap {max_tuples}"
        )
    cache = _node_cache(tree, model, set(eligible), t)
    total = 0.0
    for labels in iter_product(eligible, repeat=k):
        total += _tuple_term(tree, model, labels, t, cache)
    return total


def gibbs_tuple_weights(
    tree: MarkedTree,
    model: BranchingModel,
    t: float,
    k: int,
    *,
    max_tuples: int = 2_000_000,
) -> dict[tuple[Label, ...], float]:
    """Conditional mark-placement weights under the tilted measure.

    Each ordered k-tuple of eligible particles gets its ratio/exp product
    divided by the tuple sum; the weights sum to 1 on every tree with at
    least one eligible particle.
    """
    alive = sorted(tree.alive_at(t))
    eligible = [u for u in alive if _zeta_positive(tree, model.motion, u, t)]
    if not eligible:
        return {}
    if len(eligible) ** k > max_tuples:
        raise EnumerationCapError(
            f"{len(eligible)}^{k} tuples exceed the cap {max_tuples}"
        )
    z = z_process(tree, model, t, k, max_tuples=max_tuples)
    cache = _node_cache(tree, model, set(eligible), t)
    return {
        labels: _tuple_term(tree, model, labels, t, cache) / z
        for labels in iter_product(eligible, repeat=k)
    }
