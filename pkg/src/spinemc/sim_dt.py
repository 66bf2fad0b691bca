"""Generation-indexed branching with exact two-sided oracles.

The forward sampler and the skeleton sampler mirror their continuous-time
counterparts on a finite-state chain with unit lifetimes.  The two oracles
compute both sides of the k-fold moment identity with no Monte Carlo error:
the population side by a factorial-moment recursion over set partitions, the
skeleton side by a block recursion over size-biased mark dynamics carrying
the skeleton weight.  A diagnostic ``per_edge_m`` switch reproduces the
broken weight convention that double-counts split nodes, so the verification
grid can be made to fail on purpose.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass
from itertools import product as iter_product

import numpy as np

from ._util import nonempty_subsets, set_partitions
from .core import (
    INF,
    Label,
    MarkedTree,
    ParticleRecord,
    ROOT,
    SkeletonRealization,
    SpineAssignment,
    StructuralError,
    generation,
    parent,
    tuple_skeleton,
)
from .laws import OffspringLaw
from .motion import DiscreteChain
from .sim_ct import EnumerationCapError, ExplosionError


class OracleBudgetError(RuntimeError):
    """The requested exact computation exceeds the configured budget."""


@dataclass(frozen=True)
class DiscreteModel:
    """Finite-state chain motion, offspring law, horizon and mark count."""

    chain: DiscreteChain
    offspring: OffspringLaw
    horizon: int
    k: int
    initial_state: int = 0

    def __post_init__(self):
        if self.horizon < 0:
            raise ValueError("horizon must be nonnegative")
        if self.k < 1:
            raise ValueError("need k >= 1")
        if not 0 <= self.initial_state < self.chain.n_states:
            raise ValueError("initial state outside the chain")


@dataclass(frozen=True)
class SpineStateStatistic:
    """Product over marks of a per-state score of the mark's terminal state."""

    factors: tuple[tuple[float, ...], ...]

    @staticmethod
    def indicators(states: tuple[int, ...], n_states: int) -> "SpineStateStatistic":
        vecs = []
        for s in states:
            v = [0.0] * n_states
            v[s] = 1.0
            vecs.append(tuple(v))
        return SpineStateStatistic(tuple(vecs))

    def evaluate(self, spine_states: tuple[int, ...]) -> float:
        out = 1.0
        for vec, s in zip(self.factors, spine_states):
            out *= vec[s]
        return out


def _statistic_vectors(
    model: DiscreteModel, statistic: SpineStateStatistic | None
) -> list[np.ndarray]:
    n = model.chain.n_states
    if statistic is None:
        return [np.ones(n) for _ in range(model.k)]
    if len(statistic.factors) != model.k:
        raise ValueError("statistic arity differs from the model's mark count")
    return [np.asarray(vec, dtype=np.float64) for vec in statistic.factors]


# ---------------------------------------------------------------------------
# forward simulation
# ---------------------------------------------------------------------------

def _dt_record(label: Label, g: int, state: int, count: int | None, horizon: int) -> ParticleRecord:
    if count is None:
        return ParticleRecord(label, float(g), INF, None, ((float(g), float(state)),))
    return ParticleRecord(
        label, float(g), float(g + 1), count,
        ((float(g), float(state)), (float(g + 1), float(state))),
    )


def simulate_p_dt(
    model: DiscreteModel,
    rng: np.random.Generator,
    *,
    max_population: int = 1_000_000,
) -> MarkedTree:
    """Simulate every particle generation by generation under the plain law."""
    law, chain, n = model.offspring, model.chain, model.horizon
    records: dict[Label, ParticleRecord] = {}
    queue: deque[tuple[Label, int, int]] = deque([(ROOT, 0, model.initial_state)])
    while queue:
        label, g, state = queue.popleft()
        if len(records) >= max_population:
            raise ExplosionError(len(records), float(g))
        if g == n:
            records[label] = _dt_record(label, g, state, None, n)
            continue
        count = law.sample(rng)
        records[label] = _dt_record(label, g, state, count, n)
        for j in range(1, count + 1):
            queue.append((label + (j,), g + 1, chain.sample_p(state, rng)))
    return MarkedTree(records=records, horizon=float(n), origin=float(model.initial_state))


@dataclass(frozen=True)
class DiscreteSkeletonResult:
    """Skeleton realization plus, in full mode, the whole simulated tree."""

    skeleton: SkeletonRealization
    spines: SpineAssignment
    tree: MarkedTree | None = None


def simulate_skeleton_q_dt(
    model: DiscreteModel,
    rng: np.random.Generator,
    *,
    mode: str = "skeleton",
    max_population: int = 1_000_000,
) -> DiscreteSkeletonResult:
    """Simulate the mark-carrying particles under the size-biased dynamics.

    A node carrying j marks draws its child count from the j-fold size-biased
    law, its marks choose children uniformly, and every spine child's state
    comes from the tilted kernel.  In ``full`` mode unmarked children root
    plain subtrees.
    """
    if mode not in ("skeleton", "full"):
        raise ValueError("mode must be 'skeleton' or 'full'")
    law, chain, n, k = model.offspring, model.chain, model.horizon, model.k
    biased = {j: law.size_bias(j) for j in range(1, k + 1)}

    records: dict[Label, ParticleRecord] = {}
    mark_count: dict[Label, int] = {}
    split = [[INF] * k for _ in range(k)]
    subtree_roots: list[tuple[Label, int, int]] = []
    carriers: list[tuple[Label, tuple[int, ...], int]] = [
        (ROOT, tuple(range(k)), model.initial_state)
    ]
    for g in range(n):
        nxt: list[tuple[Label, tuple[int, ...], int]] = []
        for label, marks, state in carriers:
            j = len(marks)
            mark_count[label] = j
            count = biased[j].sample(rng)
            records[label] = _dt_record(label, g, state, count, n)
            groups: dict[int, list[int]] = {}
            for i in marks:
                child = int(rng.integers(1, count + 1))
                groups.setdefault(child, []).append(i)
            for a in marks:
                for b in marks:
                    if a < b and split[a][b] == INF:
                        ca = next(c for c, ms in groups.items() if a in ms)
                        cb = next(c for c, ms in groups.items() if b in ms)
                        if ca != cb:
                            split[a][b] = split[b][a] = float(g + 1)
            for child in range(1, count + 1):
                child_label = label + (child,)
                if child in groups:
                    nxt.append((child_label, tuple(groups[child]), chain.sample_q(state, rng)))
                elif mode == "full":
                    subtree_roots.append((child_label, g + 1, chain.sample_p(state, rng)))
        carriers = nxt
        if len(records) >= max_population:
            raise ExplosionError(len(records), float(g))

    finals: dict[int, Label] = {}
    states: dict[int, int] = {}
    for label, marks, state in carriers:
        mark_count[label] = len(marks)
        records[label] = _dt_record(label, n, state, None, n)
        for i in marks:
            finals[i] = label
            states[i] = state
    spines = SpineAssignment(k=k, final_nodes=tuple(finals[i] for i in range(k)))
    skeleton = SkeletonRealization(
        t=float(n),
        k=k,
        nodes=dict(records),
        mark_count=mark_count,
        spine_nodes=spines.final_nodes,
        spine_positions=tuple(float(states[i]) for i in range(k)),
        split_times=tuple(tuple(row) for row in split),
    )

    tree = None
    if mode == "full":
        queue: deque[tuple[Label, int, int]] = deque(subtree_roots)
        while queue:
            label, g, state = queue.popleft()
            if len(records) >= max_population:
                raise ExplosionError(len(records), float(g))
            if g == n:
                records[label] = _dt_record(label, g, state, None, n)
                continue
            count = law.sample(rng)
            records[label] = _dt_record(label, g, state, count, n)
            for j2 in range(1, count + 1):
                queue.append((label + (j2,), g + 1, chain.sample_p(state, rng)))
        tree = MarkedTree(records=records, horizon=float(n), origin=float(model.initial_state))

    return DiscreteSkeletonResult(skeleton=skeleton, spines=spines, tree=tree)


def _node_state(rec: ParticleRecord) -> int:
    return int(rec.path[0][1])


def skeleton_weight_dt(
    skeleton: SkeletonRealization,
    model: DiscreteModel,
    *,
    per_edge_m: bool = False,
) -> float:
    """Skeleton weight: per-edge functional factors times offspring moments.

    The functional factor multiplies, for every non-root skeleton node, the
    inverse increment over the edge from its parent.  The moment factor
    multiplies m^{D(v)}(X_v) once per skeleton node of generation < horizon.
    ``per_edge_m`` instead multiplies m^{D(parent)} once per edge, the broken
    convention that double-counts nodes where spines split (for one mark the
    two coincide because no skeleton node has two spine children).
    """
    law, chain, n = model.offspring, model.chain, model.horizon
    weight = 1.0
    for label, rec in skeleton.nodes.items():
        g = generation(label)
        if g < n:
            if rec.is_graveyard:
                raise StructuralError("skeleton weight is undefined on a dead spine")
            if not per_edge_m:
                weight *= law.moment(skeleton.mark_count[label])
        if g >= 1:
            p_label = parent(label)
            p_rec = skeleton.nodes[p_label]
            weight *= chain.weight_edge_factor(_node_state(p_rec), _node_state(rec))
            if per_edge_m:
                weight *= law.moment(skeleton.mark_count[p_label])
    return weight


def evaluate_spine_statistic(
    statistic: SpineStateStatistic | None, skeleton: SkeletonRealization
) -> float:
    if statistic is None:
        return 1.0
    states = tuple(int(x) for x in skeleton.spine_positions)
    return statistic.evaluate(states)


# ---------------------------------------------------------------------------
# exact oracles
# ---------------------------------------------------------------------------

def _check_oracle_budget(model: DiscreteModel) -> None:
    if model.k > 6:
        raise OracleBudgetError("oracle supports at most 6 marks")
    if model.chain.n_states > 25:
        raise OracleBudgetError("oracle supports at most 25 states")
    if model.horizon > 16:
        raise OracleBudgetError("oracle supports horizons up to 16 generations")
    if model.offspring.max_count ** model.k > 100_000:
        raise OracleBudgetError("offspring support too wide for the mark count")


def oracle_lhs(
    model: DiscreteModel, statistic: SpineStateStatistic | None = None
) -> float:
    """Population side: expected k-fold sum of the statistic at the horizon.

    Exact recursion over generations: the joint moment of the per-mark scores
    summed over particles satisfies a branching recursion indexed by subsets
    of marks, with one term per set partition weighted by the falling
    factorial moments of the offspring law.  No skeleton concepts enter.
    """
    _check_oracle_budget(model)
    law, chain, n, k = model.offspring, model.chain, model.horizon, model.k
    phis = _statistic_vectors(model, statistic)
    p_matrix = chain.p_matrix
    subsets = nonempty_subsets(range(k))
    partitions = {sub: set_partitions(sub) for sub in subsets}
    fact = {r: law.factorial_moment(r) for r in range(1, k + 1)}

    current: dict[frozenset, np.ndarray] = {}
    for sub in subsets:
        vec = np.ones(chain.n_states)
        for i in sub:
            vec = vec * phis[i]
        current[sub] = vec
    for _ in range(n):
        pushed = {sub: p_matrix @ current[sub] for sub in subsets}
        nxt: dict[frozenset, np.ndarray] = {}
        for sub in subsets:
            acc = np.zeros(chain.n_states)
            for part in partitions[sub]:
                term = np.full(chain.n_states, fact[len(part)])
                for block in part:
                    term = term * pushed[block]
                acc += term
            nxt[sub] = acc
        current = nxt
    return float(current[frozenset(range(k))][model.initial_state])


def oracle_rhs(
    model: DiscreteModel,
    statistic: SpineStateStatistic | None = None,
    *,
    per_edge_m: bool = False,
) -> float:
    """Skeleton side: expected weight times the statistic under the tilted law.

    Exact recursion over mark blocks: a block of j marks draws a size-biased
    child count, scatters its marks uniformly over the children, and each
    resulting sub-block continues from a tilted-kernel state carrying its
    edge weight factor.  The moment factor enters once per node (or once per
    edge under the diagnostic convention).
    """
    _check_oracle_budget(model)
    law, chain, n, k = model.offspring, model.chain, model.horizon, model.k
    phis = _statistic_vectors(model, statistic)
    n_states = chain.n_states
    # edge transfer: tilted kernel times the inverse functional increment
    transfer = chain.q_matrix * chain.edge_weight_matrix

    subsets = nonempty_subsets(range(k))
    moments = {j: law.moment(j) for j in range(1, k + 1)}
    support = [(a, p) for a, p in model.offspring.pmf.items() if a > 0]
    if not support:
        raise OracleBudgetError("offspring law concentrated at zero children")

    current: dict[frozenset, np.ndarray] = {}
    for sub in subsets:
        vec = np.ones(n_states)
        for i in sub:
            vec = vec * phis[i]
        current[sub] = vec
    for _ in range(n):
        pushed = {sub: transfer @ current[sub] for sub in subsets}
        nxt: dict[frozenset, np.ndarray] = {}
        for sub in subsets:
            j = len(sub)
            members = sorted(sub)
            m_j = moments[j]
            acc = np.zeros(n_states)
            for a, p_a in support:
                biased_p = (float(a) ** j) * p_a / m_j
                assign_acc = np.zeros(n_states)
                for assignment in iter_product(range(a), repeat=j):
                    blocks: dict[int, list[int]] = {}
                    for mark, child in zip(members, assignment):
                        blocks.setdefault(child, []).append(mark)
                    term = np.ones(n_states)
                    for block in blocks.values():
                        factor = pushed[frozenset(block)]
                        if per_edge_m:
                            factor = factor * m_j
                        term = term * factor
                    assign_acc += term
                acc += biased_p * float(a) ** (-j) * assign_acc
            if not per_edge_m:
                acc = acc * m_j
            nxt[sub] = acc
        current = nxt
    return float(current[frozenset(range(k))][model.initial_state])


def oracle_lhs_by_population(
    model: DiscreteModel,
    statistic: SpineStateStatistic | None = None,
    *,
    max_states: int = 200_000,
) -> float:
    """Brute-force cross-check: enumerate the exact distribution of per-state
    population counts at the horizon and sum the statistic over it.

    Enumerates every realization, grouped by the terminal count vector, so it
    shares no machinery with the factorial-moment recursion.  Exponentially
    expensive; guarded by ``max_states``.
    """
    law, chain, n, k = model.offspring, model.chain, model.horizon, model.k
    phis = _statistic_vectors(model, statistic)
    n_states = chain.n_states
    p_matrix = chain.p_matrix

    def unit(state: int) -> dict[tuple[int, ...], float]:
        vec = [0] * n_states
        vec[state] = 1
        return {tuple(vec): 1.0}

    def convolve(d1, d2):
        out: dict[tuple[int, ...], float] = {}
        for v1, p1 in d1.items():
            for v2, p2 in d2.items():
                key = tuple(a + b for a, b in zip(v1, v2))
                out[key] = out.get(key, 0.0) + p1 * p2
        if len(out) > max_states:
            raise OracleBudgetError("population enumeration exceeded the budget")
        return out

    dists = [unit(x) for x in range(n_states)]
    for _ in range(n):
        mixed = []
        for x in range(n_states):
            mix: dict[tuple[int, ...], float] = {}
            for y in range(n_states):
                w = p_matrix[x, y]
                if w == 0.0:
                    continue
                for vec, p in dists[y].items():
                    mix[vec] = mix.get(vec, 0.0) + w * p
            mixed.append(mix)
        new_dists = []
        for x in range(n_states):
            total: dict[tuple[int, ...], float] = {}
            power: dict[tuple[int, ...], float] = {tuple([0] * n_states): 1.0}
            by_count: dict[int, dict] = {0: power}
            for a in range(1, model.offspring.max_count + 1):
                power = convolve(power, mixed[x])
                by_count[a] = power
            for a, p_a in model.offspring.pmf.items():
                for vec, p in by_count[a].items():
                    total[vec] = total.get(vec, 0.0) + p_a * p
            new_dists.append(total)
        dists = new_dists

    final = dists[model.initial_state]
    out = 0.0
    for vec, p in final.items():
        term = p
        for i in range(k):
            term *= float(sum(phis[i][s] * vec[s] for s in range(n_states)))
        out += term
    return out


# ---------------------------------------------------------------------------
# conditional mark placement on a fixed discrete tree
# ---------------------------------------------------------------------------

def gibbs_tuple_weights_dt(
    tree: MarkedTree,
    model: DiscreteModel,
    k: int,
    *,
    max_tuples: int = 2_000_000,
) -> dict[tuple[Label, ...], float]:
    """Conditional mark-placement weights under the tilted law, per k-tuple.

    The tuple numerator multiplies 1/m^{D(v)}(X_v) over internal nodes of the
    tuple's ancestor set and the functional increment over each of its edges;
    dividing by the tuple sum gives weights adding to 1.
    """
    n = model.horizon
    law, chain = model.offspring, model.chain
    alive = sorted(tree.alive_at(float(n)))
    if not alive:
        return {}
    if len(alive) ** k > max_tuples:
        raise EnumerationCapError(f"{len(alive)}^{k} tuples exceed the cap")

    numerators: dict[tuple[Label, ...], float] = {}
    for labels in iter_product(alive, repeat=k):
        term = 1.0
        counts = tuple_skeleton(tree, labels, float(n))
        for v, d in counts.items():
            rec = tree.record(v)
            if generation(v) < n:
                term /= law.moment(d)
            if v != ROOT:
                p_rec = tree.record(parent(v))
                term *= chain.zeta_edge_ratio(_node_state(p_rec), _node_state(rec))
        numerators[labels] = term
    z = math.fsum(numerators.values())
    return {labels: term / z for labels, term in numerators.items()}
