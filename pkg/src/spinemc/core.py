"""Ulam-Harris labels, marked trees, spine assignments and skeletons.

Particles are addressed by tuples of positive ints: ``()`` is the initial
ancestor, ``(3, 2, 7)`` the seventh child of the second child of the third
child.  A marked tree maps labels to immutable particle records (birth and
death times, child count, sampled position path).  Spine assignments pin k
marks to lines of descent; skeleton extraction collects the particles that
carried at least one mark together with their mark counts and split times.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterator, Sequence

Label = tuple[int, ...]

ROOT: Label = ()

INF = math.inf


class StructuralError(ValueError):
    """A tree, spine assignment or query violates the structural contract."""


# ---------------------------------------------------------------------------
# Label helpers
# ---------------------------------------------------------------------------

def generation(label: Label) -> int:
    """Generation of a particle: the length of its address."""
    return len(label)


def concat(u: Label, v: Label) -> Label:
    return u + v


def parent(label: Label) -> Label:
    if not label:
        raise StructuralError("the initial ancestor has no parent")
    return label[:-1]


def is_ancestor(u: Label, v: Label) -> bool:
    """True iff u is a (weak) ancestor of v, i.e. a prefix of v."""
    return v[: len(u)] == u


def ancestors(label: Label) -> Iterator[Label]:
    """All weak ancestors of ``label``, root first, ``label`` last."""
    for i in range(len(label) + 1):
        yield label[:i]


def label_to_str(label: Label) -> str:
    return "-" if not label else ".".join(str(i) for i in label)


def label_from_str(s: str) -> Label:
    if s == "-":
        return ROOT
    try:
        return tuple(int(p) for p in s.split("."))
    except ValueError as exc:
        raise StructuralError(f"bad particle label {s!r}") from exc


# ---------------------------------------------------------------------------
# Particle records and marked trees
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PathSegment:
    """Sampled positions of one particle over a clamped lifetime window.

    ``times`` is increasing and brackets the window exactly; ``absorbed_at``
    is the time the particle's line was flagged absorbed (None if never).
    """

    times: tuple[float, ...]
    positions: tuple[float, ...]
    absorbed_at: float | None = None

    @property
    def start_time(self) -> float:
        return self.times[0]

    @property
    def end_time(self) -> float:
        return self.times[-1]

    @property
    def start_position(self) -> float:
        return self.positions[0]

    @property
    def end_position(self) -> float:
        return self.positions[-1]

    def absorbed_by(self, t: float) -> bool:
        return self.absorbed_at is not None and self.absorbed_at <= t


@dataclass(frozen=True)
class ParticleRecord:
    """One particle: lifetime, child count and sampled position path.

    ``death`` is +inf for particles still alive at the tree horizon, in which
    case ``child_count`` is None (undecided).  ``path`` holds (time, position)
    samples covering [birth, min(death, horizon)]; interior samples exist only
    where the simulation needed them.  ``absorbed_at`` marks the first time
    the particle's line of descent was flagged absorbed (inherited by
    children), used by motion models whose tilt functional can hit zero.
    """

    label: Label
    birth: float
    death: float
    child_count: int | None
    path: tuple[tuple[float, float], ...]
    absorbed_at: float | None = None

    @property
    def is_graveyard(self) -> bool:
        return self.child_count == 0

    @property
    def alive_at_horizon(self) -> bool:
        return self.death == INF

    def alive_at(self, t: float) -> bool:
        return self.birth <= t < self.death

    def dead_by(self, t: float) -> bool:
        return self.death <= t

    def clamped_death(self, t: float) -> float:
        return min(self.death, t)

    def position_at(self, t: float, *, step: bool = False) -> float:
        """Sampled position at time t within this particle's own window.

        With ``step`` the path is treated as piecewise constant
        (right-continuous), as for finite-state motion; otherwise t must hit
        a stored sample exactly.
        """
        times = self.path
        lo, hi = times[0][0], times[-1][0]
        if not (lo <= t <= hi):
            raise StructuralError(
                f"time {t} outside sampled window [{lo}, {hi}] of {label_to_str(self.label)}"
            )
        prev = times[0]
        for tt, pos in times:
            if tt == t:
                return pos
            if tt > t:
                if step:
                    return prev[1]
                raise StructuralError(
                    f"no sample at time {t} for particle {label_to_str(self.label)}; "
                    "declare the time on the simulation grid"
                )
            prev = (tt, pos)
        return prev[1]

    def segment(self, t: float, *, step: bool = False) -> PathSegment:
        """Path over [birth, min(death, t)], truncating stored samples.

        With ``step`` (piecewise-constant paths) a missing sample at the
        window end is synthesized by extending the last state; diffusive
        paths must have sampled the end point.
        """
        end = self.clamped_death(t)
        times: list[float] = []
        positions: list[float] = []
        for tt, pos in self.path:
            if tt <= end:
                times.append(tt)
                positions.append(pos)
        if not times or times[-1] < end:
            if step and times:
                times.append(end)
                positions.append(positions[-1])
            else:
                raise StructuralError(
                    f"particle {label_to_str(self.label)} has no sample at segment end {end}"
                )
        return PathSegment(tuple(times), tuple(positions), self.absorbed_at)


@dataclass(frozen=True)
class MarkedTree:
    """A full branching-process realization up to a fixed horizon."""

    records: dict[Label, ParticleRecord]
    horizon: float
    origin: float

    def __post_init__(self) -> None:
        if ROOT not in self.records:
            raise StructuralError("tree must contain the initial ancestor")

    def record(self, label: Label) -> ParticleRecord:
        try:
            return self.records[label]
        except KeyError:
            raise StructuralError(f"particle {label_to_str(label)} not in tree") from None

    def __contains__(self, label: Label) -> bool:
        return label in self.records

    def __len__(self) -> int:
        return len(self.records)

    def children(self, label: Label) -> list[Label]:
        rec = self.record(label)
        n = rec.child_count or 0
        return [label + (j,) for j in range(1, n + 1)]

    def alive_at(self, t: float) -> set[Label]:
        """Particles alive at time t (graveyard particles excluded)."""
        if not 0.0 <= t <= self.horizon:
            raise StructuralError(f"time {t} beyond simulated horizon {self.horizon}")
        return {u for u, rec in self.records.items() if rec.alive_at(t)}

    def graveyard_at(self, t: float) -> set[Label]:
        """Particles dead with zero children by time t (marks can rest here)."""
        if not 0.0 <= t <= self.horizon:
            raise StructuralError(f"time {t} beyond simulated horizon {self.horizon}")
        return {
            u
            for u, rec in self.records.items()
            if rec.is_graveyard and rec.dead_by(t)
        }

    def line_position(self, label: Label, t: float, *, step: bool = False) -> float:
        """Position of the extended path of ``label`` at time t.

        Walks down the ancestry to the deepest ancestor whose lifetime window
        covers t; at a branch time the newborn's (identical) start sample wins.
        """
        lineage = list(ancestors(label))
        for u in reversed(lineage):
            rec = self.records[u]
            if rec.birth <= t <= rec.clamped_death(self.horizon):
                return rec.position_at(t, step=step)
        raise StructuralError(
            f"no ancestor of {label_to_str(label)} covers time {t}"
        )

    def line_absorbed_by(self, label: Label, t: float) -> bool:
        rec = self.record(label)
        return rec.absorbed_at is not None and rec.absorbed_at <= t

    def validate(self) -> None:
        """Check prefix closure, child indexing and time consistency."""
        for u, rec in self.records.items():
            if rec.label != u:
                raise StructuralError("record filed under wrong label")
            if u != ROOT:
                p = parent(u)
                if p not in self.records:
                    raise StructuralError(f"missing ancestor of {label_to_str(u)}")
                prec = self.records[p]
                if prec.child_count is None or u[-1] > prec.child_count or u[-1] < 1:
                    raise StructuralError(f"{label_to_str(u)} is not a recorded child")
                if rec.birth != prec.death:
                    raise StructuralError(
                        f"birth of {label_to_str(u)} differs from parent death"
                    )
            if rec.death < rec.birth:
                raise StructuralError(f"negative lifetime at {label_to_str(u)}")
            if rec.child_count is not None and rec.child_count > 0:
                for v in self.children(u):
                    if v not in self.records:
                        raise StructuralError(f"missing child {label_to_str(v)}")


# ---------------------------------------------------------------------------
# Spines and skeletons
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SpineAssignment:
    """k marks, each following one line of descent to the horizon.

    ``final_nodes[i]`` is the particle carrying mark i at the horizon: either
    alive at the horizon or resting in the graveyard (died childless).  All
    intermediate choices are recoverable from the final node's ancestry.
    """

    k: int
    final_nodes: tuple[Label, ...]

    def __post_init__(self) -> None:
        if self.k < 1 or len(self.final_nodes) != self.k:
            raise StructuralError("need one final node per mark")

    def node_at(self, tree: MarkedTree, mark: int, t: float) -> Label:
        """Particle carrying ``mark`` (0-based) at time t."""
        final = self.final_nodes[mark]
        for u in ancestors(final):
            rec = tree.record(u)
            if rec.alive_at(t):
                return u
            if rec.is_graveyard and rec.dead_by(t):
                return u
        raise StructuralError(
            f"mark {mark} has no carrier at time {t}; final node {label_to_str(final)}"
        )

    def validate(self, tree: MarkedTree) -> None:
        for i, final in enumerate(self.final_nodes):
            rec = tree.record(final)
            if not (rec.alive_at_horizon or rec.is_graveyard):
                raise StructuralError(
                    f"mark {i} ends on {label_to_str(final)}, which died with children"
                )


@dataclass(frozen=True)
class SkeletonRealization:
    """Spine-carrying particles at time t with mark counts and split times."""

    t: float
    k: int
    nodes: dict[Label, ParticleRecord]
    mark_count: dict[Label, int]
    spine_nodes: tuple[Label, ...]
    spine_positions: tuple[float, ...] | None
    split_times: tuple[tuple[float, ...], ...]

    def carriers_at(self, s: float) -> set[Label]:
        """Skeleton nodes holding their marks at time s (live or graveyard)."""
        out = set()
        for u, rec in self.nodes.items():
            if rec.alive_at(s) or (rec.is_graveyard and rec.dead_by(s)):
                out.add(u)
        return out

    def split_time(self, i: int, j: int) -> float:
        return self.split_times[i][j]


def _first_split(tree: MarkedTree, u: Label, v: Label, t: float) -> float:
    """First time marks ending on u and v sit on different particles, or inf."""
    if u == v:
        return INF
    n = 0
    while n < len(u) and n < len(v) and u[n] == v[n]:
        n += 1
    lca = u[:n]
    tau = tree.record(lca).death
    return tau if tau <= t else INF


def extract_skeleton(
    tree: MarkedTree,
    spines: SpineAssignment,
    t: float,
    *,
    with_positions: bool = True,
    step_positions: bool = False,
) -> SkeletonRealization:
    """Collect the particles that carried at least one mark up to time t."""
    if not 0.0 <= t <= tree.horizon:
        raise StructuralError(f"time {t} beyond simulated horizon {tree.horizon}")
    spines.validate(tree)
    k = spines.k
    spine_nodes = tuple(spines.node_at(tree, i, t) for i in range(k))

    nodes: dict[Label, ParticleRecord] = {}
    mark_count: dict[Label, int] = {}
    for final in spines.final_nodes:
        for u in ancestors(final):
            rec = tree.record(u)
            if rec.birth > t:
                break
            nodes[u] = rec
            mark_count[u] = mark_count.get(u, 0) + 1

    positions = None
    if with_positions:
        pos = []
        for i in range(k):
            rec = tree.record(spine_nodes[i])
            if rec.is_graveyard and rec.dead_by(t):
                pos.append(math.nan)  # graveyard placeholder
            else:
                pos.append(tree.line_position(spine_nodes[i], t, step=step_positions))
        positions = tuple(pos)

    split = tuple(
        tuple(_first_split(tree, spines.final_nodes[i], spines.final_nodes[j], t) for j in range(k))
        for i in range(k)
    )
    return SkeletonRealization(
        t=t,
        k=k,
        nodes=nodes,
        mark_count=mark_count,
        spine_nodes=spine_nodes,
        spine_positions=positions,
        split_times=split,
    )


def tuple_skeleton(tree: MarkedTree, labels: Sequence[Label], t: float) -> dict[Label, int]:
    """Ancestor set of a k-tuple born by t, with per-node mark counts.

    The map sends every weak ancestor v of some tuple entry (with birth <= t)
    to the number of tuple entries it is an ancestor of.
    """
    counts: dict[Label, int] = {}
    for u in labels:
        if u not in tree:
            raise StructuralError(f"particle {label_to_str(u)} not in tree")
        for v in ancestors(u):
            if tree.record(v).birth > t:
                break
            counts[v] = counts.get(v, 0) + 1
    return counts


def spine_probability(tree: MarkedTree, labels: Sequence[Label], t: float) -> float:
    """Probability that the k marks sit exactly on ``labels`` at time t.

    Conditional on the tree: each mark chooses a child uniformly at every
    branch event along its line, so the tuple probability is the product over
    dead ancestors v (with at least one child) of A_v^(-D(v)), D(v) counting
    the tuple entries below v.  Childless deaths contribute no factor: the
    marks stay put.  Summed over all tuples of live-or-graveyard particles
    the result is 1.
    """
    alive = tree.alive_at(t)
    grave = tree.graveyard_at(t)
    for u in labels:
        if u not in alive and u not in grave:
            raise StructuralError(
                f"{label_to_str(u)} neither alive nor in the graveyard at {t}"
            )
    prob = 1.0
    for v, d in tuple_skeleton(tree, labels, t).items():
        rec = tree.record(v)
        if rec.dead_by(t) and (rec.child_count or 0) >= 1:
            prob *= float(rec.child_count) ** (-d)
    return prob


# ---------------------------------------------------------------------------
# Line-oriented serialization (debugging and golden tests)
# ---------------------------------------------------------------------------

def tree_to_text(tree: MarkedTree) -> str:
    """One particle per line: label, birth, death, child count, samples."""
    lines = [f"#horizon {tree.horizon!r}", f"#origin {tree.origin!r}"]
    for label in sorted(tree.records):
        rec = tree.records[label]
        a = "?" if rec.child_count is None else str(rec.child_count)
        death = "inf" if rec.death == INF else repr(rec.death)
        samples = ",".join(f"{t!r}:{x!r}" for t, x in rec.path)
        absorbed = "" if rec.absorbed_at is None else f"\tabsorbed={rec.absorbed_at!r}"
        lines.append(
            f"{label_to_str(label)}\t{rec.birth!r}\t{death}\t{a}\t{samples}{absorbed}"
        )
    return "\n".join(lines) + "\n"


def tree_from_text(text: str) -> MarkedTree:
    horizon = origin = None
    records: dict[Label, ParticleRecord] = {}
    for line in text.splitlines():
        line = line.strip()
        if not line:
            continue
        if line.startswith("#horizon"):
            horizon = float(line.split()[1])
            continue
        if line.startswith("#origin"):
            origin = float(line.split()[1])
            continue
        parts = line.split("\t")
        if len(parts) < 5:
            raise StructuralError(f"malformed particle line: {line!r}")
        label = label_from_str(parts[0])
        birth = float(parts[1])
        death = INF if parts[2] == "inf" else float(parts[2])
        count = None if parts[3] == "?" else int(parts[3])
        path = tuple(
            (float(t), float(x))
            for t, x in (pair.split(":") for pair in parts[4].split(",") if pair)
        )
        absorbed = None
        for extra in parts[5:]:
            if extra.startswith("absorbed="):
                absorbed = float(extra.split("=", 1)[1])
        records[label] = ParticleRecord(label, birth, death, count, path, absorbed)
    if horizon is None or origin is None:
        raise StructuralError("missing #horizon or #origin header")
    return MarkedTree(records=records, horizon=horizon, origin=origin)


def skeleton_to_text(skel: SkeletonRealization) -> str:
    lines = [f"#t {skel.t!r}", f"#k {skel.k}"]
    for label in sorted(skel.nodes):
        rec = skel.nodes[label]
        death = "inf" if rec.death == INF else repr(rec.death)
        lines.append(
            f"{label_to_str(label)}\t{rec.birth!r}\t{death}\tD={skel.mark_count[label]}"
        )
    lines.append("#spines " + " ".join(label_to_str(u) for u in skel.spine_nodes))
    for i in range(skel.k):
        for j in range(i + 1, skel.k):
            s = skel.split_times[i][j]
            lines.append(f"#split {i + 1} {j + 1} {'inf' if s == INF else repr(s)}")
    return "\n".join(lines) + "\n"
