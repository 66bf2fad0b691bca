"""Labels, marked trees, skeletons, mark-placement probabilities."""

import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from spinemc.core import (
    INF,
    MarkedTree,
    ParticleRecord,
    ROOT,
    SpineAssignment,
    StructuralError,
    ancestors,
    concat,
    extract_skeleton,
    generation,
    is_ancestor,
    label_from_str,
    label_to_str,
    spine_probability,
    tree_from_text,
    tree_to_text,
)
from spinemc.laws import BranchRate, OffspringLaw
from spinemc.motion import BrownianMotion
from spinemc.sim_ct import BranchingModel, attach_spines, simulate_p

labels = st.lists(st.integers(min_value=1, max_value=9), max_size=6).map(tuple)


def rec(label, birth, death, count, pos=0.0, horizon=1.0):
    """Constant-position record sampled at its window endpoints."""
    end = horizon if death == INF else death
    path = ((birth, pos),) if end == birth else ((birth, pos), (end, pos))
    return ParticleRecord(label, birth, death, count, path)


def tree_of(records, horizon):
    return MarkedTree(records={r.label: r for r in records}, horizon=horizon, origin=0.0)


def binary_split_tree(split=0.3, horizon=1.0):
    """Root dies at ``split`` leaving two children alive at the horizon."""
    return tree_of(
        [rec(ROOT, 0.0, split, 2), rec((1,), split, INF, None), rec((2,), split, INF, None)],
        horizon,
    )


class TestLabels:
    @given(labels, labels)
    def test_concat_generation(self, u, v):
        assert generation(concat(u, v)) == generation(u) + generation(v)
        assert concat(u, ROOT) == u
        assert concat(ROOT, u) == u

    @given(labels, labels)
    def test_ancestor_is_prefix(self, u, v):
        assert is_ancestor(u, concat(u, v))
        if v and not is_ancestor(v, u):
            assert not is_ancestor(concat(u, v), u)

    @given(labels)
    def test_ancestors_chain(self, u):
        chain = list(ancestors(u))
        assert chain[0] == ROOT and chain[-1] == u
        assert all(is_ancestor(a, b) for a, b in zip(chain, chain[1:]))

    @given(labels)
    def test_string_round_trip(self, u):
        assert label_from_str(label_to_str(u)) == u


class TestAliveAt:
    def test_single_particle(self):
        tree = tree_of([rec(ROOT, 0.0, INF, None)], 1.0)
        assert tree.alive_at(0.5) == {ROOT}

    def test_after_binary_split(self):
        assert binary_split_tree().alive_at(0.5) == {(1,), (2,)}

    def test_graveyard_empty(self):
        tree = tree_of([rec(ROOT, 0.0, 0.3, 0)], 1.0)
        assert tree.alive_at(0.5) == set()
        assert tree.graveyard_at(0.5) == {ROOT}

    def test_beyond_horizon_rejected(self):
        tree = tree_of([rec(ROOT, 0.0, INF, None)], 1.0)
        with pytest.raises(StructuralError):
            tree.alive_at(1.5)


class TestSkeleton:
    def test_single_mark_line(self):
        tree = binary_split_tree()
        spines = SpineAssignment(k=1, final_nodes=((1,),))
        skel = extract_skeleton(tree, spines, 1.0)
        assert set(skel.nodes) == {ROOT, (1,)}
        assert skel.mark_count == {ROOT: 1, (1,): 1}
        assert skel.split_times[0][0] == INF

    def test_two_marks_together(self):
        tree = binary_split_tree(split=0.3)
        spines = SpineAssignment(k=2, final_nodes=((1,), (1,)))
        skel = extract_skeleton(tree, spines, 1.0)
        assert set(skel.nodes) == {ROOT, (1,)}
        assert skel.mark_count[ROOT] == 2 and skel.mark_count[(1,)] == 2
        assert skel.split_time(0, 1) == INF

    def test_two_marks_split(self):
        tree = binary_split_tree(split=0.3)
        spines = SpineAssignment(k=2, final_nodes=((1,), (2,)))
        skel = extract_skeleton(tree, spines, 1.0)
        assert set(skel.nodes) == {ROOT, (1,), (2,)}
        assert skel.mark_count == {ROOT: 2, (1,): 1, (2,): 1}
        assert skel.split_time(0, 1) == 0.3
        assert skel.split_time(1, 0) == 0.3  # symmetric
        assert skel.split_time(0, 0) == INF  # diagonal convention

    def test_before_split_marks_share_root(self):
        tree = binary_split_tree(split=0.3)
        spines = SpineAssignment(k=2, final_nodes=((1,), (2,)))
        skel = extract_skeleton(tree, spines, 0.2, with_positions=False)
        assert set(skel.nodes) == {ROOT}
        assert skel.split_time(0, 1) == INF

    def test_inconsistent_assignment_rejected(self):
        tree = binary_split_tree()
        with pytest.raises(StructuralError):
            extract_skeleton(tree, SpineAssignment(1, ((3,),)), 1.0)


class TestSpineProbability:
    def test_no_branching_is_certain(self):
        tree = tree_of([rec(ROOT, 0.0, INF, None)], 1.0)
        assert spine_probability(tree, [ROOT, ROOT], 0.7) == 1.0

    def test_one_binary_branch_single_mark(self):
        assert spine_probability(binary_split_tree(), [(1,)], 0.5) == 0.5

    def test_one_binary_branch_pair(self):
        tree = binary_split_tree()
        assert spine_probability(tree, [(1,), (2,)], 0.5) == 0.25
        total = sum(
            spine_probability(tree, [u, v], 0.5)
            for u in [(1,), (2,)]
            for v in [(1,), (2,)]
        )
        assert total == pytest.approx(1.0, abs=1e-15)

    def test_unknown_particle_rejected(self):
        with pytest.raises(StructuralError):
            spine_probability(binary_split_tree(), [(7,)], 0.5)

    @pytest.mark.parametrize("seed", range(8))
    @pytest.mark.parametrize("k", [1, 2, 3])
    def test_sums_to_one_on_simulated_trees(self, seed, k):
        # includes graveyard lines: marks may rest on childless dead particles
        model = BranchingModel(
            BrownianMotion(), BranchRate.const(1.3), OffspringLaw({0: 0.3, 1: 0.2, 3: 0.5})
        )
        tree = simulate_p(model, 1.0, np.random.default_rng(seed))
        carriers = sorted(tree.alive_at(1.0) | tree.graveyard_at(1.0))
        from itertools import product

        total = math.fsum(
            spine_probability(tree, tup, 1.0) for tup in product(carriers, repeat=k)
        )
        assert total == pytest.approx(1.0, abs=1e-12)

    @pytest.mark.parametrize("seed", range(5))
    def test_mark_conservation(self, seed):
        model = BranchingModel(
            BrownianMotion(), BranchRate.const(1.0), OffspringLaw({0: 0.25, 2: 0.75})
        )
        rng = np.random.default_rng(seed + 100)
        tree = simulate_p(model, 1.0, rng)
        spines = attach_spines(tree, 3, rng)
        for s in (0.25, 0.5, 0.75, 1.0):
            skel = extract_skeleton(tree, spines, s, with_positions=False)
            assert sum(skel.mark_count[u] for u in skel.carriers_at(s)) == 3


class TestSerialization:
    def test_round_trip(self):
        model = BranchingModel(
            BrownianMotion(), BranchRate.const(1.0), OffspringLaw({0: 0.2, 2: 0.8})
        )
        tree = simulate_p(model, 0.8, np.random.default_rng(5))
        back = tree_from_text(tree_to_text(tree))
        assert back.horizon == tree.horizon
        assert set(back.records) == set(tree.records)
        for label, r in tree.records.items():
            b = back.records[label]
            assert (b.birth, b.death, b.child_count, b.path) == (
                r.birth, r.death, r.child_count, r.path,
            )

    def test_golden_format(self):
        tree = tree_of(
            [rec(ROOT, 0.0, 0.25, 2, pos=1.5), rec((1,), 0.25, INF, None, pos=2.0),
             rec((2,), 0.25, 0.5, 0, pos=-1.0)],
            1.0,
        )
        assert tree_to_text(tree) == (
            "#horizon 1.0\n"
            "#origin 0.0\n"
            "-\t0.0\t0.25\t2\t0.0:1.5,0.25:1.5\n"
            "1\t0.25\tinf\t?\t0.25:2.0,1.0:2.0\n"
            "2\t0.25\t0.5\t0\t0.25:-1.0,0.5:-1.0\n"
        )

    def test_extended_path_lookup(self):
        tree = binary_split_tree(split=0.25)
        # times before the child's birth resolve through the ancestor's path
        assert tree.line_position((1,), 0.0) == 0.0
        assert tree.line_position((1,), 0.25) == 0.0

    def test_skeleton_serialization(self):
        from spinemc.core import skeleton_to_text

        tree = binary_split_tree(split=0.3)
        spines = SpineAssignment(k=2, final_nodes=((1,), (2,)))
        skel = extract_skeleton(tree, spines, 1.0)
        text = skeleton_to_text(skel)
        assert text == (
            "#t 1.0\n"
            "#k 2\n"
            "-\t0.0\t0.3\tD=2\n"
            "1\t0.3\tinf\tD=1\n"
            "2\t0.3\tinf\tD=1\n"
            "#spines 1 2\n"
            "#split 1 2 0.3\n"
        )

    def test_validate_passes_on_simulated_tree(self):
        model = BranchingModel(
            BrownianMotion(), BranchRate.const(1.5), OffspringLaw({0: 0.4, 2: 0.6})
        )
        tree = simulate_p(model, 1.0, np.random.default_rng(17))
        tree.validate()
