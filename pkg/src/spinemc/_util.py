"""Small shared helpers: deterministic replicate RNG streams, set partitions."""

from __future__ import annotations

import numpy as np


def replicate_rng(seed: int, index: int) -> np.random.Generator:
    """Independent, reproducible stream for one replicate of one run."""
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(index)]))


def set_partitions(items) -> list[list[frozenset]]:
    """All partitions of ``items`` into nonempty blocks (frozensets)."""
    items = list(items)
    if not items:
        return [[]]
    first, rest = items[0], items[1:]
    out: list[list[frozenset]] = []
    for part in set_partitions(rest):
        for i in range(len(part)):
            out.append(part[:i] + [part[i] | {first}] + part[i + 1 :])
        out.append(part + [frozenset([first])])
    return out


def nonempty_subsets(items) -> list[frozenset]:
    items = list(items)
    out: list[frozenset] = []
    for mask in range(1, 1 << len(items)):
        out.append(frozenset(x for i, x in enumerate(items) if mask >> i & 1))
    return out
