"""Binary cluster tree over consecutive matrix indices.

The tree partitions ``{0, ..., n-1}`` into a perfect binary hierarchy of
index intervals.  Level 0 is the whole range, level ``ell`` holds exactly
``2**ell`` nodes, and node ``k`` at level ``ell`` has children ``2k`` and
``2k + 1`` one level down.  Diagonal blocks of a matrix live on the leaf
intervals; every sibling pair induces one pair of off-diagonal blocks.

Uneven sizes are handled by always giving ``ceil(len / 2)`` indices to the
left child, so interval lengths within a level differ by at most one and
the level arrays remain dense (no pruned nodes).  All indices are 0-based.
"""

from __future__ import annotations

import math
from dataclasses import dataclass


@dataclass(frozen=True)
class IndexRange:
    """Half-open, nonempty index interval ``[start, end)``."""

    start: int
    end: int

    def __post_init__(self):
        if not 0 <= self.start < self.end:
            raise ValueError(f"empty or negative index range [{self.start}, {self.end})")

    def __len__(self) -> int:
        return self.end - self.start


class ClusterTree:
    """Perfect binary tree of index intervals covering ``[0, n)``.

    Attributes
    ----------
    n:
        Matrix dimension.
    depth:
        Number of nonroot levels ``L``; the tree has levels ``0..L``.
    levels:
        ``levels[ell]`` is the left-to-right list of :class:`IndexRange`
        nodes at level ``ell`` (``2**ell`` of them).
    """

    def __init__(self, n: int, depth: int):
        if n < 1:
            raise ValueError("matrix dimension must be >= 1")
        if depth < 0 or 2**depth > n:
            raise ValueError(f"depth {depth} leaves empty leaves for n={n}")
        self.n = n
        self.depth = depth
        self.levels: list[list[IndexRange]] = [[IndexRange(0, n)]]
        for _ in range(depth):
            nxt = []
            for rng in self.levels[-1]:
                mid = rng.start + (len(rng) + 1) // 2
                nxt.append(IndexRange(rng.start, mid))
                nxt.append(IndexRange(mid, rng.end))
            self.levels.append(nxt)

    @property
    def num_levels(self) -> int:
        return self.depth + 1

    @property
    def leaves(self) -> list[IndexRange]:
        return self.levels[self.depth]

    @property
    def leaf_sizes(self) -> list[int]:
        return [len(r) for r in self.leaves]

    def node(self, level: int, k: int) -> IndexRange:
        return self.levels[level][k]

    def children(self, level: int, k: int) -> tuple[IndexRange, IndexRange]:
        if level >= self.depth:
            raise ValueError(f"node at leaf level {level} has no children")
        return self.levels[level + 1][2 * k], self.levels[level + 1][2 * k + 1]

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, ClusterTree)
            and self.n == other.n
            and self.depth == other.depth
        )

    def __repr__(self) -> str:
        return f"ClusterTree(n={self.n}, depth={self.depth})"


def build_tree(n: int, leaf_size: int) -> ClusterTree:
    """Build the cluster tree whose leaves have at most ``leaf_size`` indices.

    The depth is ``ceil(log2(n / leaf_size))``, clamped so that every leaf
    stays nonempty.  For ``n <= leaf_size`` the tree is the single root
    interval.
    """
    if n < 1:
        raise ValueError("matrix dimension must be >= 1")
    if leaf_size < 1:
        raise ValueError("leaf_size must be >= 1")
    depth = max(0, math.ceil(math.log2(n / leaf_size))) if n > leaf_size else 0
    depth = min(depth, int(math.floor(math.log2(n))))
    return ClusterTree(n, depth)


def sibling_pairs(tree: ClusterTree, level: int) -> list[tuple[IndexRange, IndexRange]]:
    """Sibling interval pairs at ``level``, one per parent, in parent order."""
    if not 1 <= level <= tree.depth:
        raise ValueError(f"level {level} out of range 1..{tree.depth}")
    nodes = tree.levels[level]
    return [(nodes[2 * k], nodes[2 * k + 1]) for k in range(len(nodes) // 2)]
