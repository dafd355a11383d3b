"""Immutable DAG of logically nested hypotheses.

Nodes are dense integers ``0..n-1``.  Every structural query needed by the
smoothing and selection code (topological order, descendant closures,
longest-path depths, leaves and roots) is computed once at construction.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass
from functools import cached_property
from typing import Iterable, Sequence

import numpy as np
from scipy import sparse

from .errors import AlignmentError, ConstraintViolation, CycleDetected, DuplicateEdge, IndexOutOfRange

__all__ = [
    "Dag",
    "TruthAssignment",
    "build_dag",
    "descendant_closure",
    "topological_sort",
    "depth_partition",
    "kahn_order",
]


def kahn_order(nodes: Iterable[int], children_of, parents_of) -> list[int]:
    """Kahn's algorithm restricted to ``nodes``, smallest index first.

    Edges leaving the node set are ignored, so this also sorts induced
    subgraphs.  Returns a list shorter than ``nodes`` if there is a cycle.
    """
    members = set(nodes)
    indeg = {v: sum(1 for u in parents_of[v] if u in members) for v in members}
    heap = [v for v, d in indeg.items() if d == 0]
    heapq.heapify(heap)
    order = []
    while heap:
        v = heapq.heappop(heap)
        order.append(v)
        for w in children_of[v]:
            if w in members:
                indeg[w] -= 1
                if indeg[w] == 0:
                    heapq.heappush(heap, w)
    return order


class Dag:
    """Validated directed acyclic graph.  Construct with :func:`build_dag`."""

    def __init__(self, node_count: int, edges: Sequence[tuple[int, int]]):
        n = int(node_count)
        if n < 0:
            raise IndexOutOfRange(f"node_count must be non-negative, got {node_count}")
        children: list[list[int]] = [[] for _ in range(n)]
        parents: list[list[int]] = [[] for _ in range(n)]
        seen = set()
        clean = []
        for edge in edges:
            u, v = (int(x) for x in edge)
            if not (0 <= u < n and 0 <= v < n):
                raise IndexOutOfRange(f"edge ({u}, {v}) outside [0, {n})")
            if u == v:
                raise CycleDetected(f"self-loop at node {u}")
            if (u, v) in seen:
                raise DuplicateEdge(f"duplicate edge ({u}, {v})")
            seen.add((u, v))
            clean.append((u, v))
            children[u].append(v)
            parents[v].append(u)

        self.node_count = n
        self.edges = tuple(clean)
        self.children_of = tuple(tuple(sorted(c)) for c in children)
        self.parents_of = tuple(tuple(sorted(p)) for p in parents)

        order = kahn_order(range(n), self.children_of, self.parents_of)
        if len(order) != n:
            raise CycleDetected("edge set contains a directed cycle")
        self.topo_order = tuple(order)

        depth = [1] * n
        for v in order:
            if self.parents_of[v]:
                depth[v] = 1 + max(depth[u] for u in self.parents_of[v])
        self.depth = tuple(depth)

        # one reverse-topological pass of set unions
        sets: list[set[int]] = [set() for _ in range(n)]
        for v in reversed(order):
            s = sets[v]
            s.add(v)
            for w in self.children_of[v]:
                s |= sets[w]
        self.closures = tuple(np.array(sorted(s), dtype=np.intp) for s in sets)
        for arr in self.closures:
            arr.setflags(write=False)

        self.leaves = frozenset(v for v in range(n) if not self.children_of[v])
        self.roots = frozenset(v for v in range(n) if not self.parents_of[v])

    def __repr__(self):
        return f"Dag(node_count={self.node_count}, edges={len(self.edges)})"

    def __eq__(self, other):
        if not isinstance(other, Dag):
            return NotImplemented
        return self.node_count == other.node_count and set(self.edges) == set(other.edges)

    def __hash__(self):
        return hash((self.node_count, frozenset(self.edges)))

    def _check(self, v: int) -> int:
        if not 0 <= v < self.node_count:
            raise IndexOutOfRange(f"node {v} outside [0, {self.node_count})")
        return int(v)

    @property
    def max_depth(self) -> int:
        return max(self.depth, default=0)

    @cached_property
    def depth_array(self) -> np.ndarray:
        return np.asarray(self.depth, dtype=np.int64)

    @cached_property
    def closure_sizes(self) -> np.ndarray:
        return np.array([len(c) for c in self.closures], dtype=np.int64)

    @cached_property
    def closure_matrix(self) -> sparse.csr_matrix:
        """0/1 matrix with ``M[v, c] = 1`` iff ``c`` is in the closure of ``v``."""
        return self._support_matrix(self.closures)

    @cached_property
    def family_matrix(self) -> sparse.csr_matrix:
        """0/1 matrix over each node and its direct children."""
        return self._support_matrix(
            [np.array((v,) + self.children_of[v], dtype=np.intp) for v in range(self.node_count)]
        )

    def _support_matrix(self, supports) -> sparse.csr_matrix:
        n = self.node_count
        indptr = np.zeros(n + 1, dtype=np.intp)
        indptr[1:] = np.cumsum([len(s) for s in supports])
        indices = np.concatenate(supports) if n else np.zeros(0, dtype=np.intp)
        data = np.ones(len(indices))
        return sparse.csr_matrix((data, indices, indptr), shape=(n, n))

    def induced_topological_order(self, nodes: Iterable[int]) -> list[int]:
        """Deterministic topological order of the subgraph induced on ``nodes``."""
        return kahn_order(nodes, self.children_of, self.parents_of)

    def is_upward_closed(self, mask) -> bool:
        """True if every flagged node has all of its parents flagged."""
        mask = np.asarray(mask, dtype=bool)
        return all(mask[u] for u, v in self.edges if mask[v])


def build_dag(node_count: int, edges: Sequence[tuple[int, int]] = ()) -> Dag:
    """Validate ``edges`` and return a :class:`Dag` with every cache populated.

    Raises
    ------
    CycleDetected
        If the edges admit a directed cycle (self-loops included).
    IndexOutOfRange
        If an endpoint is outside ``[0, node_count)``.
    DuplicateEdge
        If the same ordered pair appears twice.
    """
    return Dag(node_count, edges)


def descendant_closure(dag: Dag, v: int) -> np.ndarray:
    """Sorted indices of ``v`` and all of its descendants."""
    return dag.closures[dag._check(v)]


def topological_sort(dag: Dag) -> tuple[int, ...]:
    return dag.topo_order


def depth_partition(dag: Dag) -> list[frozenset[int]]:
    """Nodes grouped by longest-path depth; roots have depth 1."""
    groups: list[set[int]] = [set() for _ in range(dag.max_depth)]
    for v, d in enumerate(dag.depth):
        groups[d - 1].add(v)
    return [frozenset(g) for g in groups]


@dataclass(frozen=True)
class TruthAssignment:
    """Which hypotheses are false (``nonnull[v]`` is True for a signal)."""

    nonnull: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.nonnull, dtype=bool).copy()
        arr.setflags(write=False)
        object.__setattr__(self, "nonnull", arr)

    @classmethod
    def validated(cls, dag: Dag, nonnull) -> "TruthAssignment":
        truth = cls(nonnull)
        if truth.nonnull.shape != (dag.node_count,):
            raise AlignmentError("truth assignment not aligned with graph")
        if not dag.is_upward_closed(truth.nonnull):
            raise ConstraintViolation("nonnull set is not closed under ancestors")
        return truth

    @property
    def signals(self) -> np.ndarray:
        return np.flatnonzero(self.nonnull)

    @property
    def nulls(self) -> np.ndarray:
        return np.flatnonzero(~self.nonnull)
