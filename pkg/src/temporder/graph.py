"""Temporal-DAG algebra over variable-lag node pairs.

Nodes are (var, lag) pairs with lag 0 = time t and lag tau = time t - tau.
The flat index of a node is ``var + d * lag``; every matrix/CSV interface in
the package uses this indexing. Edges always point forward in time
(source.lag >= target.lag), and a stationary ground-truth graph is stored as
a template of links terminating at lag 0 (use :meth:`TemporalDag.unrolled`
to materialise the repeats inside a finite window).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, List, NamedTuple, Sequence, Tuple

import numpy as np


class CycleError(ValueError):
    """Raised when an edge set that must be acyclic contains a cycle."""


class NodeId(NamedTuple):
    var: int
    lag: int


Edge = Tuple[NodeId, NodeId]


def _as_edge(edge) -> Edge:
    (sv, sl), (tv, tl) = edge
    return (NodeId(int(sv), int(sl)), NodeId(int(tv), int(tl)))


@dataclass(frozen=True)
class TemporalDag:
    """Directed acyclic graph over the d * (tau_max + 1) variable-lag nodes.

    Construction validates node ranges, temporal validity of every edge and
    acyclicity; instances are immutable and safe to share.
    """

    d: int
    tau_max: int
    edges: frozenset

    def __post_init__(self):
        if self.d < 1:
            raise ValueError(f"d must be >= 1, got {self.d}")
        if self.tau_max < 0:
            raise ValueError(f"tau_max must be >= 0, got {self.tau_max}")
        edges = frozenset(_as_edge(e) for e in self.edges)
        object.__setattr__(self, "edges", edges)
        for src, dst in edges:
            for node in (src, dst):
                if not (0 <= node.var < self.d):
                    raise ValueError(f"node {node} has var outside [0, {self.d})")
                if not (0 <= node.lag <= self.tau_max):
                    raise ValueError(f"node {node} has lag outside [0, {self.tau_max}]")
            if src.lag < dst.lag:
                raise ValueError(
                    f"edge {src} -> {dst} points backward in time "
                    f"(source lag {src.lag} < target lag {dst.lag})"
                )
            if src == dst:
                raise CycleError(f"self-loop {src} -> {dst}")
        _check_acyclic(self)

    @property
    def n_nodes(self) -> int:
        return self.d * (self.tau_max + 1)

    @property
    def nodes(self) -> Tuple[NodeId, ...]:
        return node_universe(self.d, self.tau_max)

    def flat(self, node: NodeId) -> int:
        return node.var + self.d * node.lag

    def node_at(self, flat_index: int) -> NodeId:
        return NodeId(flat_index % self.d, flat_index // self.d)

    def unrolled(self) -> "TemporalDag":
        """Repeat every lagged link at all time shifts that fit in the window.

        A template edge (i, lag a) -> (j, lag b) also holds at
        (i, a+s) -> (j, b+s) for every shift s with a + s <= tau_max
        (stationarity). Lag-0 contemporaneous edges repeat at every slice.
        """
        edges = set()
        for src, dst in self.edges:
            shift = 0
            while src.lag + shift <= self.tau_max:
                edges.add((NodeId(src.var, src.lag + shift), NodeId(dst.var, dst.lag + shift)))
                shift += 1
        return TemporalDag(self.d, self.tau_max, frozenset(edges))


def node_universe(d: int, tau_max: int) -> Tuple[NodeId, ...]:
    """All (var, lag) nodes in flat-index order (lag-major blocks)."""
    return tuple(NodeId(v, lag) for lag in range(tau_max + 1) for v in range(d))


def _check_acyclic(dag: TemporalDag) -> None:
    succ, indeg = _adjacency(dag)
    queue = [i for i in range(dag.n_nodes) if indeg[i] == 0]
    seen = 0
    while queue:
        node = queue.pop()
        seen += 1
        for child in succ[node]:
            indeg[child] -= 1
            if indeg[child] == 0:
                queue.append(child)
    if seen != dag.n_nodes:
        raise CycleError("edge set contains a directed cycle")


def _adjacency(dag: TemporalDag):
    """Successor lists and in-degrees in flat-index space."""
    succ: List[List[int]] = [[] for _ in range(dag.n_nodes)]
    indeg = [0] * dag.n_nodes
    for src, dst in dag.edges:
        succ[dag.flat(src)].append(dag.flat(dst))
        indeg[dag.flat(dst)] += 1
    for children in succ:
        children.sort()
    return succ, indeg


class Ordering:
    """A causal (topological) ordering: a permutation of variable-lag nodes.

    ``position[node]`` is the rank of the node in the sequence; a node can
    only cause nodes appearing after it.
    """

    __slots__ = ("sequence", "position")

    def __init__(self, sequence: Iterable[NodeId]):
        self.sequence: Tuple[NodeId, ...] = tuple(NodeId(int(v), int(g)) for v, g in sequence)
        self.position = {node: i for i, node in enumerate(self.sequence)}
        if len(self.position) != len(self.sequence):
            raise ValueError("ordering contains duplicate nodes")

    def __len__(self) -> int:
        return len(self.sequence)

    def __iter__(self):
        return iter(self.sequence)

    def __eq__(self, other) -> bool:
        return isinstance(other, Ordering) and self.sequence == other.sequence

    def __hash__(self) -> int:
        return hash(self.sequence)

    def __repr__(self) -> str:
        return f"Ordering({list(self.sequence)!r})"

    def node_set(self) -> frozenset:
        return frozenset(self.sequence)

    def is_consistent_with(self, dag: TemporalDag) -> bool:
        """True iff every dag edge has its source before its target."""
        if self.node_set() != frozenset(dag.nodes):
            return False
        return all(self.position[s] < self.position[t] for s, t in dag.edges)


@dataclass(frozen=True)
class SummaryAdjacency:
    """Per-variable collapse of a window graph; self-loops mark autocorrelation."""

    d: int
    edges: frozenset

    def __post_init__(self):
        edges = frozenset((int(i), int(j)) for i, j in self.edges)
        object.__setattr__(self, "edges", edges)
        for i, j in edges:
            if not (0 <= i < self.d and 0 <= j < self.d):
                raise ValueError(f"summary edge ({i}, {j}) outside [0, {self.d})")


# ---------------------------------------------------------------------------
# Core operations
# ---------------------------------------------------------------------------


def transitive_closure(dag: TemporalDag) -> TemporalDag:
    """Graph with an edge for every non-trivial directed path of ``dag``.

    Idempotent and a superset of the input edge set. Cyclic inputs are
    rejected at :class:`TemporalDag` construction time.
    """
    succ, _ = _adjacency(dag)
    n = dag.n_nodes
    reach = np.zeros((n, n), dtype=bool)
    for child_list, row in zip(succ, reach):
        row[child_list] = True
    # propagate in reverse topological order so each row is final when used
    order = _one_topological_order(dag)
    for node in reversed(order):
        for child in succ[node]:
            reach[node] |= reach[child]
    edges = frozenset(
        (dag.node_at(i), dag.node_at(j)) for i, j in zip(*np.nonzero(reach))
    )
    return TemporalDag(dag.d, dag.tau_max, edges)


def _one_topological_order(dag: TemporalDag) -> List[int]:
    succ, indeg = _adjacency(dag)
    queue = sorted(i for i in range(dag.n_nodes) if indeg[i] == 0)
    out: List[int] = []
    while queue:
        node = queue.pop(0)
        out.append(node)
        for child in succ[node]:
            indeg[child] -= 1
            if indeg[child] == 0:
                queue.append(child)
    if len(out) != dag.n_nodes:
        raise CycleError("edge set contains a directed cycle")
    return out


@dataclass(frozen=True)
class OrderingEnumeration:
    orderings: tuple
    overflow: bool

    def __len__(self) -> int:
        return len(self.orderings)

    def __iter__(self):
        return iter(self.orderings)


def enumerate_orderings(dag: TemporalDag, cap: int = 100_000) -> OrderingEnumeration:
    """All topological orderings of ``dag`` via backtracking Kahn search.

    Visits zero-in-degree candidates in flat-index order, so output is
    deterministic. If the count exceeds ``cap``, the first ``cap`` found are
    returned with ``overflow=True``; callers that need the complete set must
    treat overflow as a failure, never as a silent truncation.
    """
    if cap <= 0:
        raise ValueError(f"cap must be positive, got {cap}")
    succ, indeg = _adjacency(dag)
    n = dag.n_nodes
    results: List[Tuple[int, ...]] = []
    path: List[int] = []
    used = [False] * n
    # search for one ordering past the cap so a run that ends exactly at cap
    # is recognised as complete rather than truncated
    limit = cap + 1

    def backtrack() -> bool:
        if len(path) == n:
            results.append(tuple(path))
            return len(results) < limit
        for node in range(n):
            if used[node] or indeg[node] != 0:
                continue
            used[node] = True
            path.append(node)
            for child in succ[node]:
                indeg[child] -= 1
            keep_going = backtrack()
            for child in succ[node]:
                indeg[child] += 1
            path.pop()
            used[node] = False
            if not keep_going:
                return False
        return True

    backtrack()
    if not results:
        raise CycleError("edge set contains a directed cycle")
    overflow = len(results) > cap
    if overflow:
        results = results[:cap]
    orderings = tuple(Ordering(dag.node_at(i) for i in seq) for seq in results)
    return OrderingEnumeration(orderings, overflow)


def implied_edges(ordering: Ordering) -> frozenset:
    """Complete-DAG edge set of an ordering: every earlier node points to every later one."""
    seq = ordering.sequence
    return frozenset(
        (seq[i], seq[j]) for i in range(len(seq)) for j in range(i + 1, len(seq))
    )


def _positions_matrix(orderings: Sequence[Ordering]):
    """Stack position vectors over the shared node universe (sorted order)."""
    if not orderings:
        raise ValueError("need at least one ordering")
    nodes = sorted(orderings[0].node_set())
    universe = frozenset(nodes)
    pos = np.empty((len(orderings), len(nodes)), dtype=np.int64)
    for s, ordering in enumerate(orderings):
        if ordering.node_set() != universe:
            raise ValueError("orderings are over different node sets")
        for i, node in enumerate(nodes):
            pos[s, i] = ordering.position[node]
    return nodes, pos


def intersect_implied(orderings: Sequence[Ordering]) -> frozenset:
    """Edges (u, v) with u before v in *every* ordering.

    Equals the transitive closure edge set when given the complete set of
    topological orderings of a DAG.
    """
    nodes, pos = _positions_matrix(orderings)
    before = (pos[:, :, None] < pos[:, None, :]).all(axis=0)
    return frozenset((nodes[i], nodes[j]) for i, j in zip(*np.nonzero(before)))


def union_implied(orderings: Sequence[Ordering]) -> frozenset:
    """Edges (u, v) with u before v in *at least one* ordering."""
    nodes, pos = _positions_matrix(orderings)
    before = (pos[:, :, None] < pos[:, None, :]).any(axis=0)
    return frozenset((nodes[i], nodes[j]) for i, j in zip(*np.nonzero(before)))


def temporal_filter(edges: Iterable[Edge], strict: bool = False) -> frozenset:
    """Keep edges that respect temporal priority (cause not after effect).

    With ``strict=True`` contemporaneous links are dropped as well, matching
    data where every causal lag is known to be positive.
    """
    out = set()
    for edge in edges:
        src, dst = _as_edge(edge)
        if src.lag > dst.lag or (not strict and src.lag == dst.lag):
            out.add((src, dst))
    return frozenset(out)


def summary_edges(edges: Iterable[Edge]) -> frozenset:
    """Collapse window edges to (source_var, target_var) pairs."""
    return frozenset((src.var, dst.var) for src, dst in (_as_edge(e) for e in edges))


def summarize(dag: TemporalDag) -> SummaryAdjacency:
    """Summary graph of a window graph; a lagged self-link becomes a self-loop."""
    return SummaryAdjacency(dag.d, summary_edges(dag.edges))


def kendall_tau(a: Ordering, b: Ordering) -> float:
    """Normalised Kendall distance: fraction of discordant pairs in [0, 1]."""
    if a.node_set() != b.node_set():
        raise ValueError("orderings are over different node sets")
    n = len(a)
    if n < 2:
        return 0.0
    ranks = np.fromiter((b.position[node] for node in a.sequence), dtype=np.int64, count=n)
    discordant = int((ranks[:, None] > ranks[None, :])[np.triu_indices(n, k=1)].sum())
    return discordant / (n * (n - 1) / 2)


def random_dag(n_nodes: int, density: float, rng: np.random.Generator) -> TemporalDag:
    """Random DAG over ``n_nodes`` lag-0 nodes.

    A random permutation fixes an order; each forward pair becomes an edge
    independently with probability ``density``, so the result is acyclic by
    construction.
    """
    if not (0.0 <= density <= 1.0):
        raise ValueError(f"density must be in [0, 1], got {density}")
    order = rng.permutation(n_nodes)
    edges = set()
    for i in range(n_nodes):
        for j in range(i + 1, n_nodes):
            if rng.random() < density:
                edges.add((NodeId(int(order[i]), 0), NodeId(int(order[j]), 0)))
    return TemporalDag(n_nodes, 0, frozenset(edges))


# ---------------------------------------------------------------------------
# Edge-list / adjacency file formats
# ---------------------------------------------------------------------------


def sorted_edges(edges: Iterable[Edge]) -> List[Edge]:
    return sorted((_as_edge(e) for e in edges), key=lambda e: (e[0], e[1]))


def write_edge_list(path, edges: Iterable[Edge]) -> None:
    """One ``src_var,src_lag,dst_var,dst_lag`` line per edge, sorted."""
    lines = [
        f"{s.var},{s.lag},{t.var},{t.lag}" for s, t in sorted_edges(edges)
    ]
    Path(path).write_text("".join(line + "\n" for line in lines))


def read_edge_list(path) -> frozenset:
    edges = set()
    with open(path, newline="") as fh:
        for row in csv.reader(fh):
            if not row:
                continue
            sv, sl, tv, tl = (int(x) for x in row)
            edges.add((NodeId(sv, sl), NodeId(tv, tl)))
    return frozenset(edges)


def edges_to_adjacency(edges: Iterable[Edge], d: int, tau_max: int) -> np.ndarray:
    n = d * (tau_max + 1)
    adj = np.zeros((n, n), dtype=np.int64)
    for src, dst in (_as_edge(e) for e in edges):
        adj[src.var + d * src.lag, dst.var + d * dst.lag] = 1
    return adj


def adjacency_to_edges(adj: np.ndarray, d: int) -> frozenset:
    return frozenset(
        (NodeId(int(i % d), int(i // d)), NodeId(int(j % d), int(j // d)))
        for i, j in zip(*np.nonzero(adj))
    )


def write_adjacency_csv(path, edges: Iterable[Edge], d: int, tau_max: int) -> None:
    adj = edges_to_adjacency(edges, d, tau_max)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerows(adj.tolist())


def read_adjacency_csv(path, d: int) -> frozenset:
    with open(path, newline="") as fh:
        rows = [[int(x) for x in row] for row in csv.reader(fh) if row]
    return adjacency_to_edges(np.asarray(rows), d)
