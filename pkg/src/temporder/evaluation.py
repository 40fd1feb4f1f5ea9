"""Structure metrics and the multi-ordering recovery study.

Window metrics compare only edges terminating at lag 0 (stationarity makes
every other slice a repeat); summary metrics compare the per-variable
collapse, self-loops included. The ordering study measures how many
topological orderings must be intersected before the transitive closure of
a random temporal DAG is recovered, with and without the temporal
constraint.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np

from .aggregate import PruneConfig, constrain, prune
from .graph import (
    NodeId,
    Ordering,
    SummaryAdjacency,
    TemporalDag,
    enumerate_orderings,
    implied_edges,
    kendall_tau,
    summarize,
    transitive_closure,
)
from .lagembed import LagMatrix


@dataclass(frozen=True)
class Confusion:
    tp: int
    fp: int
    fn: int

    def __post_init__(self):
        if min(self.tp, self.fp, self.fn) < 0:
            raise ValueError("confusion counts must be nonnegative")


def confusion(pred: Iterable, truth: Iterable) -> Confusion:
    pred, truth = set(pred), set(truth)
    return Confusion(len(pred & truth), len(pred - truth), len(truth - pred))


def prf1(c: Confusion) -> Tuple[float, float, float]:
    """Precision, recall, F1 with zero conventions for empty denominators."""
    precision = c.tp / (c.tp + c.fp) if c.tp + c.fp else 0.0
    recall = c.tp / (c.tp + c.fn) if c.tp + c.fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return precision, recall, f1


EdgesLike = Union[TemporalDag, Iterable]


def _edges(x: EdgesLike) -> frozenset:
    if isinstance(x, TemporalDag):
        return x.edges
    return frozenset((NodeId(*s), NodeId(*t)) for s, t in x)


def window_edges(x: EdgesLike) -> frozenset:
    return frozenset(e for e in _edges(x) if e[1].lag == 0)


def window_confusion(pred: EdgesLike, truth: EdgesLike) -> Confusion:
    return confusion(window_edges(pred), window_edges(truth))


def window_f1(pred: EdgesLike, truth: EdgesLike) -> float:
    return prf1(window_confusion(pred, truth))[2]


def summary_confusion(pred: TemporalDag, truth: TemporalDag) -> Confusion:
    return confusion(summarize(pred).edges, summarize(truth).edges)


def summary_f1(pred: TemporalDag, truth: TemporalDag) -> float:
    return prf1(summary_confusion(pred, truth))[2]


def summary_of(x: Union[TemporalDag, SummaryAdjacency]) -> SummaryAdjacency:
    return x if isinstance(x, SummaryAdjacency) else summarize(x)


# ---------------------------------------------------------------------------
# Multi-ordering recovery study
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class StudyCurve:
    """Mean F1 against the transitive closure per ordering fraction."""

    fractions: Tuple[float, ...]
    f1_mean: np.ndarray
    f1_ci: np.ndarray
    constrained: bool
    n_repetitions: int
    n_skipped: int
    samples: np.ndarray  # (repetitions, fractions) raw scores


def _random_temporal_structure(d: int, tau: int, density: float, rng: np.random.Generator) -> TemporalDag:
    """Bernoulli link template (the generator's structure model), never empty.

    Empty graphs carry no recoverable structure (the F1 convention maps the
    all-empty comparison to 0), so they are resampled.
    """
    for _ in range(1000):
        edges = set()
        for i in range(d):
            for j in range(d):
                if rng.random() < density:
                    edges.add((NodeId(i, tau), NodeId(j, 0)))
        if edges:
            return TemporalDag(d, tau, frozenset(edges))
    raise ValueError(f"could not sample a non-empty structure at density {density}")


def ordering_study(
    d: int = 3,
    tau: int = 1,
    density: float = 0.3,
    fractions: Sequence[float] = (10, 20, 30, 40, 50, 60, 70, 80, 90, 100),
    repetitions: int = 50,
    constrained: bool = False,
    seed: int = 0,
    cap: int = 100_000,
) -> StudyCurve:
    """F1 of the intersected-orderings edge set against the true closure.

    Per repetition: sample a random temporal DAG, enumerate all M
    orderings, shuffle them once, and for each fraction intersect the first
    m = fraction * M of the shuffle (a uniform without-replacement sample;
    nested prefixes make every repetition's curve monotone). With
    ``constrained=True`` the intersection is additionally restricted to
    temporally valid edges. Repetitions whose enumeration overflows ``cap``
    are skipped and counted.
    """
    fractions = tuple(float(f) for f in fractions)
    if not fractions or not all(0 < f <= 100 for f in fractions):
        raise ValueError(f"fractions must lie in (0, 100], got {fractions}")
    rows: List[List[float]] = []
    skipped = 0
    for rep in range(repetitions):
        rng = np.random.default_rng(np.random.SeedSequence((seed, rep)))
        dag = _random_temporal_structure(d, tau, density, rng).unrolled()
        enumeration = enumerate_orderings(dag, cap=cap)
        if enumeration.overflow:
            skipped += 1
            continue
        orderings = enumeration.orderings
        n = dag.n_nodes
        nodes = sorted(orderings[0].node_set())
        truth = np.zeros((n, n), dtype=bool)
        index = {node: i for i, node in enumerate(nodes)}
        for src, dst in transitive_closure(dag).edges:
            truth[index[src], index[dst]] = True
        valid = np.array(
            [[s.lag >= t.lag for t in nodes] for s in nodes], dtype=bool
        )
        pos = np.empty((len(orderings), n), dtype=np.int64)
        for s, ordering in enumerate(orderings):
            for i, node in enumerate(nodes):
                pos[s, i] = ordering.position[node]
        shuffle = rng.permutation(len(orderings))
        targets = [max(1, round(f / 100 * len(orderings))) for f in fractions]
        consensus = np.ones((n, n), dtype=bool)
        np.fill_diagonal(consensus, False)
        taken = 0
        scores = []
        for m in sorted(set(targets)):
            for s in shuffle[taken:m]:
                consensus &= pos[s][:, None] < pos[s][None, :]
            taken = m
            pred = consensus & valid if constrained else consensus
            tp = int((pred & truth).sum())
            fp = int((pred & ~truth).sum())
            fn = int((~pred & truth).sum())
            scores.append((m, prf1(Confusion(tp, fp, fn))[2]))
        by_m = dict(scores)
        rows.append([by_m[m] for m in targets])
    if not rows:
        raise ValueError("every repetition overflowed the enumeration cap")
    samples = np.asarray(rows)
    mean = samples.mean(axis=0)
    if samples.shape[0] > 1:
        ci = 1.96 * samples.std(axis=0, ddof=1) / np.sqrt(samples.shape[0])
    else:
        ci = np.zeros_like(mean)
    return StudyCurve(fractions, mean, ci, constrained, samples.shape[0], skipped, samples)


# ---------------------------------------------------------------------------
# Ordering diversity
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class DiversityReport:
    scales: Tuple[int, ...]
    kendall: np.ndarray
    per_scale_f1: Optional[List[float]]


def diversity_report(
    orderings: Sequence[Ordering],
    scales: Sequence[int],
    *,
    matrix: Optional[LagMatrix] = None,
    truth: Optional[TemporalDag] = None,
    prune_cfg: PruneConfig = PruneConfig(),
    strict: bool = False,
) -> DiversityReport:
    """Pairwise Kendall distances; optionally each ordering's solo window F1.

    The solo scores run each single ordering through the temporal
    constraint and pruning, measuring what a one-ordering pipeline at that
    scale would have achieved.
    """
    if len(orderings) != len(scales):
        raise ValueError("need one scale per ordering")
    n = len(orderings)
    kendall = np.zeros((n, n))
    for i in range(n):
        for j in range(i + 1, n):
            kendall[i, j] = kendall[j, i] = kendall_tau(orderings[i], orderings[j])
    per_scale = None
    if truth is not None and matrix is not None:
        per_scale = []
        for ordering in orderings:
            candidate = constrain(implied_edges(ordering), strict=strict)
            pruned = prune(candidate, matrix, prune_cfg)
            per_scale.append(window_f1(pruned, truth))
    return DiversityReport(tuple(int(k) for k in scales), kendall, per_scale)
