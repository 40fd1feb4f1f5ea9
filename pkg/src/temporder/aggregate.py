"""Ordering aggregation: soft voting, temporal constraint and additive pruning.

The vote matrix counts, for every ordered node pair, the fraction of
orderings that place the source before the target. Thresholding it at
theta=1 is the hard intersection of the implied edge sets, theta=0 the
plain union; the default theta=0 keeps recall and leaves precision to the
pruning stage. Pruning fits, per child, an additive model with a cubic
spline basis per candidate parent and keeps an edge only when dropping the
parent's basis block significantly worsens the fit (nested-model F-test).
"""

from __future__ import annotations

import dataclasses
import time
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy import stats

from . import diffusion
from .graph import (
    NodeId,
    Ordering,
    SummaryAdjacency,
    TemporalDag,
    summarize,
    temporal_filter,
)
from .lagembed import LagMatrix, embed, standardize
from .ordering import (
    DEFAULT_HESSIAN_BATCH,
    ScaleSet,
    multi_scale_orderings,
    select_scales,
)


class PipelineStageError(RuntimeError):
    """Failure wrapped with the pipeline stage it happened in."""

    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"stage '{stage}' failed: {cause}")
        self.stage = stage


# ---------------------------------------------------------------------------
# Soft voting
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class VoteMatrix:
    """Edge-frequency matrix over the lag-embedded nodes (flat order)."""

    weights: np.ndarray
    n_orderings: int
    nodes: Tuple[NodeId, ...]

    def weight(self, src: NodeId, dst: NodeId) -> float:
        index = {node: i for i, node in enumerate(self.nodes)}
        return float(self.weights[index[src], index[dst]])


def vote(orderings: Sequence[Ordering]) -> VoteMatrix:
    """W[i, j] = fraction of orderings in which node i precedes node j."""
    if not orderings:
        raise ValueError("need at least one ordering")
    nodes = tuple(sorted(orderings[0].node_set()))
    universe = frozenset(nodes)
    pos = np.empty((len(orderings), len(nodes)), dtype=np.int64)
    for s, ordering in enumerate(orderings):
        if ordering.node_set() != universe:
            raise ValueError("orderings are over different node sets")
        for i, node in enumerate(nodes):
            pos[s, i] = ordering.position[node]
    counts = (pos[:, :, None] < pos[:, None, :]).sum(axis=0)
    return VoteMatrix(counts / len(orderings), len(orderings), nodes)


def threshold(votes: VoteMatrix, theta: float) -> frozenset:
    """Edges whose vote weight reaches theta.

    theta=1 keeps edges present in every ordering (hard intersection);
    theta=0 keeps edges present in at least one (plain union).
    """
    if not (0.0 <= theta <= 1.0):
        raise ValueError(f"theta must be in [0, 1], got {theta}")
    if theta == 0.0:
        mask = votes.weights > 0.0
    else:
        mask = votes.weights >= theta - 1e-12
    nodes = votes.nodes
    return frozenset((nodes[i], nodes[j]) for i, j in zip(*np.nonzero(mask)))


def constrain(edges, strict: bool = False, terminal_only: bool = True) -> frozenset:
    """Apply the temporal priority principle to an aggregated edge set.

    ``terminal_only`` additionally restricts to edges terminating at lag 0,
    the window-template form used for evaluation (stationarity makes the
    repeats at other slices implied).
    """
    filtered = temporal_filter(edges, strict=strict)
    if terminal_only:
        filtered = frozenset(e for e in filtered if e[1].lag == 0)
    return filtered


# ---------------------------------------------------------------------------
# Additive-model pruning
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PruneConfig:
    """Significance pruning knobs.

    ``basis_size`` counts spline functions per parent: u, u^2, u^3 plus
    (basis_size - 3) truncated cubes with knots at empirical quantiles.
    """

    alpha: float = 0.05
    basis_size: int = 13
    max_parents: int = 20

    def __post_init__(self):
        if not (0 < self.alpha < 1):
            raise ValueError(f"alpha must be in (0, 1), got {self.alpha}")
        if self.basis_size < 1:
            raise ValueError(f"basis_size must be >= 1, got {self.basis_size}")
        if self.max_parents < 1:
            raise ValueError(f"max_parents must be >= 1, got {self.max_parents}")


def _spline_basis(u: np.ndarray, n_funcs: int) -> np.ndarray:
    """Truncated-power cubic basis of a single column, standardized."""
    cols = [u, u**2, u**3][: max(1, min(3, n_funcs))]
    n_knots = n_funcs - 3
    if n_knots > 0:
        quantiles = [(i + 1) / (n_knots + 1) for i in range(n_knots)]
        for knot in np.quantile(u, quantiles):
            cols.append(np.clip(u - knot, 0.0, None) ** 3)
    basis = np.stack(cols, axis=1)
    mean = basis.mean(axis=0)
    std = basis.std(axis=0)
    keep = std > 1e-10
    if not np.any(keep):
        raise ValueError("parent column has no spread; cannot build spline basis")
    return (basis[:, keep] - mean[keep]) / std[keep]


def _gram_rss(gram, xty, yty, idx):
    """RSS and rank of the least squares fit restricted to columns ``idx``."""
    beta, _, rank, _ = np.linalg.lstsq(gram[np.ix_(idx, idx)], xty[idx], rcond=None)
    rss = max(float(yty - xty[idx] @ beta), 0.0)
    return rss, int(rank)


def prune(
    edges,
    matrix: LagMatrix,
    cfg: PruneConfig = PruneConfig(),
    votes: Optional[VoteMatrix] = None,
) -> frozenset:
    """Drop candidate parents whose basis block does not improve the fit.

    For each child, the full additive model over all candidate parents is
    compared against the model without one parent's block; the edge is kept
    iff the nested-model F-test is significant at ``cfg.alpha``.
    Rank-deficient blocks contribute no testable directions and are
    dropped. Candidate sets larger than ``max_parents`` are truncated,
    keeping the highest vote weights first. Deterministic: no randomness is
    involved. The result is always a subset of the input.
    """
    edges = frozenset((NodeId(*s), NodeId(*t)) for s, t in edges)
    children = sorted({dst for _, dst in edges})
    kept = set()
    data = matrix.data
    n_rows = data.shape[0]
    for child in children:
        parents = sorted({src for src, dst in edges if dst == child})
        if len(parents) > cfg.max_parents:
            if votes is not None:
                parents.sort(key=lambda p: (-votes.weight(p, child), p))
            parents = sorted(parents[: cfg.max_parents])
        y = data[:, matrix.column_of(child)]
        blocks: List[np.ndarray] = []
        spans: List[Tuple[int, int]] = []
        offset = 1  # intercept column first
        for parent in parents:
            basis = _spline_basis(data[:, matrix.column_of(parent)], cfg.basis_size)
            blocks.append(basis)
            spans.append((offset, offset + basis.shape[1]))
            offset += basis.shape[1]
        design = np.concatenate([np.ones((n_rows, 1))] + blocks, axis=1)
        gram = design.T @ design
        xty = design.T @ y
        yty = float(y @ y)
        all_idx = np.arange(design.shape[1])
        rss_full, rank_full = _gram_rss(gram, xty, yty, all_idx)
        dof = n_rows - rank_full
        if dof <= 0:
            continue  # not enough rows to test anything for this child
        scale = rss_full / dof
        for parent, (lo, hi) in zip(parents, spans):
            reduced = np.concatenate([all_idx[:lo], all_idx[hi:]])
            rss_red, rank_red = _gram_rss(gram, xty, yty, reduced)
            q = rank_full - rank_red
            if q <= 0:
                continue
            if scale <= 1e-12 * max(yty, 1.0):
                significant = (rss_red - rss_full) > 1e-9 * max(yty, 1.0)
            else:
                f_stat = (rss_red - rss_full) / q / scale
                significant = stats.f.sf(f_stat, q, dof) < cfg.alpha
            if significant:
                kept.add((parent, child))
    return frozenset(kept)


# ---------------------------------------------------------------------------
# End-to-end pipeline
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PipelineConfig:
    """Configuration of the full discovery pipeline for one dataset."""

    tau_max: int
    k_max: int = 100
    n_orderings: int = 10
    low_fraction: float = 0.5
    theta: float = 0.0
    strict: bool = False
    standardize_input: bool = True
    hessian_batch: int = DEFAULT_HESSIAN_BATCH
    perturb_inputs: bool = True
    seed: int = 0
    train: diffusion.TrainConfig = field(default_factory=diffusion.TrainConfig)
    prune: PruneConfig = field(default_factory=PruneConfig)

    def __post_init__(self):
        if self.tau_max < 0:
            raise ValueError(f"tau_max must be >= 0, got {self.tau_max}")
        if not (0.0 <= self.theta <= 1.0):
            raise ValueError(f"theta must be in [0, 1], got {self.theta}")

    def train_config(self) -> diffusion.TrainConfig:
        return dataclasses.replace(self.train, k_max=self.k_max, seed=self.seed)


@dataclass(frozen=True, eq=False)
class DiscoveryResult:
    window: TemporalDag
    summary: SummaryAdjacency
    diagnostics: dict


def discover(series: np.ndarray, cfg: PipelineConfig) -> DiscoveryResult:
    """Series in, temporal window graph and summary graph out.

    Stages: lag-embed, standardize, train denoiser, extract one ordering
    per noise scale, soft-vote, threshold, apply the temporal constraint,
    prune, summarize. Deterministic given (series, cfg).
    """
    series = np.asarray(series, dtype=np.float64)
    if series.ndim != 2:
        raise ValueError(f"series must be 2-D (T x d), got shape {series.shape}")
    d = series.shape[1]
    timings: Dict[str, float] = {}
    diagnostics: dict = {"config": _config_dict(cfg)}

    def run_stage(stage, fn, *args, **kwargs):
        start = time.perf_counter()
        try:
            result = fn(*args, **kwargs)
        except Exception as exc:
            raise PipelineStageError(stage, exc) from exc
        timings[stage] = time.perf_counter() - start
        return result

    matrix = run_stage("embed", embed, series, cfg.tau_max)
    if cfg.standardize_input:
        matrix, _ = run_stage("standardize", standardize, matrix)
    net = run_stage("train", diffusion.train, matrix, cfg.train_config())
    scales = select_scales(cfg.k_max, cfg.n_orderings, cfg.low_fraction)
    orderings = run_stage(
        "orderings",
        multi_scale_orderings,
        net,
        matrix,
        scales,
        batch_size=cfg.hessian_batch,
        seed=cfg.seed,
        perturb_inputs=cfg.perturb_inputs,
    )
    votes = run_stage("vote", vote, orderings)
    candidates = run_stage("threshold", threshold, votes, cfg.theta)
    constrained = run_stage("constrain", constrain, candidates, cfg.strict)
    pruned = run_stage("prune", prune, constrained, matrix, cfg.prune, votes)
    window = TemporalDag(d, cfg.tau_max, pruned)
    summary = summarize(window)

    diagnostics["scales"] = list(scales)
    diagnostics["orderings"] = [[[n.var, n.lag] for n in o.sequence] for o in orderings]
    diagnostics["vote_matrix"] = votes.weights.tolist()
    diagnostics["n_candidates"] = len(candidates)
    diagnostics["n_constrained"] = len(constrained)
    diagnostics["n_edges"] = len(pruned)
    diagnostics["timings"] = timings
    return DiscoveryResult(window, summary, diagnostics)


def _config_dict(cfg: PipelineConfig) -> dict:
    out = dataclasses.asdict(cfg)
    return out
