"""Causal ordering extraction: one ordering per diffusion noise scale.

At a given scale k the node whose Hessian-diagonal variance is smallest is
treated as a leaf, removed by masking (the trained network is never
retrained or mutated), and prepended to the ordering; iterating until no
node is left yields a full permutation. Running this at several scales
produces the diverse ordering set consumed by the aggregation stage.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np

from . import diffusion
from .graph import NodeId, Ordering
from .lagembed import LagMatrix

LEAF_TIE_RTOL = 1e-9
DEFAULT_HESSIAN_BATCH = 512


@dataclass(frozen=True)
class ScaleSet:
    """Distinct diffusion steps at which orderings are extracted."""

    scales: Tuple[int, ...]

    def __post_init__(self):
        scales = tuple(int(k) for k in self.scales)
        object.__setattr__(self, "scales", scales)
        if not scales:
            raise ValueError("scale set must be non-empty")
        if sorted(set(scales)) != list(scales):
            raise ValueError(f"scales must be sorted and distinct, got {scales}")
        if scales[0] < 0:
            raise ValueError(f"scales must be >= 0, got {scales}")

    @property
    def count(self) -> int:
        return len(self.scales)

    def __iter__(self):
        return iter(self.scales)

    def __len__(self) -> int:
        return len(self.scales)


def select_scales(k_max: int, n_scales: int, low_fraction: float = 0.5) -> ScaleSet:
    """Evenly spaced scales in the informative low range [1, low_fraction * k_max]."""
    if not (1 <= n_scales <= k_max):
        raise ValueError(f"need 1 <= n_scales <= k_max, got {n_scales}, {k_max}")
    if not (0 < low_fraction <= 1):
        raise ValueError(f"low_fraction must be in (0, 1], got {low_fraction}")
    hi = max(1, math.ceil(low_fraction * k_max))
    if n_scales == 1:
        return ScaleSet((round((1 + hi) / 2),))
    hi = max(hi, n_scales)  # keep n_scales distinct integers representable
    values = np.round(np.linspace(1, hi, n_scales)).astype(int)
    return ScaleSet(tuple(int(v) for v in values))


def _pick_leaf(active: Sequence[int], variances: np.ndarray) -> int:
    """Smallest-variance active column; near-ties go to the smaller flat index."""
    v_min = float(variances.min())
    threshold = v_min + abs(v_min) * LEAF_TIE_RTOL
    candidates = [col for col, v in zip(active, variances) if v <= threshold]
    return min(candidates)


def order_at_scale(
    net: diffusion.ScoreNet,
    matrix: LagMatrix,
    k: int,
    *,
    schedule: Optional[diffusion.NoiseSchedule] = None,
    batch_size: int = DEFAULT_HESSIAN_BATCH,
    seed: int = 0,
    perturb_inputs: bool = True,
) -> Ordering:
    """Extract one causal ordering at noise scale ``k`` by iterative leaf removal.

    Each iteration subsamples ``batch_size`` rows, perturbs them to scale k
    with noise seeded by (seed, k, iteration), and removes the
    argmin-variance node; a node removed at iteration i lands at position
    n - 1 - i of the returned permutation, so earlier-removed nodes appear
    later in the causal order.
    """
    if matrix.n_columns != net.n_inputs:
        raise ValueError(
            f"matrix has {matrix.n_columns} columns but the network expects {net.n_inputs}"
        )
    schedule = schedule or diffusion.make_schedule(net.k_max)
    rows = matrix.data
    active = list(range(matrix.n_columns))
    removed: List[int] = []
    iteration = 0
    while active:
        rng = np.random.default_rng(np.random.SeedSequence((seed, k, iteration)))
        take = min(batch_size, rows.shape[0])
        batch = rows[rng.choice(rows.shape[0], size=take, replace=False)]
        variances = diffusion.hessian_diag_variance(
            net, batch, k, active, schedule, rng=rng, perturb_inputs=perturb_inputs
        )
        leaf = _pick_leaf(active, variances)
        removed.append(leaf)
        active.remove(leaf)
        iteration += 1
    return Ordering(matrix.node_of(col) for col in reversed(removed))


def multi_scale_orderings(
    net: diffusion.ScoreNet,
    matrix: LagMatrix,
    scales: Union[ScaleSet, Sequence[int]],
    *,
    schedule: Optional[diffusion.NoiseSchedule] = None,
    batch_size: int = DEFAULT_HESSIAN_BATCH,
    seed: int = 0,
    perturb_inputs: bool = True,
) -> List[Ordering]:
    """One ordering per scale, with independent masking state per scale.

    Noise draws are seeded per (seed, k, iteration), so the ordering
    obtained at a scale does not depend on which other scales are requested.
    """
    schedule = schedule or diffusion.make_schedule(net.k_max)
    return [
        order_at_scale(
            net,
            matrix,
            k,
            schedule=schedule,
            batch_size=batch_size,
            seed=seed,
            perturb_inputs=perturb_inputs,
        )
        for k in scales
    ]


# ---------------------------------------------------------------------------
# JSON serialization of ordering runs
# ---------------------------------------------------------------------------


def write_orderings(path, orderings: Sequence[Ordering], scales: Sequence[int]) -> None:
    if len(orderings) != len(scales):
        raise ValueError("need one scale annotation per ordering")
    payload = {
        "format_version": 1,
        "scales": [int(k) for k in scales],
        "orderings": [[[n.var, n.lag] for n in o.sequence] for o in orderings],
    }
    Path(path).write_text(json.dumps(payload, indent=2) + "\n")


def read_orderings(path) -> Tuple[List[Ordering], List[int]]:
    payload = json.loads(Path(path).read_text())
    orderings = [
        Ordering(NodeId(int(v), int(g)) for v, g in seq) for seq in payload["orderings"]
    ]
    return orderings, [int(k) for k in payload["scales"]]
