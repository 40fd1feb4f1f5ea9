"""Lag-embedded design matrices feeding the score network.

Row r of the embedding holds [x^t, x^{t-1}, ..., x^{t-tau_max}] for
t = tau_max + r, i.e. lag-major column blocks with variables in index order
inside each block. Column ``var + d * lag`` therefore carries the value of
variable ``var`` at lag ``lag``, matching the flat node indexing of
:mod:`temporder.graph`.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Dict, List, Sequence, Tuple

import numpy as np
import pandas as pd

from .graph import NodeId, node_universe


@dataclass(frozen=True, eq=False)
class LagMatrix:
    data: np.ndarray
    d: int
    tau_max: int

    def __post_init__(self):
        expected = self.d * (self.tau_max + 1)
        if self.data.ndim != 2 or self.data.shape[1] != expected:
            raise ValueError(
                f"data must have {expected} columns for d={self.d}, tau_max={self.tau_max}, "
                f"got shape {self.data.shape}"
            )

    @property
    def n_rows(self) -> int:
        return self.data.shape[0]

    @property
    def n_columns(self) -> int:
        return self.data.shape[1]

    @property
    def column_map(self) -> Dict[int, NodeId]:
        return {i: node for i, node in enumerate(node_universe(self.d, self.tau_max))}

    def column_of(self, node: NodeId) -> int:
        return node.var + self.d * node.lag

    def node_of(self, column: int) -> NodeId:
        return NodeId(column % self.d, column // self.d)


def embed(series: np.ndarray, tau_max: int) -> LagMatrix:
    """Lag-embed a T x d series into a (T - tau_max) x d(tau_max + 1) matrix."""
    series = np.asarray(series, dtype=np.float64)
    if series.ndim != 2:
        raise ValueError(f"series must be 2-D (T x d), got shape {series.shape}")
    if not np.all(np.isfinite(series)):
        raise ValueError("series contains non-finite values")
    T, _ = series.shape
    if tau_max < 0:
        raise ValueError(f"tau_max must be >= 0, got {tau_max}")
    if T <= tau_max:
        raise ValueError(f"need T > tau_max, got T={T}, tau_max={tau_max}")
    blocks = [series[tau_max - lag : T - lag] for lag in range(tau_max + 1)]
    return LagMatrix(np.concatenate(blocks, axis=1), series.shape[1], tau_max)


def stack_trajectories(trajectories: Sequence[np.ndarray], tau_max: int) -> LagMatrix:
    """Embed each trajectory independently and stack the rows.

    Because every trajectory is embedded on its own, no output row mixes
    values from two trajectories; this replaces zero-separator stacking
    without injecting artificial rows. Trajectories too short to embed are
    skipped with a warning.
    """
    if not trajectories:
        raise ValueError("need at least one trajectory")
    parts: List[np.ndarray] = []
    d = np.asarray(trajectories[0]).shape[1]
    for idx, traj in enumerate(trajectories):
        traj = np.asarray(traj, dtype=np.float64)
        if traj.shape[1] != d:
            raise ValueError(
                f"trajectory {idx} has {traj.shape[1]} variables, expected {d}"
            )
        if traj.shape[0] <= tau_max:
            warnings.warn(
                f"trajectory {idx} has length {traj.shape[0]} <= tau_max={tau_max}; skipped"
            )
            continue
        parts.append(embed(traj, tau_max).data)
    if not parts:
        raise ValueError("no trajectory is long enough to embed")
    return LagMatrix(np.concatenate(parts, axis=0), d, tau_max)


@dataclass(frozen=True, eq=False)
class ColumnStats:
    mean: np.ndarray
    std: np.ndarray


def standardize(matrix: LagMatrix) -> Tuple[LagMatrix, ColumnStats]:
    """Zero-mean unit-variance columns; rejects constant columns by node id."""
    mean = matrix.data.mean(axis=0)
    std = matrix.data.std(axis=0)
    flat = np.where(std < 1e-12)[0]
    if flat.size:
        nodes = [matrix.node_of(int(c)) for c in flat]
        raise ValueError(f"constant column(s) cannot be standardized: {nodes}")
    data = (matrix.data - mean) / std
    return LagMatrix(data, matrix.d, matrix.tau_max), ColumnStats(mean, std)


def read_series_csv(path, trajectory_column: str | None = None):
    """Load a headered series CSV.

    Returns a single T x d array, or a list of per-trajectory arrays when
    ``trajectory_column`` names the column delimiting stacked samples.
    """
    frame = pd.read_csv(path)
    if trajectory_column is None:
        return frame.to_numpy(dtype=np.float64)
    if trajectory_column not in frame.columns:
        raise ValueError(f"column {trajectory_column!r} not found in {path}")
    value_cols = [c for c in frame.columns if c != trajectory_column]
    out = []
    for _, group in frame.groupby(trajectory_column, sort=False):
        out.append(group[value_cols].to_numpy(dtype=np.float64))
    return out
