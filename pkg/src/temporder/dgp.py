"""Synthetic data generator: stationary nonlinear lagged SCMs with ground truth.

Every causal link has the same positive lag within one dataset (no
contemporaneous links), autoregressive self-links are allowed, and each
variable gets x_j(t) = sum of nonlinear parent contributions + Gaussian
noise. Mechanism parameters and noise variances are drawn exactly once per
dataset, so the process is stationary by construction.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Optional, Tuple

import numpy as np

from .graph import Edge, NodeId, TemporalDag, write_edge_list

MECHANISMS = ("piecewise-linear", "trigonometric")

DIVERGENCE_LIMIT = 1e6
MAX_RETRIES = 10


class SimulationError(RuntimeError):
    """Simulation diverged after exhausting the retry budget."""


@dataclass(frozen=True)
class DgpConfig:
    """Knobs of the synthetic process.

    ``edge_density`` defaults to an expected parent count of about 1.5 per
    variable. ``noise_var_range`` is read as a range of *variances* (the
    std-range reading would make the noise smaller still).
    """

    T: int
    d: int
    tau: int = 1
    mechanism: str = "trigonometric"
    noise_var_range: Tuple[float, float] = (0.01, 0.05)
    edge_density: Optional[float] = None
    seed: int = 0

    def __post_init__(self):
        if self.d < 2:
            raise ValueError(f"d must be >= 2, got {self.d}")
        if self.tau < 1:
            raise ValueError(f"tau must be >= 1, got {self.tau}")
        if self.T <= self.tau:
            raise ValueError(f"T must exceed tau, got T={self.T}, tau={self.tau}")
        lo, hi = self.noise_var_range
        if not (0 < lo <= hi):
            raise ValueError(f"noise_var_range must be within (0, inf), got {self.noise_var_range}")
        if self.mechanism not in MECHANISMS:
            raise ValueError(f"mechanism must be one of {MECHANISMS}, got {self.mechanism!r}")
        if self.edge_density is not None and not (0 < self.edge_density <= 1):
            raise ValueError(f"edge_density must be in (0, 1], got {self.edge_density}")

    @property
    def density(self) -> float:
        if self.edge_density is not None:
            return self.edge_density
        return min(1.0, 1.5 / self.d)


@dataclass(frozen=True, eq=False)
class GroundTruthInstance:
    series: np.ndarray
    dag: TemporalDag
    config: DgpConfig
    mechanisms: Optional[Dict[Edge, "Mechanism"]] = None


@dataclass(frozen=True)
class Mechanism:
    """One parent-to-child link function with frozen parameters."""

    kind: str
    params: Tuple[float, ...]

    def __call__(self, x):
        if self.kind == "piecewise-linear":
            a, b = self.params
            return np.where(x < 0, a * x, b * x)
        c, w, phi = self.params
        return c * np.sin(w * x + phi)


def draw_mechanism(kind: str, rng: np.random.Generator) -> Mechanism:
    if kind == "piecewise-linear":
        a = rng.uniform(0.5, 1.5) * rng.choice((-1.0, 1.0))
        b = rng.uniform(0.5, 1.5) * rng.choice((-1.0, 1.0))
        return Mechanism(kind, (float(a), float(b)))
    if kind == "trigonometric":
        c = rng.uniform(0.8, 1.5)
        w = rng.uniform(0.5, 2.0)
        phi = rng.uniform(0.0, 2.0 * np.pi)
        return Mechanism(kind, (float(c), float(w), float(phi)))
    raise ValueError(f"unknown mechanism kind {kind!r}")


def sample_structure(config: DgpConfig) -> TemporalDag:
    """Random link template: each X_i(t - tau) -> X_j(t) kept with the edge density.

    All links are strictly lagged with the configured uniform lag, so the
    result is acyclic by construction; i == j gives autoregressive links.
    """
    rng = np.random.default_rng(np.random.SeedSequence((config.seed, 0)))
    edges = set()
    for i in range(config.d):
        for j in range(config.d):
            if rng.random() < config.density:
                edges.add((NodeId(i, config.tau), NodeId(j, 0)))
    return TemporalDag(config.d, config.tau, frozenset(edges))


def simulate(dag: TemporalDag, config: DgpConfig) -> GroundTruthInstance:
    """Generate a series from a strictly lagged link template.

    Noise variances and mechanism parameters are drawn once (stationarity);
    a burn-in of max(10 * tau, 50) steps is discarded. If any value exceeds
    the divergence limit, mechanism parameters are redrawn, up to
    ``MAX_RETRIES`` times.
    """
    parents: Dict[int, list] = {j: [] for j in range(config.d)}
    max_lag = 1
    for src, dst in dag.edges:
        if dst.lag != 0 or src.lag < 1:
            raise ValueError(
                f"simulate needs a strictly lagged template terminating at lag 0, got {src} -> {dst}"
            )
        parents[dst.var].append((src.var, src.lag))
        max_lag = max(max_lag, src.lag)
    for plist in parents.values():
        plist.sort()

    rng = np.random.default_rng(np.random.SeedSequence((config.seed, 1)))
    lo, hi = config.noise_var_range
    sigma2 = rng.uniform(lo, hi, size=config.d)
    burn = max(10 * max_lag, 50)
    total = config.T + burn
    noise = rng.normal(0.0, np.sqrt(sigma2), size=(total, config.d))

    for _ in range(MAX_RETRIES + 1):
        mechanisms = {
            edge: draw_mechanism(config.mechanism, rng)
            for edge in sorted(dag.edges, key=lambda e: (e[0], e[1]))
        }
        series = _run_recursion(parents, mechanisms, noise, max_lag, config.d)
        if series is not None:
            return GroundTruthInstance(series[burn:], dag, config, mechanisms)
    raise SimulationError(
        f"simulation diverged after {MAX_RETRIES} mechanism redraws (seed={config.seed})"
    )


def _run_recursion(parents, mechanisms, noise, max_lag, d):
    total = noise.shape[0]
    x = np.empty_like(noise)
    x[:max_lag] = noise[:max_lag]
    for t in range(max_lag, total):
        row = noise[t].copy()
        for j in range(d):
            for i, lag in parents[j]:
                g = mechanisms[(NodeId(i, lag), NodeId(j, 0))]
                row[j] += g(x[t - lag, i])
        if not np.all(np.abs(row) < DIVERGENCE_LIMIT):
            return None
        x[t] = row
    return x


def generate(config: DgpConfig) -> GroundTruthInstance:
    """Sample a structure and simulate it in one call."""
    return simulate(sample_structure(config), config)


# ---------------------------------------------------------------------------
# On-disk format: series CSV + truth edge list + manifest
# ---------------------------------------------------------------------------

SERIES_FILE = "series.csv"
TRUTH_FILE = "truth.edges"
MANIFEST_FILE = "manifest.json"


def write_instance(instance: GroundTruthInstance, outdir, force: bool = False) -> Path:
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    series_path = outdir / SERIES_FILE
    if series_path.exists() and not force:
        raise FileExistsError(f"{series_path} exists; pass force=True to overwrite")
    cfg = instance.config
    header = ",".join(f"x{i}" for i in range(cfg.d))
    np.savetxt(series_path, instance.series, delimiter=",", header=header, comments="", fmt="%.17g")
    write_edge_list(outdir / TRUTH_FILE, instance.dag.edges)
    manifest = {
        "config": dataclasses.asdict(cfg),
        "n_edges": len(instance.dag.edges),
        "format_version": 1,
    }
    (outdir / MANIFEST_FILE).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return outdir
