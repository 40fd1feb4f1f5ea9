"""Denoising score network: schedule, training loop and exact input Jacobians.

The network predicts the injected noise (epsilon-prediction); the score is
-eps_hat / sqrt(1 - alpha_bar_k), a per-step scalar away, so the variance
ranking used for leaf detection is computed on the raw eps_hat Jacobian.
Everything is float64 numpy with hand-written backprop: two runs with the
same seed produce bitwise-identical networks, and the input Jacobian is the
exact derivative of the forward pass (checked against finite differences in
the tests).
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np


class TrainingError(RuntimeError):
    """Raised when the training loss stops being finite."""


# ---------------------------------------------------------------------------
# Noise schedule and forward perturbation
# ---------------------------------------------------------------------------

BETA_START = 1e-4
BETA_END = 0.02


@dataclass(frozen=True, eq=False)
class NoiseSchedule:
    """Per-step variances and cumulative variance-preserving coefficients.

    ``alpha_bar[k]`` is the product of (1 - beta_i) up to step k, with
    ``alpha_bar[0] = 1`` (no perturbation).
    """

    betas: np.ndarray
    alpha_bar: np.ndarray

    @property
    def k_max(self) -> int:
        return len(self.betas)


def make_schedule(k_max: int = 100) -> NoiseSchedule:
    if k_max < 1:
        raise ValueError(f"k_max must be >= 1, got {k_max}")
    betas = np.linspace(BETA_START, BETA_END, k_max)
    alpha_bar = np.concatenate(([1.0], np.cumprod(1.0 - betas)))
    return NoiseSchedule(betas, alpha_bar)


def perturb(x: np.ndarray, k: int, noise: np.ndarray, schedule: NoiseSchedule) -> np.ndarray:
    """x_k = sqrt(alpha_bar_k) * x + sqrt(1 - alpha_bar_k) * noise."""
    if not (0 <= k <= schedule.k_max):
        raise ValueError(f"k must be in [0, {schedule.k_max}], got {k}")
    ab = schedule.alpha_bar[k]
    return np.sqrt(ab) * x + np.sqrt(1.0 - ab) * noise


def _perturb_rows(x: np.ndarray, ks: np.ndarray, noise: np.ndarray, schedule: NoiseSchedule) -> np.ndarray:
    """Row-wise perturbation with a per-row step index."""
    ab = schedule.alpha_bar[ks][:, None]
    return np.sqrt(ab) * x + np.sqrt(1.0 - ab) * noise


# ---------------------------------------------------------------------------
# Network
# ---------------------------------------------------------------------------

_N_TIME_FREQS = 4
TIME_FEATURES = 1 + 2 * _N_TIME_FREQS


def _time_features(ks: np.ndarray, k_max: int) -> np.ndarray:
    """Linear + sinusoidal embedding of the diffusion step, shape (B, 9)."""
    k_norm = np.asarray(ks, dtype=np.float64) / k_max
    feats = [k_norm]
    for j in range(_N_TIME_FREQS):
        angle = (2.0**j) * np.pi * k_norm
        feats.append(np.sin(angle))
        feats.append(np.cos(angle))
    return np.stack(feats, axis=1)


def _silu(z: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    s = 1.0 / (1.0 + np.exp(-z))
    return z * s, s


def _silu_deriv(z: np.ndarray, s: np.ndarray) -> np.ndarray:
    return s * (1.0 + z * (1.0 - s))


def _left_multiply(w: np.ndarray, stack: np.ndarray) -> np.ndarray:
    """out[b, i, n] = sum_j w[i, j] * stack[b, j, n] as one flat GEMM."""
    b, j, n = stack.shape
    flat = stack.transpose(1, 0, 2).reshape(j, b * n)
    return (w @ flat).reshape(w.shape[0], b, n).transpose(1, 0, 2)


@dataclass(frozen=True)
class TrainConfig:
    k_max: int = 100
    depth: int = 3
    width: Optional[int] = None
    batch_size: int = 1024
    learning_rate: float = 1e-3
    early_stop_patience: int = 300
    max_epochs: int = 2000
    val_fraction: float = 0.1
    seed: int = 0

    def __post_init__(self):
        for name in ("k_max", "depth", "batch_size", "early_stop_patience", "max_epochs"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")
        if self.width is not None and self.width < 1:
            raise ValueError(f"width must be positive, got {self.width}")
        if self.learning_rate <= 0:
            raise ValueError(f"learning_rate must be positive, got {self.learning_rate}")
        if not (0 < self.val_fraction < 1):
            raise ValueError(f"val_fraction must be in (0, 1), got {self.val_fraction}")

    def resolved_width(self, n_inputs: int) -> int:
        return self.width if self.width is not None else max(64, 4 * n_inputs)


class ScoreNet:
    """Fully connected epsilon-predictor with a smooth (SiLU) activation.

    ``weights[l]`` has shape (fan_out, fan_in); the first layer consumes the
    data coordinates concatenated with the fixed time embedding of k, and
    the output dimension equals the data dimension. The smooth activation
    keeps the input Jacobian well defined everywhere.
    """

    def __init__(self, weights: List[np.ndarray], biases: List[np.ndarray], n_inputs: int, k_max: int):
        self.weights = [np.asarray(w, dtype=np.float64) for w in weights]
        self.biases = [np.asarray(b, dtype=np.float64) for b in biases]
        self.n_inputs = n_inputs
        self.k_max = k_max
        if self.weights[0].shape[1] != n_inputs + TIME_FEATURES:
            raise ValueError("first layer width does not match inputs + time embedding")
        if self.weights[-1].shape[0] != n_inputs:
            raise ValueError("output dimension must equal input dimension")

    @property
    def depth(self) -> int:
        return len(self.weights) - 1

    @property
    def width(self) -> int:
        return self.weights[0].shape[0]

    def parameters(self) -> List[np.ndarray]:
        return self.weights + self.biases

    def copy_weights(self) -> Tuple[List[np.ndarray], List[np.ndarray]]:
        return [w.copy() for w in self.weights], [b.copy() for b in self.biases]

    def set_weights(self, weights: List[np.ndarray], biases: List[np.ndarray]) -> None:
        self.weights = [w.copy() for w in weights]
        self.biases = [b.copy() for b in biases]

    def _forward_cache(self, x: np.ndarray, ks) -> Tuple[np.ndarray, dict]:
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        ks = np.broadcast_to(np.asarray(ks, dtype=np.int64).ravel(), (x.shape[0],))
        inp = np.concatenate([x, _time_features(ks, self.k_max)], axis=1)
        activations = [inp]
        zs, sigmoids = [], []
        h = inp
        for w, b in zip(self.weights[:-1], self.biases[:-1]):
            z = h @ w.T + b
            h, s = _silu(z)
            zs.append(z)
            sigmoids.append(s)
            activations.append(h)
        out = h @ self.weights[-1].T + self.biases[-1]
        return out, {"activations": activations, "zs": zs, "sigmoids": sigmoids}

    def forward(self, x: np.ndarray, ks) -> np.ndarray:
        """Predicted noise for rows ``x`` at diffusion step(s) ``ks``."""
        out, _ = self._forward_cache(x, ks)
        return out

    def _backward(self, cache: dict, d_out: np.ndarray):
        """Parameter gradients for an upstream gradient on the output."""
        grads_w: List[np.ndarray] = [None] * len(self.weights)
        grads_b: List[np.ndarray] = [None] * len(self.biases)
        acts, zs, sigmoids = cache["activations"], cache["zs"], cache["sigmoids"]
        delta = d_out
        grads_w[-1] = delta.T @ acts[-1]
        grads_b[-1] = delta.sum(axis=0)
        upstream = delta @ self.weights[-1]
        for layer in range(self.depth - 1, -1, -1):
            dz = upstream * _silu_deriv(zs[layer], sigmoids[layer])
            grads_w[layer] = dz.T @ acts[layer]
            grads_b[layer] = dz.sum(axis=0)
            if layer > 0:
                upstream = dz @ self.weights[layer]
        return grads_w, grads_b

    def input_jacobian(self, x: np.ndarray, k: int) -> np.ndarray:
        """Exact Jacobian of the output w.r.t. the data coordinates.

        Returns shape (B, n, n): reverse-mode accumulation of every output
        coordinate back to every data input, batched over rows (the time
        embedding coordinates are not differentiated).
        """
        _, cache = self._forward_cache(x, k)
        zs, sigmoids = cache["zs"], cache["sigmoids"]
        w_in = self.weights[0][:, : self.n_inputs]
        d0 = _silu_deriv(zs[0], sigmoids[0])
        jac = d0[:, :, None] * w_in[None, :, :]
        for layer in range(1, self.depth):
            jac = _left_multiply(self.weights[layer], jac)
            jac *= _silu_deriv(zs[layer], sigmoids[layer])[:, :, None]
        return _left_multiply(self.weights[-1], jac)


def init_scorenet(n_inputs: int, cfg: TrainConfig, rng: np.random.Generator) -> ScoreNet:
    width = cfg.resolved_width(n_inputs)
    sizes = [n_inputs + TIME_FEATURES] + [width] * cfg.depth + [n_inputs]
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        scale = np.sqrt(2.0 / fan_in)
        weights.append(rng.normal(0.0, scale, size=(fan_out, fan_in)))
        biases.append(np.zeros(fan_out))
    return ScoreNet(weights, biases, n_inputs, cfg.k_max)


class _Adam:
    def __init__(self, params: Sequence[np.ndarray], lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, params: Sequence[np.ndarray], grads: Sequence[np.ndarray]) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        correction = self.lr * np.sqrt(1.0 - b2**self.t) / (1.0 - b1**self.t)
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            p -= correction * m / (np.sqrt(v) + self.eps)


def train(data, cfg: TrainConfig, return_history: bool = False):
    """Fit the denoiser by epsilon-prediction MSE with early stopping.

    ``data`` is a standardized LagMatrix or a plain (rows x n) array. Steps
    k are sampled uniformly in [1, k_max] per row; a fixed noising of the
    10% validation split decides early stopping, and the best-validation
    weights are restored before returning.
    """
    rows = np.asarray(getattr(data, "data", data), dtype=np.float64)
    if rows.ndim != 2 or rows.shape[0] < 2:
        raise ValueError(f"training data must be a matrix with >= 2 rows, got shape {rows.shape}")
    n_rows, n = rows.shape
    rng = np.random.default_rng(np.random.SeedSequence((cfg.seed, 2)))
    schedule = make_schedule(cfg.k_max)
    net = init_scorenet(n, cfg, rng)

    n_val = max(1, int(round(n_rows * cfg.val_fraction)))
    perm = rng.permutation(n_rows)
    val_idx, train_idx = perm[:n_val], perm[n_val:]
    if train_idx.size == 0:
        raise ValueError("validation split left no training rows")
    k_val = rng.integers(1, cfg.k_max + 1, size=n_val)
    eps_val = rng.standard_normal((n_val, n))
    x_val = _perturb_rows(rows[val_idx], k_val, eps_val, schedule)

    optimizer = _Adam(net.parameters(), cfg.learning_rate)
    batch = min(cfg.batch_size, train_idx.size)

    def val_loss() -> float:
        pred = net.forward(x_val, k_val)
        return float(np.mean((pred - eps_val) ** 2))

    best = val_loss()
    best_weights = net.copy_weights()
    history = {"val_loss": [best], "train_loss": []}
    patience = 0
    for epoch in range(cfg.max_epochs):
        order = rng.permutation(train_idx)
        epoch_loss = 0.0
        for start in range(0, order.size, batch):
            idx = order[start : start + batch]
            ks = rng.integers(1, cfg.k_max + 1, size=idx.size)
            eps = rng.standard_normal((idx.size, n))
            x_t = _perturb_rows(rows[idx], ks, eps, schedule)
            out, cache = net._forward_cache(x_t, ks)
            diff = out - eps
            loss = float(np.mean(diff**2))
            if not np.isfinite(loss):
                raise TrainingError(
                    f"non-finite training loss at epoch {epoch} (seed={cfg.seed}, lr={cfg.learning_rate})"
                )
            grads_w, grads_b = net._backward(cache, 2.0 * diff / diff.size)
            optimizer.step(net.parameters(), grads_w + grads_b)
            epoch_loss += loss * idx.size
        history["train_loss"].append(epoch_loss / order.size)
        current = val_loss()
        history["val_loss"].append(current)
        if current < best:
            best = current
            best_weights = net.copy_weights()
            patience = 0
        else:
            patience += 1
            if patience >= cfg.early_stop_patience:
                break
    net.set_weights(*best_weights)
    if return_history:
        return net, history
    return net


# ---------------------------------------------------------------------------
# Hessian diagonal via the trained denoiser
# ---------------------------------------------------------------------------


def hessian_diag_variance(
    net: ScoreNet,
    batch: np.ndarray,
    k: int,
    mask: Sequence[int],
    schedule: Optional[NoiseSchedule] = None,
    *,
    rng: Optional[np.random.Generator] = None,
    perturb_inputs: bool = True,
) -> np.ndarray:
    """Variance over the batch of d[eps_hat]_j / dx_j for each active j.

    ``mask`` lists the active column indices. Masked-out variables stay in
    the input rows at their values (they are neither zeroed nor resampled);
    only the active coordinates' diagonal derivatives are read, so no
    gradient w.r.t. an inactive input is ever used. With the full mask this
    equals the unmasked computation exactly. The result matches the log
    density Hessian diagonal up to the fixed per-k factor relating noise
    prediction to the score, which leaves the variance ordering unchanged.
    """
    mask = sorted(int(j) for j in mask)
    if not mask:
        raise ValueError("mask must contain at least one active variable")
    if not (0 <= min(mask) and max(mask) < net.n_inputs):
        raise ValueError(f"mask indices must be within [0, {net.n_inputs})")
    schedule = schedule or make_schedule(net.k_max)
    if not (0 <= k <= schedule.k_max):
        raise ValueError(f"k must be in [0, {schedule.k_max}], got {k}")
    batch = np.atleast_2d(np.asarray(batch, dtype=np.float64))
    if perturb_inputs:
        if rng is None:
            raise ValueError("perturb_inputs=True needs an rng for the noise draw")
        noise = rng.standard_normal(batch.shape)
        batch = perturb(batch, k, noise, schedule)
    jac = net.input_jacobian(batch, k)
    diag = jac[:, mask, mask]
    return np.var(diag, axis=0)


# ---------------------------------------------------------------------------
# Checkpoint serialization
# ---------------------------------------------------------------------------

CHECKPOINT_VERSION = 1


def save_scorenet(net: ScoreNet, path, train_config: Optional[TrainConfig] = None) -> None:
    meta = {
        "format_version": CHECKPOINT_VERSION,
        "n_inputs": net.n_inputs,
        "k_max": net.k_max,
        "depth": net.depth,
        "width": net.width,
        "train_config": dataclasses.asdict(train_config) if train_config else None,
    }
    arrays: Dict[str, np.ndarray] = {}
    for i, (w, b) in enumerate(zip(net.weights, net.biases)):
        arrays[f"w{i}"] = w
        arrays[f"b{i}"] = b
    np.savez(path, meta=np.frombuffer(json.dumps(meta).encode(), dtype=np.uint8), **arrays)


def load_scorenet(path) -> ScoreNet:
    with np.load(path) as archive:
        meta = json.loads(archive["meta"].tobytes().decode())
        if meta["format_version"] != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {meta['format_version']}")
        n_layers = meta["depth"] + 1
        weights = [archive[f"w{i}"] for i in range(n_layers)]
        biases = [archive[f"b{i}"] for i in range(n_layers)]
    return ScoreNet(weights, biases, meta["n_inputs"], meta["k_max"])
