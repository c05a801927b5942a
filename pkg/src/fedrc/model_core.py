"""Pixel classifier, loss/gradients, Adam optimizer, and model averaging.

The model is a one-hidden-layer perceptron over five per-pixel features
(R, G, B scaled to [0,1], x/width, y/height) with a rectifier activation and
a softmax cross-entropy loss. Parameters live in a single flat float64 vector
with layout ``[W1 (input_dim x hidden) | b1 (hidden) | W2 (hidden x classes)
| b2 (classes)]`` -- the unit of weighted averaging.

Gradients are exact analytic backprop. ``forward_loss`` and ``adam_step`` are
pure functions of their inputs, so per-vehicle training can run in parallel
as long as each vehicle draws from its own random stream.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .gauss_stats import ImageTensor

__all__ = [
    "ModelConfig",
    "OptimizerState",
    "Batch",
    "param_count",
    "init_params",
    "unpack_params",
    "pixel_features",
    "forward_loss",
    "predict",
    "adam_step",
    "weighted_average",
    "save_checkpoint",
    "load_checkpoint",
]

CHECKPOINT_MAGIC = b"FRCM"
CHECKPOINT_VERSION = 1
# 16-byte header: magic, version (u32), input_dim/hidden/classes (u16), 2 pad bytes.
_HEADER = struct.Struct("<4sIHHHxx")

INIT_SCALE = 0.1


@dataclass(frozen=True)
class ModelConfig:
    """Network shape. ``input_dim`` defaults to the five pixel features."""

    input_dim: int = 5
    hidden: int = 16
    classes: int = 4

    def __post_init__(self) -> None:
        if self.input_dim < 1 or self.hidden < 1:
            raise ValueError("input_dim and hidden must be >= 1")
        if self.classes < 2:
            raise ValueError("classes must be >= 2")


@dataclass(frozen=True)
class OptimizerState:
    """Adam hyperparameters plus per-parameter moment vectors.

    Weight decay is applied as an additive ``weight_decay * param`` term in
    the gradient (coupled L2).
    """

    lr: float = 3e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 1e-4
    step: int = 0
    m: np.ndarray = None  # type: ignore[assignment]
    v: np.ndarray = None  # type: ignore[assignment]

    @classmethod
    def fresh(cls, n_params: int, **hyper) -> "OptimizerState":
        """Zeroed moments for a parameter vector of length ``n_params``."""
        return cls(step=0, m=np.zeros(n_params), v=np.zeros(n_params), **hyper)

    def reset(self) -> "OptimizerState":
        """Same hyperparameters, fresh moments."""
        return OptimizerState(
            lr=self.lr, beta1=self.beta1, beta2=self.beta2, eps=self.eps,
            weight_decay=self.weight_decay,
            step=0, m=np.zeros_like(self.m), v=np.zeros_like(self.v),
        )


@dataclass(frozen=True)
class Batch:
    """Per-pixel feature rows and their class labels."""

    features: np.ndarray  # (n, input_dim) float64
    labels: np.ndarray    # (n,) integer class indices

    def __post_init__(self) -> None:
        if self.features.ndim != 2 or self.labels.ndim != 1:
            raise ValueError("features must be 2-D and labels 1-D")
        if self.features.shape[0] != self.labels.shape[0]:
            raise ValueError("features and labels must have equal counts")
        if self.features.shape[0] < 1:
            raise ValueError("batch is empty")


def param_count(cfg: ModelConfig) -> int:
    return cfg.input_dim * cfg.hidden + cfg.hidden + cfg.hidden * cfg.classes + cfg.classes


def init_params(cfg: ModelConfig, rng: np.random.Generator) -> np.ndarray:
    """Uniform init in [-0.1, 0.1] from the supplied stream."""
    return rng.uniform(-INIT_SCALE, INIT_SCALE, size=param_count(cfg))


def unpack_params(params: np.ndarray, cfg: ModelConfig):
    """Views (W1, b1, W2, b2) into the flat parameter vector."""
    if params.shape != (param_count(cfg),):
        raise ValueError(
            f"parameter vector has length {params.shape}, expected ({param_count(cfg)},)"
        )
    d, h, c = cfg.input_dim, cfg.hidden, cfg.classes
    i = 0
    w1 = params[i : i + d * h].reshape(d, h); i += d * h
    b1 = params[i : i + h]; i += h
    w2 = params[i : i + h * c].reshape(h, c); i += h * c
    b2 = params[i : i + c]
    return w1, b1, w2, b2


def pixel_features(img: ImageTensor) -> np.ndarray:
    """(H*W, 5) feature rows: R, G, B in [0,1] plus x/width and y/height."""
    h, w = img.height, img.width
    feats = np.empty((h, w, 5), dtype=np.float64)
    feats[:, :, :3] = img.pixels.astype(np.float64) / 255.0
    feats[:, :, 3] = (np.arange(w, dtype=np.float64) / w)[None, :]
    feats[:, :, 4] = (np.arange(h, dtype=np.float64) / h)[:, None]
    return feats.reshape(-1, 5)


def forward_loss(params: np.ndarray, cfg: ModelConfig, batch: Batch) -> tuple[float, np.ndarray]:
    """Mean cross-entropy over the batch and its exact gradient.

    Returns ``(loss, grads)`` with ``grads`` laid out like ``params``.
    """
    w1, b1, w2, b2 = unpack_params(params, cfg)
    x = batch.features
    y = batch.labels
    if x.shape[1] != cfg.input_dim:
        raise ValueError(f"feature dim {x.shape[1]} != input_dim {cfg.input_dim}")
    if y.min() < 0 or y.max() >= cfg.classes:
        raise ValueError(f"labels must lie in [0, {cfg.classes})")
    n = x.shape[0]

    z1 = x @ w1 + b1
    a1 = np.maximum(z1, 0.0)
    z2 = a1 @ w2 + b2
    zmax = z2.max(axis=1, keepdims=True)
    ez = np.exp(z2 - zmax)
    sez = ez.sum(axis=1, keepdims=True)
    log_probs = (z2 - zmax) - np.log(sez)
    rows = np.arange(n)
    loss = float(-log_probs[rows, y].mean())

    dz2 = ez / sez
    dz2[rows, y] -= 1.0
    dz2 /= n
    g_w2 = a1.T @ dz2
    g_b2 = dz2.sum(axis=0)
    da1 = dz2 @ w2.T
    dz1 = da1 * (z1 > 0.0)
    g_w1 = x.T @ dz1
    g_b1 = dz1.sum(axis=0)

    grads = np.concatenate([g_w1.reshape(-1), g_b1, g_w2.reshape(-1), g_b2])
    return loss, grads


def predict(params: np.ndarray, cfg: ModelConfig, features: np.ndarray) -> np.ndarray:
    """Argmax class per feature row (ties break to the lowest class index)."""
    w1, b1, w2, b2 = unpack_params(params, cfg)
    a1 = np.maximum(features @ w1 + b1, 0.0)
    return np.argmax(a1 @ w2 + b2, axis=1)


def adam_step(
    params: np.ndarray,
    grads: np.ndarray,
    state: OptimizerState,
) -> tuple[np.ndarray, OptimizerState]:
    """One bias-corrected Adam update; returns the new params and state."""
    if params.shape != grads.shape or params.shape != state.m.shape:
        raise ValueError("params, grads and moments must have equal length")
    if not np.all(np.isfinite(grads)):
        raise ValueError("divergence detected: non-finite gradients")
    g = grads + state.weight_decay * params
    t = state.step + 1
    m = state.beta1 * state.m + (1.0 - state.beta1) * g
    v = state.beta2 * state.v + (1.0 - state.beta2) * g * g
    m_hat = m / (1.0 - state.beta1**t)
    v_hat = v / (1.0 - state.beta2**t)
    new_params = params - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
    new_state = OptimizerState(
        lr=state.lr, beta1=state.beta1, beta2=state.beta2, eps=state.eps,
        weight_decay=state.weight_decay, step=t, m=m, v=v,
    )
    return new_params, new_state


def weighted_average(models: list[np.ndarray], weights) -> np.ndarray:
    """Convex combination of parameter vectors, in child order.

    Computed anchored on the first model (``m0 + sum_i w_i (m_i - m0)``) so
    averaging identical models returns them unchanged down to the last bit.
    """
    w = np.asarray(weights, dtype=np.float64)
    if w.ndim != 1 or len(models) != w.size:
        raise ValueError("one weight per model required")
    if not models:
        raise ValueError("no models to average")
    base = models[0]
    for m in models[1:]:
        if m.shape != base.shape:
            raise ValueError("model length mismatch")
    if w.min() < 0.0 or abs(float(w.sum()) - 1.0) > 1e-9:
        raise ValueError("weights must form a simplex")
    acc = np.zeros_like(base)
    for wi, m in zip(w[1:], models[1:]):
        acc += wi * (m - base)
    return base + acc


def save_checkpoint(path: Path | str, params: np.ndarray, cfg: ModelConfig) -> None:
    """Binary checkpoint: 16-byte header then little-endian float64 params."""
    if params.shape != (param_count(cfg),):
        raise ValueError("parameter vector does not match the model config")
    header = _HEADER.pack(CHECKPOINT_MAGIC, CHECKPOINT_VERSION, cfg.input_dim, cfg.hidden, cfg.classes)
    Path(path).write_bytes(header + np.ascontiguousarray(params, dtype="<f8").tobytes())


def load_checkpoint(path: Path | str) -> tuple[np.ndarray, ModelConfig]:
    """Read a checkpoint written by :func:`save_checkpoint`."""
    blob = Path(path).read_bytes()
    if len(blob) < _HEADER.size:
        raise ValueError(f"checkpoint too short: {path}")
    magic, version, input_dim, hidden, classes = _HEADER.unpack(blob[: _HEADER.size])
    if magic != CHECKPOINT_MAGIC:
        raise ValueError(f"bad checkpoint magic in {path}")
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {version} in {path}")
    cfg = ModelConfig(input_dim=input_dim, hidden=hidden, classes=classes)
    body = blob[_HEADER.size :]
    expected = param_count(cfg) * 8
    if len(body) != expected:
        raise ValueError(f"checkpoint payload is {len(body)} bytes, expected {expected}")
    params = np.frombuffer(body, dtype="<f8").astype(np.float64)
    return params, cfg
