"""Shallow encoder-only attention regressor: CIR beam matrix -> (x, y).

Pipeline: input + sinusoidal positional encoding -> dropout -> K encoder
layers (multi-head attention and a position-wise FFN, each with a residual
connection and optional post-norm) -> optional max pooling over the feature
axis -> flatten -> FCNN (one ReLU hidden layer) -> 2 outputs.
"""
from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ContractError, ShapeError
from .preprocess import CirSample, Scalers
from .rng import Streams
from .tensor import (
    Tensor,
    default_dtype,
    dropout,
    layer_norm,
    matmul,
    max_pool_last,
    no_grad,
    parameter,
    relu,
    softmax_rows,
)

GRID_LAYERS = (1, 2, 3, 4, 5)


@dataclass(frozen=True)
class ModelConfig:
    encoder_layers: int = 1
    use_layer_norm: bool = False
    use_max_pool: bool = False
    d_model: int = 46
    seq_len: int = 128
    n_heads: int = 2
    d_ff: int = 64
    dropout_rate: float = 0.05
    fcnn_hidden: int = 46
    pool_segment: int = 4

    def __post_init__(self):
        if not 1 <= self.encoder_layers <= 5:
            raise ConfigError(f"encoder_layers must be in 1..5, got {self.encoder_layers}")
        if self.d_model % self.n_heads:
            raise ConfigError(f"d_model {self.d_model} is not divisible by n_heads {self.n_heads}")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ConfigError(f"dropout_rate must be in [0, 1), got {self.dropout_rate}")
        for name in ("seq_len", "d_ff", "fcnn_hidden", "pool_segment", "d_model"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive")

    @property
    def d_head(self) -> int:
        return self.d_model // self.n_heads

    @property
    def pooled_width(self) -> int:
        """Feature width after right-padding to a multiple of the segment and pooling."""
        return -(-self.d_model // self.pool_segment)

    @property
    def flat_features(self) -> int:
        return self.seq_len * (self.pooled_width if self.use_max_pool else self.d_model)

    @property
    def tag(self) -> str:
        return (f"el={self.encoder_layers},ln={'on' if self.use_layer_norm else 'off'},"
                f"mp={'on' if self.use_max_pool else 'off'}")

    def to_json(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_json(cls, obj: dict) -> "ModelConfig":
        return cls(**obj)


def table_grid(**overrides) -> list[ModelConfig]:
    """The 20 architectures EL 1..5 x LN off/on x MP off/on."""
    return [ModelConfig(encoder_layers=el, use_layer_norm=ln, use_max_pool=mp, **overrides)
            for mp in (False, True) for ln in (False, True) for el in GRID_LAYERS]


def parse_arch(text: str, **overrides) -> ModelConfig:
    """``"el=3,ln=off,mp=on"`` -> ModelConfig."""
    from .config import parse_bool

    fields = {}
    for part in text.split(","):
        key, sep, value = part.strip().partition("=")
        if not sep:
            raise ConfigError(f"bad --arch component {part!r}; expected key=value")
        key = key.strip().lower()
        if key == "el":
            try:
                fields["encoder_layers"] = int(value)
            except ValueError as exc:
                raise ConfigError(f"el must be an integer, got {value!r}") from exc
        elif key == "ln":
            fields["use_layer_norm"] = parse_bool(value)
        elif key == "mp":
            fields["use_max_pool"] = parse_bool(value)
        else:
            raise ConfigError(f"unknown --arch key {key!r} (expected el, ln, mp)")
    if "encoder_layers" not in fields:
        raise ConfigError("--arch must set el")
    fields.update(overrides)
    return ModelConfig(**fields)


# -- parameter bookkeeping -----------------------------------------------------

def param_shapes(config: ModelConfig) -> dict[str, tuple]:
    d, f = config.d_model, config.d_ff
    shapes = {}
    for i in range(config.encoder_layers):
        p = f"enc{i}"
        for m in ("q", "k", "v", "o"):
            shapes[f"{p}.mha.w{m}"] = (d, d)
            shapes[f"{p}.mha.b{m}"] = (d,)
        shapes[f"{p}.ffn.w1"] = (d, f)
        shapes[f"{p}.ffn.b1"] = (f,)
        shapes[f"{p}.ffn.w2"] = (f, d)
        shapes[f"{p}.ffn.b2"] = (d,)
        if config.use_layer_norm:
            for n in ("ln1", "ln2"):
                shapes[f"{p}.{n}.gamma"] = (d,)
                shapes[f"{p}.{n}.beta"] = (d,)
    shapes["head.w1"] = (config.flat_features, config.fcnn_hidden)
    shapes["head.b1"] = (config.fcnn_hidden,)
    shapes["head.w2"] = (config.fcnn_hidden, 2)
    shapes["head.b2"] = (2,)
    return shapes


def count_params(config: ModelConfig) -> int:
    """Closed-form number of trainable scalars."""
    d, f, h = config.d_model, config.d_ff, config.fcnn_hidden
    per_layer = 4 * (d * d + d) + (d * f + f) + (f * d + d)
    if config.use_layer_norm:
        per_layer += 2 * 2 * d
    head = config.flat_features * h + h + h * 2 + 2
    return config.encoder_layers * per_layer + head


def init_weights(config: ModelConfig, seed: int = 0) -> dict[str, Tensor]:
    """Glorot-uniform matrices, zero biases, unit LN gains; seeded."""
    rng = Streams(seed).get("init")
    weights = {}
    for name, shape in param_shapes(config).items():
        if name.endswith(".gamma"):
            arr = np.ones(shape)
        elif len(shape) == 2:
            bound = math.sqrt(6.0 / (shape[0] + shape[1]))
            arr = rng.uniform(-bound, bound, shape)
        else:
            arr = np.zeros(shape)
        weights[name] = parameter(arr)
    return weights


# -- building blocks -----------------------------------------------------------

def positional_encoding(seq_len: int = 128, d_model: int = 46) -> np.ndarray:
    pos = np.arange(seq_len)[:, None]
    i2 = np.arange(0, d_model, 2)
    angle = pos / np.power(10000.0, i2 / d_model)
    pe = np.zeros((seq_len, d_model))
    pe[:, 0::2] = np.sin(angle)
    pe[:, 1::2] = np.cos(angle[:, : d_model // 2])
    return pe


class _Drop:
    """Dropout settings threaded through a forward pass."""

    def __init__(self, rate: float, training: bool, rng):
        self.rate, self.training, self.rng = rate, training, rng

    def __call__(self, x: Tensor) -> Tensor:
        return dropout(x, self.rate, self.rng, self.training)


_NO_DROP = _Drop(0.0, False, None)


def scaled_dot_attention(q: Tensor, k: Tensor, v: Tensor, drop: _Drop = _NO_DROP) -> Tensor:
    """softmax(Q K^T / sqrt(d_head)) V over the last two axes."""
    if q.shape[-1] != k.shape[-1] or k.shape[-2] != v.shape[-2]:
        raise ShapeError(f"attention shapes do not match: Q{q.shape} K{k.shape} V{v.shape}")
    scores = matmul(q, k.transpose()) * (1.0 / math.sqrt(q.shape[-1]))
    return matmul(drop(softmax_rows(scores)), v)


def _split_heads(x: Tensor, h: int) -> Tensor:
    *lead, s, d = x.shape
    return x.reshape(*lead, s, h, d // h).transpose(*range(len(lead)), len(lead) + 1, len(lead), len(lead) + 2)


def _merge_heads(x: Tensor) -> Tensor:
    *lead, h, s, dh = x.shape
    n = len(lead)
    return x.transpose(*range(n), n + 1, n, n + 2).reshape(*lead, s, h * dh)


def multi_head_attention(x: Tensor, w: dict, n_heads: int = 2, drop: _Drop = _NO_DROP) -> Tensor:
    """Project to Q, K, V, attend per disjoint head slice, concatenate, project by W_o.

    ``w`` maps wq, bq, wk, bk, wv, bv, wo, bo to tensors.
    """
    d = x.shape[-1]
    if d % n_heads:
        raise ConfigError(f"d_model {d} is not divisible by {n_heads} heads")
    q = _split_heads(matmul(x, w["wq"]) + w["bq"], n_heads)
    k = _split_heads(matmul(x, w["wk"]) + w["bk"], n_heads)
    v = _split_heads(matmul(x, w["wv"]) + w["bv"], n_heads)
    heads = scaled_dot_attention(q, k, v, drop)
    return matmul(_merge_heads(heads), w["wo"]) + w["bo"]


def feed_forward(x: Tensor, w1: Tensor, b1: Tensor, w2: Tensor, b2: Tensor) -> Tensor:
    if x.shape[-1] != w1.shape[0] or w1.shape[1] != w2.shape[0]:
        raise ShapeError(f"FFN width chain broken: x{x.shape} W1{w1.shape} W2{w2.shape}")
    return matmul(relu(matmul(x, w1) + b1), w2) + b2


def _sub(weights: dict, prefix: str) -> dict:
    n = len(prefix) + 1
    return {k[n:]: v for k, v in weights.items() if k.startswith(prefix + ".")}


def encoder_layer(x: Tensor, weights: dict, config: ModelConfig, drop: _Drop = _NO_DROP) -> Tensor:
    """Post-norm block: Y = N(X + drop(MHA(X))); Z = N(Y + drop(FFN(Y))).

    ``weights`` holds this layer's tensors keyed mha.*, ffn.*, ln1.*, ln2.*.
    """
    mha = _sub(weights, "mha")
    ffn = _sub(weights, "ffn")
    y = x + drop(multi_head_attention(x, mha, config.n_heads, drop))
    if config.use_layer_norm:
        y = layer_norm(y, weights["ln1.gamma"], weights["ln1.beta"])
    z = y + drop(feed_forward(y, ffn["w1"], ffn["b1"], ffn["w2"], ffn["b2"]))
    if config.use_layer_norm:
        z = layer_norm(z, weights["ln2.gamma"], weights["ln2.beta"])
    return z


def max_pool_features(x: Tensor, segment: int = 4, d_model: int = 46) -> Tensor:
    """(b, seq, d_model) -> (b, seq, ceil(d_model / segment)), right padded."""
    if x.shape[-1] != d_model:
        raise ConfigError(f"max pooling expects feature length {d_model}, got {x.shape[-1]}")
    return max_pool_last(x, segment)


def forward_tensor(x, config: ModelConfig, weights: dict, training: bool = False,
                   rng: np.random.Generator | None = None, trace: dict | None = None) -> Tensor:
    """Standardized inputs (b, seq, d_model) -> standardized (b, 2)."""
    x = x if isinstance(x, Tensor) else Tensor(x)
    if x.ndim == 2:
        x = x.reshape(1, *x.shape)
    if x.shape[-2:] != (config.seq_len, config.d_model):
        raise ShapeError(f"model expects inputs (b, {config.seq_len}, {config.d_model}), got {x.shape}")
    drop = _Drop(config.dropout_rate, training, rng) if training else _NO_DROP
    pe = Tensor(positional_encoding(config.seq_len, config.d_model), dtype=x.dtype)
    h = drop(x + pe)
    for i in range(config.encoder_layers):
        h = encoder_layer(h, _sub(weights, f"enc{i}"), config, drop)
    if config.use_max_pool:
        h = drop(max_pool_features(h, config.pool_segment, config.d_model))
    if trace is not None:
        trace["pre_flatten"] = h.shape
    h = h.reshape(h.shape[0], config.flat_features)
    h = relu(matmul(h, weights["head.w1"]) + weights["head.b1"])
    return matmul(h, weights["head.w2"]) + weights["head.b2"]


def model_forward(cir, config: ModelConfig, weights: dict, mode: str = "eval",
                  rng: np.random.Generator | None = None) -> np.ndarray:
    """Standardized (x, y) for one standardized ``CirSample`` (or a list of them).

    Returns shape (2,) for a single sample and (n, 2) for a list.
    """
    if mode not in ("train", "eval"):
        raise ConfigError(f"mode must be 'train' or 'eval', got {mode!r}")
    single = isinstance(cir, CirSample)
    samples = [cir] if single else list(cir)
    if not all(isinstance(s, CirSample) and s.standardized for s in samples):
        raise ContractError("model_forward needs CirSamples standardized with the dataset scalers")
    x = np.stack([s.cir for s in samples]).astype(default_dtype())
    training = mode == "train"
    if training:
        out = forward_tensor(x, config, weights, True, rng).data
    else:
        with no_grad():
            out = forward_tensor(x, config, weights, False).data
    return out[0] if single else out


class Regressor:
    """A configured model with its weights and the scalers it was trained with."""

    def __init__(self, config: ModelConfig, weights: dict | None = None,
                 scalers: Scalers | None = None, seed: int = 0):
        self.config = config
        self.weights = weights if weights is not None else init_weights(config, seed)
        self.scalers = scalers or Scalers()

    @property
    def n_params(self) -> int:
        return int(sum(w.data.size for w in self.weights.values()))

    def parameters(self) -> list[Tensor]:
        return list(self.weights.values())

    def forward(self, x, training=False, rng=None) -> Tensor:
        return forward_tensor(x, self.config, self.weights, training, rng)

    def predict_standardized(self, x_std: np.ndarray, batch: int = 256) -> np.ndarray:
        out = []
        with no_grad():
            for i in range(0, len(x_std), batch):
                out.append(forward_tensor(x_std[i:i + batch], self.config, self.weights).data)
        return np.concatenate(out) if out else np.zeros((0, 2), dtype=default_dtype())

    def predict_meters(self, raw_cir: np.ndarray, batch: int = 256) -> np.ndarray:
        """Raw CIR amplitudes (n, 128, 46) -> positions in meters (n, 2)."""
        x = self.scalers.forward_inputs(raw_cir)
        return self.scalers.inverse_labels(self.predict_standardized(x, batch))
