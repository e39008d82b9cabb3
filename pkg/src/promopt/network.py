"""Entity-embedding + dilated causal convolution network, in plain numpy.

The architecture is fixed (embedding lookups, a causal dilated conv stack
over the temporal groups, fully connected ReLU layers, sigmoid head), so
gradients are derived by hand instead of pulling in an autodiff framework.
Everything runs in double precision.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .validation import as_binary_array, check_probabilities

BCE_EPS = 1e-12


def default_embed_dim(vocab_size: int) -> int:
    return min(16, math.ceil(vocab_size / 2))


def stable_sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z, dtype=np.float64)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


@dataclass(frozen=True)
class NetworkConfig:
    static_vocab_sizes: tuple[int, ...]
    temporal_vocab_sizes: tuple[int, ...]
    static_cont_dim: int
    temporal_cont_dim: int
    n_lags: int
    static_embed_dims: tuple[int, ...] = ()
    temporal_embed_dims: tuple[int, ...] = ()
    kernel_size: int = 2
    dilations: tuple[int, ...] = (1, 2, 4)
    channels: tuple[int, ...] = (16, 16, 16)
    fc_widths: tuple[int, ...] = (64, 32, 16)

    def __post_init__(self):
        if self.kernel_size < 1:
            raise ValueError("kernel_size must be >= 1")
        if any(d < 1 for d in self.dilations):
            raise ValueError("dilations must be strictly positive")
        if len(self.dilations) != len(self.channels):
            raise ValueError("dilations and channels must have equal length")
        if not self.static_embed_dims:
            object.__setattr__(
                self, "static_embed_dims", tuple(default_embed_dim(v) for v in self.static_vocab_sizes)
            )
        if not self.temporal_embed_dims:
            object.__setattr__(
                self, "temporal_embed_dims", tuple(default_embed_dim(v) for v in self.temporal_vocab_sizes)
            )

    @property
    def conv_input_dim(self) -> int:
        return sum(self.temporal_embed_dims) + self.temporal_cont_dim

    @property
    def fc_input_dim(self) -> int:
        return self.channels[-1] + sum(self.static_embed_dims) + self.static_cont_dim

    def to_dict(self) -> dict:
        return {
            "static_vocab_sizes": list(self.static_vocab_sizes),
            "temporal_vocab_sizes": list(self.temporal_vocab_sizes),
            "static_cont_dim": self.static_cont_dim,
            "temporal_cont_dim": self.temporal_cont_dim,
            "n_lags": self.n_lags,
            "static_embed_dims": list(self.static_embed_dims),
            "temporal_embed_dims": list(self.temporal_embed_dims),
            "kernel_size": self.kernel_size,
            "dilations": list(self.dilations),
            "channels": list(self.channels),
            "fc_widths": list(self.fc_widths),
        }

    @classmethod
    def from_dict(cls, raw: dict) -> "NetworkConfig":
        return cls(
            static_vocab_sizes=tuple(raw["static_vocab_sizes"]),
            temporal_vocab_sizes=tuple(raw["temporal_vocab_sizes"]),
            static_cont_dim=int(raw["static_cont_dim"]),
            temporal_cont_dim=int(raw["temporal_cont_dim"]),
            n_lags=int(raw["n_lags"]),
            static_embed_dims=tuple(raw["static_embed_dims"]),
            temporal_embed_dims=tuple(raw["temporal_embed_dims"]),
            kernel_size=int(raw["kernel_size"]),
            dilations=tuple(raw["dilations"]),
            channels=tuple(raw["channels"]),
            fc_widths=tuple(raw["fc_widths"]),
        )


@dataclass
class Batch:
    static_cat: np.ndarray        # [B, n_static_cat] int64
    temporal_cat: np.ndarray      # [B, n_lags, n_temporal_cat] int64
    static_cont: np.ndarray       # [B, static_cont_dim] float64
    temporal_cont: np.ndarray     # [B, n_lags, temporal_cont_dim] float64
    labels: np.ndarray | None = None

    def __len__(self) -> int:
        return self.static_cat.shape[0]

    def take(self, idx) -> "Batch":
        return Batch(
            static_cat=self.static_cat[idx],
            temporal_cat=self.temporal_cat[idx],
            static_cont=self.static_cont[idx],
            temporal_cont=self.temporal_cont[idx],
            labels=None if self.labels is None else self.labels[idx],
        )


def _glorot(rng: np.random.Generator, shape, fan_in: int, fan_out: int) -> np.ndarray:
    bound = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=shape)


def init_params(config: NetworkConfig, rng: np.random.Generator) -> dict[str, np.ndarray]:
    """Seeded initialization; embeddings uniform in +-0.05, dense/conv Glorot-uniform."""
    params: dict[str, np.ndarray] = {}
    for i, (vocab, dim) in enumerate(zip(config.static_vocab_sizes, config.static_embed_dims)):
        params[f"emb_s{i}"] = rng.uniform(-0.05, 0.05, size=(vocab, dim))
    for i, (vocab, dim) in enumerate(zip(config.temporal_vocab_sizes, config.temporal_embed_dims)):
        params[f"emb_t{i}"] = rng.uniform(-0.05, 0.05, size=(vocab, dim))
    c_in = config.conv_input_dim
    k = config.kernel_size
    for l, (dilation, c_out) in enumerate(zip(config.dilations, config.channels)):
        params[f"conv{l}_w"] = _glorot(rng, (k, c_in, c_out), fan_in=k * c_in, fan_out=k * c_out)
        params[f"conv{l}_b"] = np.zeros(c_out)
        c_in = c_out
    width_in = config.fc_input_dim
    for l, width_out in enumerate(config.fc_widths):
        params[f"fc{l}_w"] = _glorot(rng, (width_in, width_out), fan_in=width_in, fan_out=width_out)
        params[f"fc{l}_b"] = np.zeros(width_out)
        width_in = width_out
    params["head_w"] = _glorot(rng, (width_in,), fan_in=width_in, fan_out=1)
    params["head_b"] = np.zeros(())
    return params


def causal_dilated_conv(x, f, d: int) -> np.ndarray:
    """Dilated causal convolution of a 1-D sequence with left zero-padding.

    out[k] = sum_i f[i] * x[k - d*i], with x[j] = 0 for j < 0, so the output
    has the input's length and out[k] never depends on x[j] for j > k.
    """
    x = np.asarray(x, dtype=np.float64)
    f = np.asarray(f, dtype=np.float64)
    if f.size < 1:
        raise ValueError("filter must have at least one tap")
    if d < 1:
        raise ValueError("dilation must be >= 1")
    out = np.zeros_like(x)
    for i, tap in enumerate(f):
        shift = d * i
        if shift >= x.size:
            break
        out[shift:] += tap * x[: x.size - shift]
    return out


def _conv_layer_forward(a_prev: np.ndarray, w: np.ndarray, b: np.ndarray, d: int) -> np.ndarray:
    batch, t_len, c_in = a_prev.shape
    k = w.shape[0]
    pad = (k - 1) * d
    padded = np.zeros((batch, t_len + pad, c_in))
    padded[:, pad:, :] = a_prev
    z = np.broadcast_to(b, (batch, t_len, w.shape[2])).copy()
    for i in range(k):
        start = pad - d * i
        z += padded[:, start : start + t_len, :] @ w[i]
    return z


def forward_full(batch: Batch, params: dict[str, np.ndarray], config: NetworkConfig):
    """Forward pass returning probabilities and the cache needed for backward."""
    n = len(batch)
    if batch.temporal_cont.shape != (n, config.n_lags, config.temporal_cont_dim):
        raise ValueError(
            f"temporal_cont shape {batch.temporal_cont.shape} does not match "
            f"({n}, {config.n_lags}, {config.temporal_cont_dim})"
        )
    if batch.static_cont.shape != (n, config.static_cont_dim):
        raise ValueError(f"static_cont shape {batch.static_cont.shape} does not match ({n}, {config.static_cont_dim})")

    t_embs = [params[f"emb_t{i}"][batch.temporal_cat[:, :, i]] for i in range(len(config.temporal_vocab_sizes))]
    x0 = np.concatenate(t_embs + [batch.temporal_cont], axis=2) if t_embs else batch.temporal_cont

    conv_cache = []
    a = x0
    for l, d in enumerate(config.dilations):
        z = _conv_layer_forward(a, params[f"conv{l}_w"], params[f"conv{l}_b"], d)
        conv_cache.append((a, z))
        a = np.maximum(z, 0.0)
    h = a[:, -1, :]

    s_embs = [params[f"emb_s{i}"][batch.static_cat[:, i]] for i in range(len(config.static_vocab_sizes))]
    u = np.concatenate([h] + s_embs + [batch.static_cont], axis=1)

    fc_cache = []
    act = u
    for l in range(len(config.fc_widths)):
        z = act @ params[f"fc{l}_w"] + params[f"fc{l}_b"]
        fc_cache.append((act, z))
        act = np.maximum(z, 0.0)
    logits = act @ params["head_w"] + params["head_b"]
    probs = stable_sigmoid(logits)
    cache = {"conv": conv_cache, "fc": fc_cache, "last_fc_act": act, "probs": probs}
    return probs, cache


def forward(batch: Batch, params: dict[str, np.ndarray], config: NetworkConfig) -> np.ndarray:
    probs, _ = forward_full(batch, params, config)
    return probs


def bce_loss(probs, labels) -> float:
    """Mean binary cross-entropy, probabilities clamped away from {0, 1}."""
    p = check_probabilities(probs, "probabilities")
    y = as_binary_array(labels, "labels")
    if p.shape != y.shape:
        raise ValueError(f"probabilities and labels must have equal length ({p.shape} != {y.shape})")
    p = np.clip(p, BCE_EPS, 1.0 - BCE_EPS)
    return float(-np.mean(y * np.log(p) + (1.0 - y) * np.log(1.0 - p)))


def loss_and_grads(batch: Batch, params: dict[str, np.ndarray], config: NetworkConfig):
    """Mean BCE loss and its exact analytic gradient for every parameter.

    The loss is computed without input validation so that a diverging run
    surfaces as a non-finite loss instead of a validation error.
    """
    probs, cache = forward_full(batch, params, config)
    y = batch.labels
    n = len(batch)
    clamped = np.clip(probs, BCE_EPS, 1.0 - BCE_EPS)
    loss = float(-np.mean(y * np.log(clamped) + (1.0 - y) * np.log(1.0 - clamped)))
    grads = {name: np.zeros_like(value) for name, value in params.items()}

    dz = (probs - y) / n
    grads["head_w"] = cache["last_fc_act"].T @ dz
    grads["head_b"] = np.asarray(dz.sum())
    d_act = np.outer(dz, params["head_w"])

    for l in reversed(range(len(config.fc_widths))):
        a_prev, z = cache["fc"][l]
        dzl = d_act * (z > 0.0)
        grads[f"fc{l}_w"] = a_prev.T @ dzl
        grads[f"fc{l}_b"] = dzl.sum(axis=0)
        d_act = dzl @ params[f"fc{l}_w"].T

    c_last = config.channels[-1]
    dh = d_act[:, :c_last]
    offset = c_last
    for i, dim in enumerate(config.static_embed_dims):
        d_emb = d_act[:, offset : offset + dim]
        np.add.at(grads[f"emb_s{i}"], batch.static_cat[:, i], d_emb)
        offset += dim

    da = np.zeros((n, config.n_lags, c_last))
    da[:, -1, :] = dh
    k = config.kernel_size
    for l in reversed(range(len(config.dilations))):
        a_prev, z = cache["conv"][l]
        d = config.dilations[l]
        pad = (k - 1) * d
        dzl = da * (z > 0.0)
        t_len = z.shape[1]
        padded = np.zeros((n, t_len + pad, a_prev.shape[2]))
        padded[:, pad:, :] = a_prev
        d_padded = np.zeros_like(padded)
        w = params[f"conv{l}_w"]
        for i in range(k):
            start = pad - d * i
            grads[f"conv{l}_w"][i] = np.einsum("btc,bto->co", padded[:, start : start + t_len, :], dzl)
            d_padded[:, start : start + t_len, :] += dzl @ w[i].T
        grads[f"conv{l}_b"] = dzl.sum(axis=(0, 1))
        da = d_padded[:, pad:, :]

    offset = 0
    for i, dim in enumerate(config.temporal_embed_dims):
        d_emb = da[:, :, offset : offset + dim]
        np.add.at(grads[f"emb_t{i}"], batch.temporal_cat[:, :, i], d_emb)
        offset += dim

    return loss, grads


def backward(batch: Batch, params: dict[str, np.ndarray], config: NetworkConfig) -> dict[str, np.ndarray]:
    """Gradient of the mean BCE loss with respect to every parameter."""
    _, grads = loss_and_grads(batch, params, config)
    return grads
