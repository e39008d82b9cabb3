"""Training loop for the purchase-probability network.

Mini-batch training with Adam or RMSProp, weight decay, a cyclical or
plateau learning-rate schedule, optional stochastic weight averaging and
inverse-loss checkpoint averaging. Fully deterministic for a fixed seed.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from .errors import TrainingError
from .features import FeatureManifest, SampleRow
from .network import Batch, NetworkConfig, bce_loss, forward, init_params, loss_and_grads

PARAMS_MAGIC = b"PPNET\x01"


@dataclass(frozen=True)
class TrainConfig:
    optimizer: str = "adam"                  # adam | rmsprop
    learning_rate: float = 1e-3
    weight_decay: float = 1e-5
    scheduler: str = "cyclical"              # cyclical | plateau | constant
    base_lr: float = 1e-6
    max_lr: float = 1e-3
    plateau_factor: float = 0.5
    plateau_patience: int = 3
    min_lr: float = 1e-6
    swa_start_epoch: int | None = None
    swa_lr: float = 1e-3
    n_checkpoints_to_average: int = 3
    epochs: int = 30
    batch_size: int = 256
    seed: int = 0

    def __post_init__(self):
        if self.optimizer not in ("adam", "rmsprop"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        if self.scheduler not in ("cyclical", "plateau", "constant"):
            raise ValueError(f"unknown scheduler {self.scheduler!r}")
        if not 0.0 < self.base_lr <= self.max_lr:
            raise ValueError("need 0 < base_lr <= max_lr")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")


class Adam:
    def __init__(self, params, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, params, grads, lr: float) -> None:
        self.t += 1
        b1c = 1.0 - self.beta1**self.t
        b2c = 1.0 - self.beta2**self.t
        for k in params:
            g = grads[k]
            self.m[k] = self.beta1 * self.m[k] + (1.0 - self.beta1) * g
            self.v[k] = self.beta2 * self.v[k] + (1.0 - self.beta2) * g * g
            params[k] -= lr * (self.m[k] / b1c) / (np.sqrt(self.v[k] / b2c) + self.eps)


class RMSProp:
    def __init__(self, params, rho: float = 0.9, eps: float = 1e-8):
        self.rho, self.eps = rho, eps
        self.v = {k: np.zeros_like(v) for k, v in params.items()}

    def step(self, params, grads, lr: float) -> None:
        for k in params:
            g = grads[k]
            self.v[k] = self.rho * self.v[k] + (1.0 - self.rho) * g * g
            params[k] -= lr * g / (np.sqrt(self.v[k]) + self.eps)


class CyclicalLR:
    """Triangular schedule stepped per batch; step_size batches per half-cycle."""

    def __init__(self, base_lr: float, max_lr: float, step_size: int):
        self.base_lr = base_lr
        self.max_lr = max_lr
        self.step_size = max(1, step_size)

    def lr(self, iteration: int) -> float:
        cycle = math.floor(1 + iteration / (2 * self.step_size))
        x = abs(iteration / self.step_size - 2 * cycle + 1)
        return self.base_lr + (self.max_lr - self.base_lr) * max(0.0, 1.0 - x)


class PlateauLR:
    """Halve the rate after ``patience`` epochs without validation improvement."""

    def __init__(self, initial_lr: float, factor: float, patience: int, min_lr: float):
        self.current = initial_lr
        self.factor = factor
        self.patience = patience
        self.min_lr = min_lr
        self.best = math.inf
        self.wait = 0

    def update(self, validation_loss: float) -> None:
        if validation_loss < self.best:
            self.best = validation_loss
            self.wait = 0
        else:
            self.wait += 1
            if self.wait > self.patience:
                self.current = max(self.current * self.factor, self.min_lr)
                self.wait = 0


def copy_params(params: dict[str, np.ndarray]) -> dict[str, np.ndarray]:
    return {k: v.copy() for k, v in params.items()}


def average_checkpoints(checkpoints, n: int) -> dict[str, np.ndarray]:
    """Convex combination of the n best checkpoints, weighted by 1/validation loss.

    Computed as base + sum(alpha_i * (w_i - base)) so that averaging identical
    checkpoints returns those weights bit-exactly.
    """
    if not checkpoints:
        raise ValueError("no checkpoints to average")
    ranked = sorted(range(len(checkpoints)), key=lambda i: (checkpoints[i][0], i))[: max(1, n)]
    inv = np.array([1.0 / max(checkpoints[i][0], 1e-12) for i in ranked])
    alphas = inv / inv.sum()
    base = checkpoints[ranked[0]][1]
    out = copy_params(base)
    for alpha, i in zip(alphas, ranked):
        for k in out:
            out[k] += alpha * (checkpoints[i][1][k] - base[k])
    return out


class SwaAccumulator:
    """Equal running average of the weights collected after the trigger epoch."""

    def __init__(self):
        self.sums: dict[str, np.ndarray] | None = None
        self.count = 0

    def collect(self, params: dict[str, np.ndarray]) -> None:
        if self.sums is None:
            self.sums = copy_params(params)
        else:
            for k in self.sums:
                self.sums[k] += params[k]
        self.count += 1

    def average(self) -> dict[str, np.ndarray]:
        if self.sums is None:
            raise ValueError("no weights collected")
        return {k: v / self.count for k, v in self.sums.items()}


def train_network(
    train_batch: Batch,
    val_batch: Batch,
    net_config: NetworkConfig,
    train_config: TrainConfig,
):
    """Train and return (final params, training log).

    The log holds one record per epoch plus a final record with the
    validation loss of the returned (averaged) parameters.
    """
    if len(train_batch) == 0 or len(val_batch) == 0:
        raise ValueError("train and validation splits must be non-empty")
    cfg = train_config
    rng = np.random.default_rng(cfg.seed)
    params = init_params(net_config, rng)
    optimizer = Adam(params) if cfg.optimizer == "adam" else RMSProp(params)

    n = len(train_batch)
    batches_per_epoch = math.ceil(n / cfg.batch_size)
    cyclical = CyclicalLR(cfg.base_lr, cfg.max_lr, batches_per_epoch) if cfg.scheduler == "cyclical" else None
    plateau = (
        PlateauLR(cfg.learning_rate, cfg.plateau_factor, cfg.plateau_patience, cfg.min_lr)
        if cfg.scheduler == "plateau"
        else None
    )
    swa = SwaAccumulator() if cfg.swa_start_epoch is not None else None

    log: list[dict] = []
    checkpoints: list[tuple[float, dict[str, np.ndarray]]] = []
    last_finite = copy_params(params)
    iteration = 0
    for epoch in range(cfg.epochs):
        in_swa = cfg.swa_start_epoch is not None and epoch >= cfg.swa_start_epoch
        perm = rng.permutation(n)
        loss_sum = 0.0
        lr = cfg.learning_rate
        for start in range(0, n, cfg.batch_size):
            idx = perm[start : start + cfg.batch_size]
            minibatch = train_batch.take(idx)
            if in_swa:
                lr = cfg.swa_lr
            elif cyclical is not None:
                lr = cyclical.lr(iteration)
            elif plateau is not None:
                lr = plateau.current
            loss, grads = loss_and_grads(minibatch, params, net_config)
            if not math.isfinite(loss):
                raise TrainingError(
                    f"training loss became non-finite at epoch {epoch}", last_params=last_finite, log=log
                )
            if cfg.weight_decay:
                for k in grads:
                    grads[k] = grads[k] + cfg.weight_decay * params[k]
            optimizer.step(params, grads, lr)
            loss_sum += loss * len(idx)
            iteration += 1
        train_loss = loss_sum / n
        val_loss = bce_loss(forward(val_batch, params, net_config), val_batch.labels)
        if not math.isfinite(val_loss):
            raise TrainingError(
                f"validation loss became non-finite at epoch {epoch}", last_params=last_finite, log=log
            )
        last_finite = copy_params(params)
        checkpoints.append((val_loss, last_finite))
        if swa is not None and in_swa:
            swa.collect(params)
        if plateau is not None:
            plateau.update(val_loss)
        log.append(
            {
                "epoch": epoch,
                "lr": lr,
                "train_loss": train_loss,
                "validation_loss": val_loss,
                "swa": in_swa,
            }
        )

    if swa is not None and swa.count > 0:
        final = swa.average()
        selection = "swa"
    else:
        final = average_checkpoints(checkpoints, cfg.n_checkpoints_to_average)
        selection = "checkpoint_average"
    final_val = bce_loss(forward(val_batch, final, net_config), val_batch.labels)
    log.append({"event": "final", "selection": selection, "validation_loss": final_val})
    return final, log


# --- sample/batch plumbing --------------------------------------------------

def samples_to_batch(samples: list[SampleRow], with_labels: bool = True) -> Batch:
    if not samples:
        raise ValueError("cannot build a batch from zero samples")
    return Batch(
        static_cat=np.stack([s.static_categorical for s in samples]),
        temporal_cat=np.stack([s.temporal_categorical for s in samples]),
        static_cont=np.stack([s.static_continuous for s in samples]),
        temporal_cont=np.stack([s.temporal_continuous for s in samples]),
        labels=np.array([float(s.label) for s in samples]) if with_labels else None,
    )


@dataclass
class Normalizer:
    """Per-feature standardization fitted on the training split."""

    static_mean: np.ndarray
    static_std: np.ndarray
    temporal_mean: np.ndarray
    temporal_std: np.ndarray

    @classmethod
    def fit(cls, batch: Batch) -> "Normalizer":
        def stats(arr, axes):
            mean = arr.mean(axis=axes)
            std = arr.std(axis=axes)
            std = np.where(std < 1e-12, 1.0, std)
            return mean, std

        s_mean, s_std = stats(batch.static_cont, 0)
        t_mean, t_std = stats(batch.temporal_cont, (0, 1))
        return cls(s_mean, s_std, t_mean, t_std)

    def apply(self, batch: Batch) -> Batch:
        return Batch(
            static_cat=batch.static_cat,
            temporal_cat=batch.temporal_cat,
            static_cont=(batch.static_cont - self.static_mean) / self.static_std,
            temporal_cont=(batch.temporal_cont - self.temporal_mean) / self.temporal_std,
            labels=batch.labels,
        )

    def to_dict(self) -> dict:
        return {
            "static_mean": self.static_mean.tolist(),
            "static_std": self.static_std.tolist(),
            "temporal_mean": self.temporal_mean.tolist(),
            "temporal_std": self.temporal_std.tolist(),
        }

    @classmethod
    def from_dict(cls, raw: dict) -> "Normalizer":
        return cls(
            static_mean=np.asarray(raw["static_mean"], dtype=np.float64),
            static_std=np.asarray(raw["static_std"], dtype=np.float64),
            temporal_mean=np.asarray(raw["temporal_mean"], dtype=np.float64),
            temporal_std=np.asarray(raw["temporal_std"], dtype=np.float64),
        )


class TemporalConvNetClassifier(BaseEstimator):
    """Purchase-probability model over four sample feature groups.

    fit() expects sample rows produced by FeatureBuilder plus the feature
    manifest; predict_proba() returns one probability per sample, mapping
    unseen categorical levels to the reserved unknown index.
    """

    def __init__(
        self,
        kernel_size: int = 2,
        dilations: tuple[int, ...] = (1, 2, 4),
        channels: tuple[int, ...] = (16, 16, 16),
        fc_widths: tuple[int, ...] = (64, 32, 16),
        optimizer: str = "adam",
        learning_rate: float = 1e-3,
        weight_decay: float = 1e-5,
        scheduler: str = "cyclical",
        base_lr: float = 1e-6,
        max_lr: float = 1e-3,
        plateau_factor: float = 0.5,
        plateau_patience: int = 3,
        min_lr: float = 1e-6,
        swa_start_epoch: int | None = None,
        swa_lr: float = 1e-3,
        n_checkpoints_to_average: int = 3,
        epochs: int = 30,
        batch_size: int = 256,
        seed: int = 0,
    ):
        self.kernel_size = kernel_size
        self.dilations = dilations
        self.channels = channels
        self.fc_widths = fc_widths
        self.optimizer = optimizer
        self.learning_rate = learning_rate
        self.weight_decay = weight_decay
        self.scheduler = scheduler
        self.base_lr = base_lr
        self.max_lr = max_lr
        self.plateau_factor = plateau_factor
        self.plateau_patience = plateau_patience
        self.min_lr = min_lr
        self.swa_start_epoch = swa_start_epoch
        self.swa_lr = swa_lr
        self.n_checkpoints_to_average = n_checkpoints_to_average
        self.epochs = epochs
        self.batch_size = batch_size
        self.seed = seed

    def _train_config(self) -> TrainConfig:
        return TrainConfig(
            optimizer=self.optimizer,
            learning_rate=self.learning_rate,
            weight_decay=self.weight_decay,
            scheduler=self.scheduler,
            base_lr=self.base_lr,
            max_lr=self.max_lr,
            plateau_factor=self.plateau_factor,
            plateau_patience=self.plateau_patience,
            min_lr=self.min_lr,
            swa_start_epoch=self.swa_start_epoch,
            swa_lr=self.swa_lr,
            n_checkpoints_to_average=self.n_checkpoints_to_average,
            epochs=self.epochs,
            batch_size=self.batch_size,
            seed=self.seed,
        )

    def _network_config(self, manifest: FeatureManifest) -> NetworkConfig:
        return NetworkConfig(
            static_vocab_sizes=tuple(v for _, v in manifest.static_cat_fields),
            temporal_vocab_sizes=tuple(v for _, v in manifest.temporal_cat_fields),
            static_cont_dim=len(manifest.static_cont_names),
            temporal_cont_dim=len(manifest.temporal_cont_names),
            n_lags=manifest.n_lags,
            kernel_size=self.kernel_size,
            dilations=tuple(self.dilations),
            channels=tuple(self.channels),
            fc_widths=tuple(self.fc_widths),
        )

    def fit(self, train_samples: list[SampleRow], val_samples: list[SampleRow], manifest: FeatureManifest):
        self.network_config_ = self._network_config(manifest)
        train_raw = samples_to_batch(train_samples)
        self.normalizer_ = Normalizer.fit(train_raw)
        train_batch = self.normalizer_.apply(train_raw)
        val_batch = self.normalizer_.apply(samples_to_batch(val_samples))
        self.params_, self.log_ = train_network(train_batch, val_batch, self.network_config_, self._train_config())
        self.final_validation_loss_ = self.log_[-1]["validation_loss"]
        return self

    def predict_proba(self, samples: list[SampleRow]) -> np.ndarray:
        if not hasattr(self, "params_"):
            raise NotFittedError("classifier must be fitted before predicting")
        batch = self.normalizer_.apply(samples_to_batch(samples, with_labels=False))
        return forward(batch, self.params_, self.network_config_)


# --- parameter serialization -------------------------------------------------

def save_network(path, params: dict[str, np.ndarray], config: NetworkConfig, extra: dict | None = None) -> None:
    """Versioned binary: magic, JSON header (config + array manifest), raw arrays.

    Written byte-for-byte deterministically so stage re-runs reproduce the file.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    arrays = [(name, np.ascontiguousarray(params[name], dtype=np.float64)) for name in sorted(params)]
    header = json.dumps(
        {
            "version": 1,
            "config": config.to_dict(),
            "arrays": [{"name": name, "shape": list(arr.shape)} for name, arr in arrays],
            "extra": extra or {},
        },
        sort_keys=True,
    ).encode("utf-8")
    with path.open("wb") as handle:
        handle.write(PARAMS_MAGIC)
        handle.write(struct.pack(">Q", len(header)))
        handle.write(header)
        for _, arr in arrays:
            handle.write(arr.tobytes())


def load_network(path):
    path = Path(path)
    with path.open("rb") as handle:
        magic = handle.read(len(PARAMS_MAGIC))
        if magic != PARAMS_MAGIC:
            raise ValueError(f"{path} is not a network parameter file")
        (header_len,) = struct.unpack(">Q", handle.read(8))
        header = json.loads(handle.read(header_len).decode("utf-8"))
        params = {}
        for entry in header["arrays"]:
            shape = tuple(entry["shape"])
            count = int(np.prod(shape)) if shape else 1
            data = np.frombuffer(handle.read(count * 8), dtype=np.float64)
            params[entry["name"]] = data.reshape(shape).copy()
    return params, NetworkConfig.from_dict(header["config"]), header["extra"]
