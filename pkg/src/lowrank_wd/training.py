"""Mini-batch SGD with weight decay on the two-layer network.

The V-decay strength of a batch is the batch mean of a per-sample function
``g(x, y)``; U and b use fixed coefficients.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ._backend import kernels
from .data import Dataset
from .linalg import frobenius_norm, stable_rank
from .network import NetGradient, TwoLayerNet, save_checkpoint


@dataclass(frozen=True)
class ConstantG:
    """``g(x, y) = mu_v`` for every sample."""

    mu_v: float

    def __post_init__(self):
        if self.mu_v < 0:
            raise ValueError("constant g needs mu_v >= 0")

    def __call__(self, X, y) -> np.ndarray:
        return np.full(np.asarray(y).reshape(-1).shape[0], float(self.mu_v))

    def describe(self) -> str:
        return f"constant({self.mu_v!r})"


@dataclass(frozen=True)
class AffineY2G:
    """``g(x, y) = a + c*y**2``."""

    a: float
    c: float = 0.0

    def __post_init__(self):
        if self.a <= 0 or self.c < 0:
            raise ValueError("affine_y2 needs a > 0 and c >= 0")

    def __call__(self, X, y) -> np.ndarray:
        y = np.asarray(y, dtype=np.float64).reshape(-1)
        return self.a + self.c * y * y

    def describe(self) -> str:
        return f"affine_y2({self.a!r},{self.c!r})"


GSpec = ConstantG | AffineY2G


def g_values(gspec: GSpec, X, y) -> np.ndarray:
    g = gspec(X, y)
    if np.any(g < 0) or not np.all(np.isfinite(g)):
        raise ValueError("decay function g must be finite and non-negative on the data")
    return g


@dataclass
class TrainConfig:
    batch_size: int = 16
    epochs: int = 2000
    lr0: float = 1e-4
    decay_factor: float = 0.95
    decay_period: int = 200
    mu_u: float = 1e-4
    mu_b: float = 1e-4
    gspec: GSpec = field(default_factory=lambda: ConstantG(1.0))
    seed: int = 0
    drop_last: bool = True

    def validate(self, n_samples: int | None = None) -> None:
        if self.batch_size < 2:
            raise ValueError("batch_size must be at least 2")
        if n_samples is not None and not self.batch_size < n_samples:
            raise ValueError(
                f"batch_size {self.batch_size} must be smaller than the dataset ({n_samples})")
        if self.epochs < 0:
            raise ValueError("epochs must be non-negative")
        if self.lr0 < 0:
            raise ValueError("lr0 must be non-negative")
        if not 0 < self.decay_factor <= 1:
            raise ValueError("decay_factor must be in (0, 1]")
        if self.decay_period < 1:
            raise ValueError("decay_period must be at least 1")
        if self.mu_u < 0 or self.mu_b < 0:
            raise ValueError("mu_u and mu_b must be non-negative")
        if not self.drop_last:
            raise ValueError("only drop_last=True batching is supported")


def lr_at(epoch: int, config: TrainConfig) -> float:
    if epoch < 0:
        raise ValueError("epoch must be non-negative")
    return config.lr0 * config.decay_factor ** (epoch // config.decay_period)


def _batch_arrays(net: TwoLayerNet, X, y):
    X = np.ascontiguousarray(np.asarray(X, dtype=np.float64).reshape(-1, net.input_dim))
    y = np.ascontiguousarray(np.asarray(y, dtype=np.float64).reshape(-1))
    if X.shape[0] != y.shape[0] or X.shape[0] == 0:
        raise ValueError("batch must be non-empty with one target per input row")
    return X, y


def batch_gradient(net: TwoLayerNet, X, y, gspec: GSpec, mu_u: float = 0.0,
                   mu_b: float = 0.0) -> NetGradient:
    X, y = _batch_arrays(net, X, y)
    g = np.ascontiguousarray(g_values(gspec, X, y))
    du, dv, db = kernels.batch_gradient(
        np.ascontiguousarray(net.U[0]), np.ascontiguousarray(net.V), net.b, X, y, g,
        float(mu_u), float(mu_b))
    return NetGradient(du.reshape(1, -1), dv, db)


def batch_loss(net: TwoLayerNet, X, y, gspec: GSpec, mu_u: float = 0.0,
               mu_b: float = 0.0) -> float:
    X, y = _batch_arrays(net, X, y)
    g = g_values(gspec, X, y)
    resid = net.predict(X) - y
    return (0.5 * float(np.mean(resid * resid))
            + 0.5 * mu_u * float(np.sum(net.U ** 2))
            + 0.5 * float(np.mean(g)) * float(np.sum(net.V ** 2))
            + 0.5 * mu_b * float(np.sum(net.b ** 2)))


def mse(net: TwoLayerNet, dataset: Dataset) -> float:
    resid = net.predict(dataset.X) - dataset.y
    return float(np.mean(resid * resid))


@dataclass
class EpochStats:
    epoch: int
    lr: float
    grad_norms: np.ndarray

    @property
    def grad_max(self) -> float:
        return float(self.grad_norms.max()) if self.grad_norms.size else 0.0

    @property
    def grad_mean(self) -> float:
        return float(self.grad_norms.mean()) if self.grad_norms.size else 0.0


def epoch_batches(n_samples: int, batch_size: int, rng: np.random.Generator) -> np.ndarray:
    """Shuffled sample order truncated to whole batches; reshape to (-1, B) for the batches."""
    if n_samples < batch_size:
        raise ValueError(f"dataset of {n_samples} samples is smaller than batch size {batch_size}")
    nb = n_samples // batch_size
    return rng.permutation(n_samples)[:nb * batch_size].astype(np.int_)


def run_epoch(net: TwoLayerNet, dataset: Dataset, config: TrainConfig, epoch: int,
              rng: np.random.Generator, g: np.ndarray | None = None):
    """One pass of SGD over a fresh shuffle. ``net`` is updated in place and returned."""
    order = epoch_batches(len(dataset), config.batch_size, rng)
    if g is None:
        g = g_values(config.gspec, dataset.X, dataset.y)
    lr = lr_at(epoch, config)
    norms = kernels.sgd_epoch(
        net.U[0], net.V, net.b,
        np.ascontiguousarray(dataset.X), np.ascontiguousarray(dataset.y),
        np.ascontiguousarray(g, dtype=np.float64),
        order, config.batch_size, lr, float(config.mu_u), float(config.mu_b))
    return net, EpochStats(epoch, lr, np.asarray(norms))


LOG_COLUMNS = ["epoch", "lr", "train_mse", "test_mse", "stable_rank", "v_fro",
               "grad_max", "grad_mean"]


@dataclass
class EpochRecord:
    epoch: int
    lr: float
    train_mse: float
    test_mse: float
    stable_rank: float
    v_fro: float
    grad_max: float
    grad_mean: float


@dataclass
class TrainLog:
    records: list[EpochRecord] = field(default_factory=list)
    checkpoint: str | None = None
    final_grad_norms: np.ndarray | None = None

    def __len__(self):
        return len(self.records)

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.records])

    def write_csv(self, path) -> None:
        with Path(path).open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(LOG_COLUMNS)
            for r in self.records:
                w.writerow([r.epoch] + [repr(float(getattr(r, c))) for c in LOG_COLUMNS[1:]])


def _safe_stable_rank(V: np.ndarray) -> float:
    return stable_rank(V) if np.any(V) else math.nan


def train(init: TwoLayerNet, train_set: Dataset, test_set: Dataset | None,
          config: TrainConfig, checkpoint_path=None, progress=None):
    """Run ``config.epochs`` epochs from a copy of ``init``; returns (net, TrainLog)."""
    config.validate(len(train_set))
    net = init.copy()
    net.U = np.ascontiguousarray(net.U)
    net.V = np.ascontiguousarray(net.V)
    log = TrainLog()
    rng = np.random.default_rng(config.seed)
    g = g_values(config.gspec, train_set.X, train_set.y)
    for epoch in range(config.epochs):
        net, stats = run_epoch(net, train_set, config, epoch, rng, g)
        if not (np.all(np.isfinite(net.V)) and np.all(np.isfinite(net.U))):
            raise FloatingPointError(f"training diverged at epoch {epoch}")
        log.records.append(EpochRecord(
            epoch=epoch,
            lr=stats.lr,
            train_mse=mse(net, train_set),
            test_mse=mse(net, test_set) if test_set is not None else math.nan,
            stable_rank=_safe_stable_rank(net.V),
            v_fro=frobenius_norm(net.V),
            grad_max=stats.grad_max,
            grad_mean=stats.grad_mean,
        ))
        log.final_grad_norms = stats.grad_norms
        if progress is not None:
            progress(log.records[-1])
    if checkpoint_path is not None:
        save_checkpoint(net, checkpoint_path)
        log.checkpoint = str(checkpoint_path)
    return net, log
