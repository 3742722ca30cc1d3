"""Adam, mini-batch training with early stopping and plateau decay, and evaluation."""

from __future__ import annotations

import csv
import io
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from ..dataset import (
    ScalerParams,
    feature_matrix,
    split,
    standardize,
    targets,
)
from ..errors import DivergenceError, EvaluationError, InvalidArgumentError
from .layers import Sequential
from .models import MLP_TARGETS, Surrogate, build_cnn, build_mlp


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    patience: int = 15
    plateau_factor: float = 0.5
    plateau_patience: int = 5
    min_lr: float = 1e-5
    max_epochs: int = 500
    batch_size: int = 32
    ratios: tuple = (0.8, 0.2)
    seed: int = 0

    def __post_init__(self):
        if self.lr <= 0 or self.min_lr <= 0:
            raise InvalidArgumentError("learning rates must be positive")
        if self.patience <= 0 or self.plateau_patience <= 0:
            raise InvalidArgumentError("patience values must be positive")
        if self.max_epochs <= 0 or self.batch_size <= 0:
            raise InvalidArgumentError("max_epochs and batch_size must be positive")
        if not 0 < self.plateau_factor < 1:
            raise InvalidArgumentError("plateau_factor must lie in (0, 1)")

    @classmethod
    def mlp(cls, **overrides):
        return replace(cls(), **overrides)

    @classmethod
    def cnn(cls, **overrides):
        return replace(cls(max_epochs=200, batch_size=64, ratios=(0.7, 0.15, 0.15)), **overrides)

    def to_dict(self):
        return {**asdict(self), "ratios": list(self.ratios)}


@dataclass
class TrainReport:
    train_loss: list = field(default_factory=list)
    val_loss: list = field(default_factory=list)
    lr: list = field(default_factory=list)
    best_epoch: int = 0  # 1-based
    stop_epoch: int = 0
    lr_events: list = field(default_factory=list)  # (epoch, new lr)
    test_metrics: dict = field(default_factory=dict)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["epoch", "train_loss", "val_loss", "lr"])
        for i, (tr, va, lr) in enumerate(zip(self.train_loss, self.val_loss, self.lr)):
            w.writerow([i + 1, "%.9e" % tr, "%.9e" % va, "%.9e" % lr])
        return buf.getvalue()

    def write_csv(self, path):
        Path(path).write_text(self.to_csv())


class Adam:
    def __init__(self, params: Sequence[np.ndarray], lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = list(params)
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.t = 0
        self.m = [np.zeros_like(p) for p in self.params]
        self.v = [np.zeros_like(p) for p in self.params]

    def step(self, grads: Sequence[np.ndarray]):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1, c2 = 1 - b1**self.t, 1 - b2**self.t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def mse(pred, target) -> float:
    return float(np.mean((pred - target) ** 2))


def loss_and_grad(net: Sequential, x, y, train=True, rng=None):
    """Forward, MSE and backward on one batch; gradients are left on the layers."""
    out = net.forward(x, train, rng)
    diff = out - y
    net.backward(2.0 * diff / diff.size)
    return float(np.mean(diff**2))


def _infer_loss(net, x, y, batch=256):
    total = 0.0
    for i in range(0, len(x), batch):
        out = net.forward(x[i : i + batch], train=False)
        total += float(np.sum((out - y[i : i + batch]) ** 2))
    return total / y.size


def fit(net: Sequential, x_train, y_train, x_val, y_val, config: TrainConfig) -> TrainReport:
    """Mini-batch Adam on MSE; restores the weights of the best validation epoch."""
    if len(x_train) == 0 or len(x_val) == 0:
        raise InvalidArgumentError("training and validation sets must be non-empty")
    seeds = np.random.SeedSequence(config.seed).spawn(2)
    shuffle_rng, dropout_rng = np.random.default_rng(seeds[0]), np.random.default_rng(seeds[1])
    params = [p for _, p in net.parameters()]
    opt = Adam(params, config.lr, config.beta1, config.beta2, config.eps)
    report = TrainReport()
    best_val, best_weights = np.inf, net.get_weights()
    since_best = since_plateau = 0
    n = len(x_train)
    for epoch in range(1, config.max_epochs + 1):
        order = shuffle_rng.permutation(n)
        total = 0.0
        for b, start in enumerate(range(0, n, config.batch_size)):
            idx = order[start : start + config.batch_size]
            loss = loss_and_grad(net, x_train[idx], y_train[idx], True, dropout_rng)
            if not np.isfinite(loss):
                raise DivergenceError(f"non-finite loss at epoch {epoch}, batch {b}", epoch=epoch, batch=b)
            opt.step([g for _, g in net.gradients()])
            total += loss * len(idx)
        val = _infer_loss(net, x_val, y_val)
        if not np.isfinite(val):
            raise DivergenceError(f"non-finite validation loss at epoch {epoch}", epoch=epoch)
        report.train_loss.append(total / n)
        report.val_loss.append(val)
        report.lr.append(opt.lr)
        report.stop_epoch = epoch
        if val < best_val:
            best_val, best_weights, report.best_epoch = val, net.get_weights(), epoch
            since_best = since_plateau = 0
        else:
            since_best += 1
            since_plateau += 1
        if since_best >= config.patience:
            break
        if since_plateau >= config.plateau_patience and opt.lr > config.min_lr:
            opt.lr = max(opt.lr * config.plateau_factor, config.min_lr)
            report.lr_events.append((epoch, opt.lr))
            since_plateau = 0
    net.set_weights(best_weights)
    return report


# ---------------------------------------------------------------- evaluation


def metrics(pred, target, names: Sequence[str]) -> dict:
    pred = np.asarray(pred, dtype=float)
    target = np.asarray(target, dtype=float)
    if target.size == 0:
        raise EvaluationError("cannot evaluate on an empty record set")
    pred = pred.reshape(len(target), -1)
    target = target.reshape(len(target), -1)
    err = pred - target
    return {
        name: {"MAE": float(np.mean(np.abs(err[:, k]))), "MSE": float(np.mean(err[:, k] ** 2))}
        for k, name in enumerate(names)
    }


def evaluate(model, records) -> dict:
    """MAE and MSE per target in target units; ``model`` needs ``predict_records``."""
    records = list(records)
    if not records:
        raise EvaluationError("cannot evaluate on an empty record set")
    return metrics(model.predict_records(records), targets(records), MLP_TARGETS)


def evaluate_maps(model: Surrogate, records, maps) -> dict:
    """Pixel MAE/MSE of predicted maps plus the largest target value."""
    records = list(records)
    maps = np.asarray(maps, dtype=float)
    if not records or maps.size == 0:
        raise EvaluationError("cannot evaluate on an empty record set")
    pred = model.predict_records(records)
    err = pred - maps
    return {"MAE": float(np.mean(np.abs(err))), "MSE": float(np.mean(err**2)), "max": float(maps.max())}


# ---------------------------------------------------------------- pipelines


def _usable(records):
    return [r for r in records if np.isfinite(r.absorbed_power) and np.isfinite(r.absorbed_flux)]


def _partitions(n, config: TrainConfig):
    """(train, val, test) index arrays.  Two ratios mean (train, test); validation is carved from train."""
    if len(config.ratios) == 3:
        return split(n, config.ratios, config.seed)
    if len(config.ratios) != 2:
        raise InvalidArgumentError("ratios must have 2 or 3 entries")
    train, test = split(n, config.ratios, config.seed)
    inner = split(len(train), config.ratios, config.seed + 1)
    return train[inner[0]], train[inner[1]], test


def train_mlp(records, config: TrainConfig | None = None, hidden=(128, 128, 128), dropout=0.2):
    """Train the (thickness, wavelength, material) -> (absorbed power, absorbed flux) MLP."""
    config = config or TrainConfig.mlp()
    recs = _usable(records)
    tr, va, te = _partitions(len(recs), config)
    train_recs = [recs[i] for i in tr]
    x_tr, x_scaler = feature_matrix(train_recs)
    y_tr, y_scaler = standardize(targets(train_recs))
    x_all, _ = feature_matrix(recs, x_scaler)
    y_all, _ = standardize(targets(recs), y_scaler)
    net = build_mlp(hidden, dropout=dropout, seed=config.seed)
    report = fit(net, x_tr, y_tr, x_all[va], y_all[va], config)
    info = {
        "architecture": {"hidden": list(hidden), "dropout": dropout},
        "train_config": config.to_dict(),
        "seed": config.seed,
        "split_sizes": [len(tr), len(va), len(te)],
    }
    model = Surrogate("mlp", net, x_scaler, y_scaler, info=info)
    report.test_metrics = evaluate(model, [recs[i] for i in te])
    model.info["test_metrics"] = report.test_metrics
    return model, report


def train_cnn(records, maps, config: TrainConfig | None = None, coarse=(8, 6), channels=(16, 13, 8, 8), dropout=0.3):
    """Train the parameters -> absorbed-power-density map CNN.  ``records[i]`` describes ``maps[i]``."""
    config = config or TrainConfig.cnn()
    maps = np.asarray(maps, dtype=float)
    if len(records) != len(maps):
        raise InvalidArgumentError(f"{len(records)} records for {len(maps)} maps")
    expected = (coarse[0] * 2 ** (len(channels) - 1), coarse[1] * 2 ** (len(channels) - 1))
    if maps.shape[1:] != expected:
        raise InvalidArgumentError(f"maps have shape {maps.shape[1:]}, the decoder emits {expected}")
    tr, va, te = _partitions(len(records), config)
    x_tr, x_scaler = feature_matrix([records[i] for i in tr])
    x_all, _ = feature_matrix(records, x_scaler)
    pixels = maps[tr].ravel()
    y_scaler = ScalerParams((float(pixels.mean()),), (float(pixels.std()) or 1.0,))
    y_all = ((maps - y_scaler.mean[0]) / y_scaler.std[0])[:, None]
    net = build_cnn(coarse, channels, dropout=dropout, seed=config.seed)
    report = fit(net, x_tr, y_all[tr], x_all[va], y_all[va], config)
    info = {
        "architecture": {"coarse": list(coarse), "channels": list(channels), "dropout": dropout},
        "train_config": config.to_dict(),
        "seed": config.seed,
        "split_sizes": [len(tr), len(va), len(te)],
    }
    model = Surrogate("cnn", net, x_scaler, y_scaler, info=info)
    report.test_metrics = evaluate_maps(model, [records[i] for i in te], maps[te])
    model.info["test_metrics"] = report.test_metrics
    return model, report
