"""Losses, metrics, scheduled sampling, the optimisation loop and evaluation."""
from __future__ import annotations

import copy
import json
import logging
import math
from dataclasses import dataclass, field, asdict

import numpy as np
import torch

from .data import NormStats, WindowedDataset
from .errors import ShapeError, TrainingDiverged

log = logging.getLogger(__name__)

REPORT_HORIZONS = (3, 6, 9, 12)


@dataclass
class CurriculumConfig:
    decay_constant: float = 2000.0


@dataclass
class TrainConfig:
    batch_size: int = 64
    max_epochs: int = 300
    patience: int = 20
    lr: float = 0.01
    lr_decay: float = 0.1
    lr_milestones: list = field(default_factory=lambda: [50, 100])
    seed: int = 0
    grad_clip: float | None = 5.0
    curriculum: CurriculumConfig = field(default_factory=CurriculumConfig)

    def __post_init__(self):
        if isinstance(self.curriculum, dict):
            self.curriculum = CurriculumConfig(**self.curriculum)
        if self.patience >= self.max_epochs:
            raise ValueError("patience must be smaller than max_epochs")
        if self.lr < 0:
            raise ValueError("lr must be non-negative")
        if self.batch_size < 1:
            raise ValueError("batch_size must be positive")
        if self.curriculum.decay_constant <= 0:
            raise ValueError("curriculum decay constant must be positive")

    def to_dict(self):
        return asdict(self)


def _as_array(x):
    return x.detach().cpu().numpy() if torch.is_tensor(x) else np.asarray(x, dtype=np.float64)


def mae(pred, target):
    pred, target = _as_array(pred), _as_array(target)
    if pred.shape != target.shape:
        raise ShapeError(f"shape mismatch {pred.shape} vs {target.shape}")
    if pred.size == 0:
        raise ValueError("mae of empty input")
    return float(np.mean(np.abs(pred - target)))


def rmse(pred, target):
    pred, target = _as_array(pred), _as_array(target)
    if pred.shape != target.shape:
        raise ShapeError(f"shape mismatch {pred.shape} vs {target.shape}")
    if pred.size == 0:
        raise ValueError("rmse of empty input")
    return float(np.sqrt(np.mean((pred - target) ** 2)))


def mae_loss(pred, target):
    return (pred - target).abs().mean()


def sampling_prob(iteration, tau=2000.0):
    """Inverse-sigmoid decay ``tau / (tau + exp(iteration / tau))``."""
    if iteration < 0 or tau <= 0:
        raise ValueError("iteration must be >= 0 and tau > 0")
    z = iteration / tau
    if z > 700:
        return 0.0
    return tau / (tau + math.exp(z))


def lr_at_epoch(epoch, config: TrainConfig):
    """Learning rate in effect during 0-based ``epoch``."""
    passed = sum(1 for m in config.lr_milestones if epoch >= m)
    return config.lr * config.lr_decay**passed


def _batches(n, batch_size, rng=None):
    order = np.arange(n) if rng is None else rng.permutation(n)
    for i in range(0, n, batch_size):
        yield order[i:i + batch_size]


def _tensor(a):
    return torch.as_tensor(a, dtype=torch.float64)


class ErrorAccumulator:
    """Running absolute / squared error sums per horizon step, so totals do
    not depend on how the data was batched."""

    def __init__(self, horizon):
        self.abs = np.zeros(horizon)
        self.sq = np.zeros(horizon)
        self.count = np.zeros(horizon, dtype=np.int64)

    def update(self, pred, target):
        err = _as_array(pred) - _as_array(target)  # (B, horizon, n)
        self.abs += np.abs(err).sum(axis=(0, 2))
        self.sq += (err**2).sum(axis=(0, 2))
        self.count += err.shape[0] * err.shape[2]

    def mae(self, step=None):
        if step is None:
            return float(self.abs.sum() / self.count.sum())
        return float(self.abs[step - 1] / self.count[step - 1])

    def rmse(self, step=None):
        if step is None:
            return float(np.sqrt(self.sq.sum() / self.count.sum()))
        return float(np.sqrt(self.sq[step - 1] / self.count[step - 1]))


def validation_mae(model, dataset: WindowedDataset, batch_size=64):
    acc = ErrorAccumulator(dataset.targets.shape[1])
    was_training = model.training
    model.eval()
    with torch.no_grad():
        for idx in _batches(len(dataset), batch_size):
            acc.update(model(_tensor(dataset.inputs[idx])), dataset.targets[idx])
    model.train(was_training)
    return acc.mae()


@dataclass
class TrainResult:
    best_state: dict
    best_epoch: int
    best_val_mae: float
    step_losses: list
    stopped_early: bool


def train(model, train_set: WindowedDataset, val_set: WindowedDataset, config: TrainConfig,
          on_epoch=None):
    """Fit ``model`` with Adam on the MAE loss in normalised units.

    Scheduled sampling feeds decoder ground truth with probability
    ``sampling_prob(global_step)``. The learning rate is multiplied by
    ``lr_decay`` at each milestone epoch, and training stops once validation
    MAE fails to improve for ``patience`` consecutive epochs. ``model`` is
    left holding the best-validation weights.

    Returns ``(TrainResult, history)``; ``history`` has one dict per epoch.
    """
    if len(train_set) == 0 or len(val_set) == 0:
        raise ValueError("training and validation sets must be non-empty")
    torch.manual_seed(config.seed)
    rng = np.random.default_rng(config.seed)
    gen = torch.Generator().manual_seed(config.seed)
    params = [p for p in model.parameters() if p.requires_grad]
    optimizer = torch.optim.Adam(params, lr=config.lr)
    tau = config.curriculum.decay_constant

    history, step_losses = [], []
    best_val, best_epoch, best_state = math.inf, -1, copy.deepcopy(model.state_dict())
    since_best = 0
    step = 0
    stopped_early = False
    model.train()
    for epoch in range(config.max_epochs):
        lr = lr_at_epoch(epoch, config)
        for group in optimizer.param_groups:
            group["lr"] = lr
        total, count = 0.0, 0
        p = sampling_prob(step, tau)
        for idx in _batches(len(train_set), config.batch_size, rng):
            x = _tensor(train_set.inputs[idx])
            y = _tensor(train_set.targets[idx])
            p = sampling_prob(step, tau)
            optimizer.zero_grad()
            loss = mae_loss(model(x, y, sampling_prob=p, generator=gen), y)
            value = loss.item()
            if not math.isfinite(value):
                raise TrainingDiverged(f"non-finite training loss at epoch {epoch + 1}, step {step}")
            loss.backward()
            if config.grad_clip:
                torch.nn.utils.clip_grad_norm_(params, config.grad_clip)
            optimizer.step()
            step_losses.append(value)
            total += value * len(idx)
            count += len(idx)
            step += 1
        train_mae = total / count
        val = validation_mae(model, val_set, config.batch_size)
        record = {"epoch": epoch + 1, "train_mae": train_mae, "val_mae": val, "lr": lr,
                  "sampling_prob": p}
        history.append(record)
        log.info("epoch %d train_mae %.6f val_mae %.6f lr %g", epoch + 1, train_mae, val, lr)
        if on_epoch is not None:
            on_epoch(record)
        if val < best_val:
            best_val, best_epoch = val, epoch + 1
            best_state = copy.deepcopy(model.state_dict())
            since_best = 0
        else:
            since_best += 1
            if since_best >= config.patience:
                stopped_early = True
                break

    model.load_state_dict(best_state)
    return TrainResult(best_state, best_epoch, best_val, step_losses, stopped_early), history


def write_history(history, path):
    with open(path, "w") as fh:
        for rec in history:
            fh.write(json.dumps(rec) + "\n")


def read_history(path):
    with open(path) as fh:
        return [json.loads(line) for line in fh if line.strip()]


@dataclass
class EvalReport:
    """MAE/RMSE in meters per reported horizon plus the all-step averages."""

    horizons: dict  # step -> {"mae": .., "rmse": ..}
    average: dict

    def to_dict(self):
        return {"horizons": {str(k): v for k, v in self.horizons.items()}, "average": self.average}

    @classmethod
    def from_dict(cls, d):
        return cls({int(k): v for k, v in d["horizons"].items()}, d["average"])

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2) + "\n"

    def table(self):
        lines = [f"{'horizon':>8} {'MAE':>10} {'RMSE':>10}"]
        for k, v in self.horizons.items():
            lines.append(f"{k:>7}d {v['mae']:>10.6f} {v['rmse']:>10.6f}")
        return "\n".join(lines)


def evaluate(predictor, dataset: WindowedDataset, stats: NormStats, batch_size=64,
             horizons=REPORT_HORIZONS, num_nodes=None):
    """Score ``predictor`` on normalised windows, reporting errors in meters.

    ``predictor`` is the model or any callable mapping a ``(B, T_in, n, F)``
    tensor to ``(B, horizon, n)`` normalised predictions. Decoding always runs
    without teacher forcing.
    """
    n = dataset.targets.shape[2]
    if num_nodes is None:
        num_nodes = getattr(getattr(predictor, "config", None), "num_nodes", n)
    if num_nodes != n:
        raise ShapeError(f"checkpoint has {num_nodes} stations, dataset has {n}")
    horizon = dataset.targets.shape[1]
    acc = ErrorAccumulator(horizon)
    was_training = getattr(predictor, "training", False)
    if was_training:
        predictor.eval()
    with torch.no_grad():
        for idx in _batches(len(dataset), batch_size):
            pred = _as_array(predictor(_tensor(dataset.inputs[idx])))
            acc.update(stats.invert(pred), stats.invert(dataset.targets[idx]))
    if was_training:
        predictor.train()
    per = {k: {"mae": acc.mae(k), "rmse": acc.rmse(k)} for k in horizons if k <= horizon}
    return EvalReport(per, {"mae": acc.mae(), "rmse": acc.rmse()})


def persistence_predictor(horizon):
    """Repeat the last observed (normalised) value for every future step."""

    def predict(inputs):
        return inputs[:, -1:, :, 0].expand(-1, horizon, -1)

    return predict
