"""Trial-level splits and mini-batch training with early stopping."""

from __future__ import annotations

import hashlib
import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Sequence

import numpy as np

from magloc.data.trial import BuildingSet, Trial
from magloc.errors import ConfigError, DataError, NumericalError
from magloc.evalkit.metrics import mae
from magloc.features import ChannelStats, WindowSet
from magloc.magnet import Model, loss_and_grads
from magloc.numkit import AdamState, adam_step

log = logging.getLogger(__name__)

SPLITS = ("train", "val", "test")


@dataclass(frozen=True)
class SplitSpec:
    ratios: tuple[float, float, float] = (0.7, 0.15, 0.15)
    seed: int = 0
    assignment: dict[str, str] | None = None

    def __post_init__(self):
        object.__setattr__(self, "ratios", tuple(float(r) for r in self.ratios))
        if len(self.ratios) != 3 or any(r < 0 for r in self.ratios) or not math.isclose(sum(self.ratios), 1.0, abs_tol=1e-9):
            raise ConfigError(f"split ratios must be three non-negative numbers summing to 1, got {self.ratios}")
        if self.assignment is not None and any(v not in SPLITS for v in self.assignment.values()):
            raise ConfigError(f"explicit assignment values must be one of {SPLITS}")

    @classmethod
    def from_dict(cls, d: dict) -> "SplitSpec":
        unknown = set(d) - {f.name for f in fields(cls)}
        if unknown:
            raise ConfigError(f"unknown split keys: {sorted(unknown)}")
        return cls(**d)

    def to_dict(self) -> dict:
        return {"ratios": list(self.ratios), "seed": self.seed, "assignment": self.assignment}


def largest_remainder(n: int, ratios: Sequence[float]) -> list[int]:
    """Integer sizes summing to ``n``; leftovers go to the largest remainders (ties: earlier split)."""
    quotas = [n * r for r in ratios]
    sizes = [math.floor(q) for q in quotas]
    order = sorted(range(len(ratios)), key=lambda i: (-(quotas[i] - sizes[i]), i))
    for i in order[: n - sum(sizes)]:
        sizes[i] += 1
    return sizes


def split(trials, spec: SplitSpec) -> tuple[list[Trial], list[Trial], list[Trial]]:
    """Assign whole trials to train / val / test; windows never straddle splits."""
    trials = list(trials.trials if isinstance(trials, BuildingSet) else trials)
    if not trials:
        raise DataError("empty dataset: no trials to split")
    if spec.assignment is not None:
        parts = {s: [] for s in SPLITS}
        for tr in trials:
            if tr.trial_id not in spec.assignment:
                raise ConfigError(f"explicit assignment does not list trial {tr.trial_id}")
            parts[spec.assignment[tr.trial_id]].append(tr)
        return parts["train"], parts["val"], parts["test"]
    if len(trials) < 3:
        raise DataError(f"need >= 3 trials to split, got {len(trials)}")
    trials = sorted(trials, key=lambda tr: (tr.building, tr.trial_id))
    perm = np.random.default_rng(spec.seed).permutation(len(trials))
    shuffled = [trials[i] for i in perm]
    sizes = largest_remainder(len(trials), spec.ratios)
    for name, size in zip(SPLITS, sizes):
        if size == 0:
            raise DataError(f"split {name!r} receives zero trials; adjust the ratios {spec.ratios}")
    a, b = sizes[0], sizes[0] + sizes[1]
    return shuffled[:a], shuffled[a:b], shuffled[b:]


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-3
    batch_size: int = 64
    max_epochs: int = 200
    patience: int = 15
    seed: int = 0
    stride: int = 5

    def __post_init__(self):
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.patience < 1:
            raise ConfigError("patience must be >= 1")
        if self.max_epochs < 1:
            raise ConfigError("max_epochs must be >= 1")
        if self.stride < 1:
            raise ConfigError("stride must be >= 1")
        if not self.lr > 0:
            raise ConfigError("lr must be > 0")

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        unknown = set(d) - {f.name for f in fields(cls)}
        if unknown:
            raise ConfigError(f"unknown train config keys: {sorted(unknown)}")
        return cls(**d)

    def to_dict(self) -> dict:
        return asdict(self) | {"loss": "mse"}


@dataclass
class EarlyStopping:
    """Tracks the best validation score; ``step`` returns True when training should stop."""

    patience: int
    best: float = math.inf
    best_epoch: int = 0
    stale: int = 0

    def step(self, epoch: int, score: float) -> bool:
        if score < self.best:
            self.best, self.best_epoch, self.stale = score, epoch, 0
        else:
            self.stale += 1
        return self.stale >= self.patience


@dataclass
class RunLog:
    epochs: list[dict] = field(default_factory=list)
    best_epoch: int = 0
    best_val_mae: float = math.inf
    config: dict = field(default_factory=dict)
    dataset_digest: str = ""
    stopped_early: bool = False
    wall_time: float = field(default=0.0, compare=False)

    def summary(self) -> dict:
        return {
            "best_epoch": self.best_epoch,
            "best_val_mae": self.best_val_mae,
            "epochs_run": len(self.epochs),
            "stopped_early": self.stopped_early,
            "config": self.config,
            "dataset_digest": self.dataset_digest,
        }

    def write(self, directory) -> None:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        with open(directory / "runlog.jsonl", "w", encoding="utf-8") as fh:
            for rec in self.epochs:
                fh.write(json.dumps(rec, sort_keys=True) + "\n")
        (directory / "train_summary.json").write_text(json.dumps(self.summary(), indent=2, sort_keys=True))


def dataset_digest(*sets: WindowSet) -> str:
    h = hashlib.sha256()
    for s in sets:
        h.update(s.digest().encode())
    return h.hexdigest()


def fit_target_scaling(y: np.ndarray) -> tuple[tuple[float, float], float]:
    """Per-axis mean and one isotropic scale, so scaled MSE stays proportional to metric MSE."""
    offset = y.mean(axis=0)
    scale = float(np.sqrt(np.mean(np.sum((y - offset) ** 2, axis=1)) / 2)) or 1.0
    return (float(offset[0]), float(offset[1])), scale


def _param_norms(model: Model) -> dict[str, float]:
    return {n: float(np.linalg.norm(p.data)) for n, p in model.named_parameters()}


def train(model: Model, train_windows: WindowSet, val_windows: WindowSet, config: TrainConfig, log_dir=None) -> tuple[Model, RunLog]:
    """Adam on MSE of scaled targets; keeps the parameters with the best validation MAE.

    Channel statistics and target scaling are fitted on ``train_windows``
    only and stored on the returned model.
    """
    if len(train_windows) == 0:
        raise DataError("no training windows")
    if len(val_windows) == 0:
        raise DataError("no validation windows")
    start = time.perf_counter()
    model.mode = train_windows.mode
    model.stats = ChannelStats.fit(train_windows)
    model.target_offset, model.target_scale = fit_target_scaling(train_windows.y)
    x_train = model.stats.apply(train_windows.x)
    y_train = (train_windows.y - np.asarray(model.target_offset)) / model.target_scale

    rng = np.random.default_rng(config.seed)
    state = AdamState(lr=config.lr)
    stopper = EarlyStopping(config.patience)
    runlog = RunLog(config=config.to_dict(), dataset_digest=dataset_digest(train_windows, val_windows))
    best_state = model.state()
    n = len(x_train)
    for epoch in range(1, config.max_epochs + 1):
        order = rng.permutation(n)
        total = 0.0
        for bi, s in enumerate(range(0, n, config.batch_size)):
            idx = order[s : s + config.batch_size]
            loss, grads = loss_and_grads(model, x_train[idx], y_train[idx])
            if not math.isfinite(loss):
                raise NumericalError(f"non-finite loss at epoch {epoch} batch {bi}; parameter norms {_param_norms(model)}")
            adam_step(model.parameters(), grads, state)
            total += loss * len(idx)
        val_mae = mae(model.predict(val_windows.x), val_windows.y)
        stop = stopper.step(epoch, val_mae)
        if stopper.best_epoch == epoch:
            best_state = model.state()
        rec = {"epoch": epoch, "train_loss": total / n, "val_mae": val_mae, "best_val_mae": stopper.best}
        runlog.epochs.append(rec)
        log.info("epoch %d train_loss %.5f val_mae %.4f", epoch, rec["train_loss"], val_mae)
        if stop:
            runlog.stopped_early = True
            break
    model.load_state(best_state)
    runlog.best_epoch = stopper.best_epoch
    runlog.best_val_mae = stopper.best
    runlog.wall_time = time.perf_counter() - start
    model.meta["training"] = {"epoch": runlog.best_epoch, "best_val_mae": runlog.best_val_mae, "seed": config.seed}
    if log_dir is not None:
        runlog.write(log_dir)
    return model, runlog
