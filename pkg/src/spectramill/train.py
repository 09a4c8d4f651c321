"""Mini-batch training of the pipeline networks.

An objective maps a batch prediction ``(B, T, L)`` and the matching dataset
slice to ``(value, d value / d pred)``. The loop adds L1/L2 weight penalties,
steps Adam, logs per-epoch train loss and held-out exam MSE, and keeps the
state with the lowest exam MSE (the initialization included).
"""

from __future__ import annotations

import csv
import math
from collections import OrderedDict
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, List, Optional, Tuple

import numpy as np

from . import losses as L
from .datasets import Dataset
from .nn.model import Model
from .nn.optim import Adam, AdamConfig, weight_penalty
from .synth import Task


class DivergenceError(RuntimeError):
    def __init__(self, epoch: int, batch: int, value: float) -> None:
        super().__init__(f"loss became non-finite ({value}) at epoch {epoch}, batch {batch}")
        self.epoch = epoch
        self.batch = batch


class Objective:
    name = "objective"

    def start_epoch(self, epoch: int, n_epochs: int) -> None:
        pass

    def __call__(self, pred: np.ndarray, batch: Dataset) -> Tuple[float, np.ndarray]:
        raise NotImplementedError

    def describe(self) -> dict:
        return {"name": self.name}


class MseObjective(Objective):
    name = "mse"

    def __call__(self, pred, batch):
        return L.mse_and_grad(pred, batch.targets)


class WeightedMseObjective(Objective):
    name = "weighted_mse"

    def __init__(self, schedule: Optional[L.WeightedMseSchedule] = None) -> None:
        self.schedule = schedule or L.WeightedMseSchedule()

    def __call__(self, pred, batch):
        v, g = L.weighted_mse_and_grad(pred[:, 0], batch.targets[:, 0], batch.noise_std, self.schedule)
        return v, g[:, None]

    def describe(self) -> dict:
        return {"name": self.name, "table": {str(k): v for k, v in self.schedule.table.items()}}


class BaselineObjective(Objective):
    name = "baseline_composite"

    def __init__(self, params: Optional[L.BaselineLossParams] = None) -> None:
        self.params = params or L.BaselineLossParams()

    def __call__(self, pred, batch):
        v, g = L.baseline_composite_and_grad(
            pred[:, 0], batch.targets[:, 0], list(batch.raman_like), batch.shift_windows, self.params
        )
        return v, g[:, None]

    def describe(self) -> dict:
        return {"name": self.name, **asdict(self.params)}


class ViperObjective(Objective):
    """ViPeR with the vicinity threshold annealed once per epoch."""

    name = "viper"

    def __init__(self, params: Optional[L.ViperParams] = None) -> None:
        self.base = params or L.ViperParams()
        self.params = self.base

    def start_epoch(self, epoch, n_epochs):
        self.params = self.base.annealed(epoch, n_epochs)

    def __call__(self, pred, batch):
        return L.viper_loss_and_grad(pred, batch.targets, self.params)

    def describe(self) -> dict:
        return {"name": self.name, **asdict(self.base)}


class CeMseObjective(Objective):
    name = "ce_mse"

    def __call__(self, pred, batch):
        return L.ce_mse_and_grad(pred, batch.targets)


class PeakFitObjective(Objective):
    """Dynamic MSE/MCE/MQE on both fitter outputs, apex mask shared."""

    name = "dynamic_peakfit"

    def __init__(self, params: Optional[L.PeakFitLossParams] = None) -> None:
        self.params = params or L.PeakFitLossParams()

    def __call__(self, pred, batch):
        apex = np.broadcast_to(batch.apex[:, None, :], pred.shape)
        return L.dynamic_peakfit_and_grad(pred, batch.targets, apex, self.params)

    def describe(self) -> dict:
        return {"name": self.name, **asdict(self.params)}


OBJECTIVES = {
    "mse": MseObjective,
    "weighted_mse": WeightedMseObjective,
    "baseline_composite": BaselineObjective,
    "viper": ViperObjective,
    "ce_mse": CeMseObjective,
    "dynamic_peakfit": PeakFitObjective,
}

DEFAULT_OBJECTIVE = {
    Task.DENOISER: "weighted_mse",
    Task.BASELINE_REMOVER: "baseline_composite",
    Task.PEAK_LOCATOR: "viper",
    Task.PEAK_FITTER: "dynamic_peakfit",
}


def objective_for(task: Task, name: Optional[str] = None) -> Objective:
    return OBJECTIVES[name or DEFAULT_OBJECTIVE[Task.parse(task)]]()


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 30
    batch_size: int = 32
    seed: int = 0
    adam: AdamConfig = field(default_factory=AdamConfig)
    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        d["adam"] = AdamConfig(**d.get("adam", {}))
        return cls(**d)


@dataclass
class EpochLog:
    epoch: int
    train_loss: float
    exam_mse: float
    score: float  # selection score, lower is better; equals exam_mse unless a scorer is given


@dataclass
class TrainResult:
    best_state: "OrderedDict[str, np.ndarray]"
    best_epoch: int
    log: List[EpochLog]

    def write_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["epoch", "train_loss", "exam_mse", "score"])
            for e in self.log:
                w.writerow([e.epoch, repr(e.train_loss), repr(e.exam_mse), repr(e.score)])


def exam_mse(model: Model, ds: Dataset, batch_size: int = 64) -> float:
    """Plain MSE over the exam set, whatever loss trained the model."""
    pred = model.predict(ds.inputs, batch_size)
    return float(np.mean((pred - ds.targets) ** 2))


def train(
    model: Model,
    data: Dataset,
    objective: Objective,
    cfg: TrainConfig = TrainConfig(),
    exam: Optional[Dataset] = None,
    on_epoch: Optional[Callable[[EpochLog], None]] = None,
    scorer: Optional[Callable[[Model, Dataset], float]] = None,
) -> TrainResult:
    """Train in place; the model is left holding the best state.

    The best state minimizes ``scorer(model, exam)``, which defaults to the
    exam MSE. Locators want a task metric here: a near-zero score map has a
    low MSE without finding any peak.
    """
    if len(data) == 0:
        raise ValueError("training set is empty")
    if model.spec.name is not data.task:
        raise ValueError(f"{model.spec.name.value} model cannot train on {data.task.value} data")
    exam = exam if exam is not None else data
    opt = Adam(model.parameters(), cfg.adam)
    rng = np.random.default_rng(np.random.SeedSequence([int(cfg.seed), 0x5A0F]))
    mse0 = exam_mse(model, exam)
    best = mse0 if scorer is None else scorer(model, exam)
    best_state, best_epoch = model.state(), 0
    log = [EpochLog(0, math.nan, mse0, best)]
    n = len(data)
    for epoch in range(1, cfg.epochs + 1):
        objective.start_epoch(epoch - 1, cfg.epochs)
        order = rng.permutation(n)
        total, seen = 0.0, 0
        for b, start in enumerate(range(0, n, cfg.batch_size)):
            idx = order[start : start + cfg.batch_size]
            if len(idx) < 2:  # batch norm needs two samples
                continue
            batch = data.subset(idx)
            opt.zero_grad()
            out = model.forward(batch.inputs, training=True)
            value, grad = objective(out.data.astype(np.float64), batch)
            out.backward(grad.astype(model.dtype))
            value += weight_penalty(opt.params, model.spec.l1, model.spec.l2)
            if not math.isfinite(value):
                raise DivergenceError(epoch, b, value)
            opt.step()
            total += value * len(idx)
            seen += len(idx)
        mse = exam_mse(model, exam)
        if not math.isfinite(mse):
            raise DivergenceError(epoch, -1, mse)
        score = mse if scorer is None else scorer(model, exam)
        entry = EpochLog(epoch, total / max(seen, 1), mse, score)
        log.append(entry)
        if on_epoch is not None:
            on_epoch(entry)
        if score < best:
            best, best_state, best_epoch = score, model.state(), epoch
    model.load_state(best_state)
    return TrainResult(best_state, best_epoch, log)
