"""Peak-accuracy metrics, threshold/window sweeps, ablation studies and
comparison against expert annotations."""

from __future__ import annotations

import csv
import enum
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from numpy.typing import NDArray

from . import losses as L
from .datasets import Dataset, build_dataset
from .nn.model import Model, build_model
from .nn.optim import AdamConfig
from .nn.spec import preset
from .pipeline import PeakReport, nms
from .synth import GenConfig, Task
from .train import (
    CeMseObjective,
    MseObjective,
    Objective,
    PeakFitObjective,
    TrainConfig,
    ViperObjective,
    WeightedMseObjective,
    exam_mse,
    train,
)

EXAM_INDEX_OFFSET = 1 << 32
LOW_NOISE_STD = 0.01


def peak_accuracy(predicted: Sequence[int], truth: Sequence[int], match_tol: int = 1) -> float:
    return match_count(predicted, truth, match_tol) / _nonempty(truth)


def _nonempty(truth: Sequence[int]) -> int:
    if len(truth) == 0:
        raise ValueError("peak accuracy needs at least one ground-truth peak")
    return len(truth)


def match_count(predicted: Sequence[int], truth: Sequence[int], match_tol: int = 1) -> int:
    """Greedy one-to-one matching in order of ascending distance (ties: lower indices first)."""
    pairs = sorted(
        (abs(int(p) - int(t)), int(p), int(t))
        for p in predicted
        for t in truth
        if abs(int(p) - int(t)) <= match_tol
    )
    used_p, used_t = set(), set()
    for _, p, t in pairs:
        if p not in used_p and t not in used_t:
            used_p.add(p)
            used_t.add(t)
    return len(used_t)


def dataset_accuracy(scores: NDArray[np.float64], ds: Dataset, threshold: float, window: int,
                     match_tol: int = 1, diameter: bool = False) -> float:
    """Matched peaks over all ground-truth peaks in the set."""
    hits = total = 0
    for i in range(len(ds)):
        truth = ds.peak_indices(i)
        hits += match_count(nms(scores[i], threshold, window, diameter), truth, match_tol)
        total += len(truth)
    return hits / _nonempty(range(total))


@dataclass
class SweepGrid:
    thresholds: Tuple[float, ...] = (0.3, 0.5, 0.8)
    windows: Tuple[int, ...] = (6, 12, 18)
    cells: NDArray[np.float64] = field(default_factory=lambda: np.zeros((0, 0)))

    def at(self, threshold: float, window: int) -> float:
        return float(self.cells[self.thresholds.index(threshold), self.windows.index(window)])

    def write_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["threshold", "window", "accuracy"])
            for i, t in enumerate(self.thresholds):
                for j, win in enumerate(self.windows):
                    w.writerow([t, win, repr(float(self.cells[i, j]))])


def sweep(locator: Model | NDArray[np.float64], exam: Dataset,
          thresholds: Sequence[float] = (0.3, 0.5, 0.8), windows: Sequence[int] = (6, 12, 18),
          match_tol: int = 1, diameter: bool = False) -> SweepGrid:
    """Accuracy for every (threshold, window) pair. ``locator`` may be precomputed scores."""
    if isinstance(locator, Model):
        if locator.spec.name is not Task.PEAK_LOCATOR:
            raise ValueError("sweeps need a peak locator")
        scores = locator.predict(exam.inputs)[:, 0]
    else:
        scores = np.asarray(locator)
    cells = np.array(
        [[dataset_accuracy(scores, exam, t, w, match_tol, diameter) for w in windows] for t in thresholds]
    )
    return SweepGrid(tuple(thresholds), tuple(windows), cells)


# ---------------------------------------------------------------------------
# ablations


class Study(str, enum.Enum):
    VIPER_VS_CE_MSE = "viper_vs_ce_mse"
    WEIGHTED_VS_PLAIN_MSE = "weighted_vs_plain_mse"
    DYNAMIC_VS_PLAIN_PEAKFIT = "dynamic_vs_plain_peakfit"
    INPUT_CHANNELS = "input_channels"


@dataclass(frozen=True)
class AblationConfig:
    n_train: int = 400
    n_exam: int = 200
    epochs: int = 20
    seeds: Tuple[int, ...] = (0, 1, 2, 3, 4)
    length: int = 128
    max_filters: int = 8
    batch_size: int = 32
    lr: Optional[float] = None  # None: the study's own step size
    jobs: int = 1
    # F_p weights grow like L**2; alpha = 1 saturates the sigmoid at toy scale
    viper_alpha: float = 1e-4

    def to_dict(self) -> dict:
        d = asdict(self)
        d["seeds"] = list(self.seeds)
        return d


def toy_gen_config(task: Task, length: int, seed: int, **overrides) -> GenConfig:
    """Generator settings scaled down to a short toy axis."""
    base = dict(
        length=length,
        n_peaks_range=(1, 5),
        fwhm_range=(2.0, max(3.0, 60.0 * length / 555)),
        seed=seed,
    )
    base.update(overrides)
    return GenConfig.for_task(task, **base)


@dataclass
class Arm:
    name: str
    objective: Callable[[AblationConfig], Objective]
    channels: Tuple[int, ...] = ()


@dataclass
class StudyPlan:
    task: Task
    arms: Tuple[Arm, Arm]  # favoured arm first
    metric_name: str
    higher_is_better: bool
    strict: bool
    lr: float = 2e-3
    gen_overrides: Dict = field(default_factory=dict)


def _viper(cfg: AblationConfig) -> ViperObjective:
    return ViperObjective(L.ViperParams(alpha=cfg.viper_alpha))


def _fixed(factory: Callable[[], Objective]) -> Callable[[AblationConfig], Objective]:
    return lambda cfg: factory()


def _locator_accuracy(model: Model, exam: Dataset, cfg: AblationConfig) -> float:
    return sweep(model, exam, (0.5,), (6,)).at(0.5, 6)


def _low_noise_mse(model: Model, exam: Dataset, cfg: AblationConfig) -> float:
    return exam_mse(model, exam.subset(exam.noise_std <= LOW_NOISE_STD))


def _fwhm_mse(model: Model, exam: Dataset, cfg: AblationConfig) -> float:
    """FWHM error at peak apexes, the only points a FWHM is ever read from."""
    pred = model.predict(exam.inputs)[:, 1]
    return float(np.mean((pred[exam.apex] - exam.targets[:, 1][exam.apex]) ** 2))


def _viper_validation(model: Model, exam: Dataset, cfg: AblationConfig) -> float:
    p = L.ViperParams(alpha=cfg.viper_alpha)
    return L.viper_loss(model.predict(exam.inputs)[:, 0], exam.targets[:, 0], p.annealed(1, 1))


METRICS: Dict[Study, Callable[[Model, Dataset, AblationConfig], float]] = {
    Study.VIPER_VS_CE_MSE: _locator_accuracy,
    Study.WEIGHTED_VS_PLAIN_MSE: _low_noise_mse,
    Study.DYNAMIC_VS_PLAIN_PEAKFIT: _fwhm_mse,
    Study.INPUT_CHANNELS: _viper_validation,
}

PLANS: Dict[Study, StudyPlan] = {
    Study.VIPER_VS_CE_MSE: StudyPlan(
        Task.PEAK_LOCATOR,
        (Arm("viper", _viper), Arm("ce_mse", _fixed(CeMseObjective))),
        "accuracy@(0.5,6)",
        higher_is_better=True,
        strict=False,
        lr=5e-4,
    ),
    Study.WEIGHTED_VS_PLAIN_MSE: StudyPlan(
        Task.DENOISER,
        (Arm("weighted_mse", _fixed(WeightedMseObjective)), Arm("plain_mse", _fixed(MseObjective))),
        "low-noise exam MSE",
        higher_is_better=False,
        strict=True,
    ),
    Study.DYNAMIC_VS_PLAIN_PEAKFIT: StudyPlan(
        Task.PEAK_FITTER,
        (Arm("dynamic", _fixed(PeakFitObjective)), Arm("plain_mse", _fixed(MseObjective))),
        "apex FWHM exam MSE",
        higher_is_better=False,
        strict=True,
    ),
    Study.INPUT_CHANNELS: StudyPlan(
        Task.PEAK_LOCATOR,
        (Arm("raw+d1+d2", _viper, (0, 1, 2)), Arm("raw", _viper, (0,))),
        "validation ViPeR loss",
        higher_is_better=False,
        strict=False,
        lr=5e-4,
        gen_overrides=dict(slope_coeffs=(0.0,), gauss_stds=(0.0,), beta1=None, shift_probs=(0.0, 0.0)),
    ),
}


@dataclass
class AblationRow:
    seed: int
    favored: float
    other: float
    favored_wins: bool
    train_digest: str
    exam_digest: str


@dataclass
class AblationReport:
    study: Study
    arms: Tuple[str, str]
    metric: str
    rows: List[AblationRow]
    config: Dict
    logs: Dict[str, List[List[float]]] = field(default_factory=dict)

    @property
    def wins(self) -> int:
        return sum(r.favored_wins for r in self.rows)

    def summary(self) -> str:
        return f"{self.study.value}: {self.arms[0]} wins {self.wins}/{len(self.rows)} seeds on {self.metric}"

    def write_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["seed", self.arms[0], self.arms[1], "favored_wins", "train_digest", "exam_digest"])
            for r in self.rows:
                w.writerow([r.seed, repr(r.favored), repr(r.other), int(r.favored_wins), r.train_digest, r.exam_digest])


def _wins(a: float, b: float, plan: StudyPlan) -> bool:
    if plan.higher_is_better:
        return a > b if plan.strict else a >= b
    return a < b if plan.strict else a <= b


def study_data(study: Study, cfg: AblationConfig, seed: int) -> Tuple[Dataset, Dataset]:
    plan = PLANS[study]
    gen = toy_gen_config(plan.task, cfg.length, seed, **plan.gen_overrides)
    train_ds = build_dataset(gen, cfg.n_train, 0, cfg.jobs)
    exam_ds = build_dataset(gen, cfg.n_exam, EXAM_INDEX_OFFSET, cfg.jobs)
    return train_ds, exam_ds


def run_arm(study: Study, arm: Arm, train_ds: Dataset, exam_ds: Dataset, cfg: AblationConfig, seed: int):
    plan = PLANS[study]
    spec = preset(plan.task).capped(cfg.max_filters)
    if arm.channels:
        spec = replace(spec, input_channels=len(arm.channels), channels=arm.channels)
    model = build_model(spec, seed=seed)
    lr = plan.lr if cfg.lr is None else cfg.lr
    tcfg = TrainConfig(cfg.epochs, cfg.batch_size, seed, AdamConfig(lr=lr))
    metric = METRICS[study]
    sign = -1.0 if plan.higher_is_better else 1.0
    # both arms keep their best exam epoch under the study's own metric
    result = train(model, train_ds, arm.objective(cfg), tcfg, exam=exam_ds,
                   scorer=lambda m, ds: sign * metric(m, ds, cfg))
    return metric(model, exam_ds, cfg), result


def ablation(study: Study | str, cfg: AblationConfig = AblationConfig(),
             progress: Optional[Callable[[str], None]] = None) -> AblationReport:
    """Train both arms on identical data for every seed and tally wins of the favoured arm."""
    study = Study(study)
    plan = PLANS[study]
    rows: List[AblationRow] = []
    logs: Dict[str, List[List[float]]] = {}
    for seed in cfg.seeds:
        train_ds, exam_ds = study_data(study, cfg, seed)
        metrics = []
        digests = []
        for arm in plan.arms:
            digests.append((train_ds.digest(), exam_ds.digest()))
            value, result = run_arm(study, arm, train_ds, exam_ds, cfg, seed)
            metrics.append(value)
            logs[f"{arm.name}/seed{seed}"] = [[e.epoch, e.exam_mse] for e in result.log]
        if digests[0] != digests[1]:
            raise AssertionError("ablation arms consumed different datasets")
        row = AblationRow(seed, metrics[0], metrics[1], _wins(metrics[0], metrics[1], plan), *digests[0])
        rows.append(row)
        if progress is not None:
            progress(f"seed {seed}: {plan.arms[0].name}={row.favored:.6g} {plan.arms[1].name}={row.other:.6g}")
    return AblationReport(study, (plan.arms[0].name, plan.arms[1].name), plan.metric_name, rows, cfg.to_dict(), logs)


# ---------------------------------------------------------------------------
# expert annotations


@dataclass(frozen=True)
class AnnotatedPeak:
    position: float
    intensity: float
    fwhm: float


@dataclass
class PeakComparison:
    expert: AnnotatedPeak
    model_position: float
    intensity_error: Optional[float]  # None when the expert value is 0
    fwhm_error: Optional[float]
    flags: List[str] = field(default_factory=list)


@dataclass
class AnnotationComparison:
    matched: List[PeakComparison]
    unmatched_expert: List[AnnotatedPeak]
    unmatched_model: List[float]

    def write_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["expert_position", "model_position", "intensity_error", "fwhm_error", "flags"])
            for m in self.matched:
                w.writerow([m.expert.position, m.model_position, _fmt(m.intensity_error), _fmt(m.fwhm_error),
                            ";".join(m.flags)])
            for e in self.unmatched_expert:
                w.writerow([e.position, "", "", "", "unmatched_expert"])
            for p in self.unmatched_model:
                w.writerow(["", p, "", "", "unmatched_model"])


def _fmt(x: Optional[float]) -> str:
    return "" if x is None else repr(x)


def normalized_error(model: float, expert: float) -> Optional[float]:
    """|model - expert| / |expert|, or None (undefined) when the expert value is 0."""
    if expert == 0:
        return None
    return abs(model - expert) / abs(expert)


def read_annotation_csv(path: str | Path) -> List[AnnotatedPeak]:
    out = []
    with open(path, newline="") as fh:
        for row in csv.reader(fh):
            if len(row) < 3:
                continue
            try:
                out.append(AnnotatedPeak(float(row[0]), float(row[1]), float(row[2])))
            except ValueError:
                continue  # header
    return out


def compare_to_annotation(report: PeakReport | Sequence[Tuple[float, float, float]],
                          annotation: Sequence[AnnotatedPeak] | str | Path) -> AnnotationComparison:
    """Match every expert peak to the nearest unused model peak by position.

    ``report`` may be a PeakReport or (position, intensity, fwhm) triples.
    """
    if isinstance(annotation, (str, Path)):
        annotation = read_annotation_csv(annotation)
    if len(annotation) == 0:
        raise ValueError("annotation lists no peaks")
    if isinstance(report, PeakReport):
        model = [(p.position, p.intensity, p.fwhm) for p in report.peaks]
    else:
        model = [tuple(map(float, p)) for p in report]
    pairs = sorted(
        (abs(m[0] - e.position), ei, mi) for ei, e in enumerate(annotation) for mi, m in enumerate(model)
    )
    used_e, used_m = {}, set()
    for _, ei, mi in pairs:
        if ei not in used_e and mi not in used_m:
            used_e[ei] = mi
            used_m.add(mi)
    matched = []
    for ei, e in enumerate(annotation):
        if ei not in used_e:
            continue
        pos, inten, width = model[used_e[ei]]
        ie, fe = normalized_error(inten, e.intensity), normalized_error(width, e.fwhm)
        flags = [name for name, v in (("intensity_undefined", ie), ("fwhm_undefined", fe)) if v is None]
        matched.append(PeakComparison(e, pos, ie, fe, flags))
    unmatched_e = [e for ei, e in enumerate(annotation) if ei not in used_e]
    unmatched_m = [model[mi][0] for mi in range(len(model)) if mi not in used_m]
    return AnnotationComparison(matched, unmatched_e, unmatched_m)
