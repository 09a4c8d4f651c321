"""Desk-scale pipeline training on a short axis with narrow networks."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np
from numpy.typing import NDArray

from .datasets import Dataset, build_dataset, fwhm_scale_for
from .evaluation import EXAM_INDEX_OFFSET, sweep, toy_gen_config
from .nn.model import Model, build_model
from .nn.optim import AdamConfig
from .nn.spec import preset
from .core import Spectrum
from .pipeline import DEFAULT_THRESHOLD, DEFAULT_WINDOW, Pipeline
from .synth import Task, gen_sample
from .losses import BaselineLossParams, ViperParams
from .train import BaselineObjective, Objective, TrainConfig, TrainResult, ViperObjective, objective_for, train


@dataclass(frozen=True)
class ToyRecipe:
    length: int = 128
    max_filters: int = 8
    n_train: int = 480
    n_exam: int = 96
    epochs: int = 12
    lr: float = 2e-3
    batch_size: int = 8
    seed: int = 0
    # the easy regime: few peaks, mild drift, little noise
    n_peaks_range: tuple = (1, 3)
    # loose clusters can spread across the short axis
    max_gaps: tuple = (2.0, 40.0)
    slope_coeffs: tuple = (0.1, 0.5, 1.0)
    denoiser_stds: tuple = (0.0, 0.0005, 0.001, 0.005)
    # the reconstruction stages converge slowest and gate everything downstream
    epochs_by_task: Dict[str, int] = field(default_factory=lambda: {"denoiser": 24, "baseline_remover": 24})
    # squared-error ViPeR on a sigmoid can collapse to all-zero scores at 2e-3
    lr_by_task: Dict[str, float] = field(
        default_factory=lambda: {"denoiser": 8e-3, "baseline_remover": 4e-3, "peak_locator": 1e-3}
    )
    viper_alpha: float = 1e-4
    viper_gamma: float = 4.0  # stronger pull toward 1 near peaks lifts recall on small peaks
    # summed TV penalties outweigh the MSE on a short axis and flatten the baseline
    baseline_tv_reduction: str = "mean"

    def objective(self, task: Task) -> Objective:
        if task is Task.PEAK_LOCATOR:
            return ViperObjective(ViperParams(alpha=self.viper_alpha, gamma=self.viper_gamma))
        if task is Task.BASELINE_REMOVER:
            return BaselineObjective(BaselineLossParams(tv_reduction=self.baseline_tv_reduction))
        return objective_for(task)

    def gen_config(self, task: Task, seed_offset: int = 0):
        overrides = dict(n_peaks_range=self.n_peaks_range, slope_coeffs=self.slope_coeffs, max_gaps=self.max_gaps)
        if task is Task.DENOISER:
            overrides["gauss_stds"] = self.denoiser_stds
        return toy_gen_config(task, self.length, self.seed + seed_offset, **overrides)


def train_toy(task: Task, recipe: ToyRecipe = ToyRecipe(), log: Optional[Callable[[str], None]] = None):
    gen = recipe.gen_config(task, seed_offset=list(Task).index(task))
    data = build_dataset(gen, recipe.n_train)
    exam = build_dataset(gen, recipe.n_exam, EXAM_INDEX_OFFSET)
    model = build_model(preset(task).capped(recipe.max_filters), seed=recipe.seed)
    epochs = recipe.epochs_by_task.get(task.value, recipe.epochs)
    lr = recipe.lr_by_task.get(task.value, recipe.lr)
    cfg = TrainConfig(epochs, recipe.batch_size, recipe.seed, AdamConfig(lr=lr))
    # a near-zero score map has a low exam MSE, so locators keep their most accurate epoch
    scorer = (lambda m, ds: -sweep(m, ds, (DEFAULT_THRESHOLD,), (DEFAULT_WINDOW,)).cells[0, 0]) \
        if task is Task.PEAK_LOCATOR else None
    result = train(model, data, recipe.objective(task), cfg, exam=exam, scorer=scorer)
    if log is not None:
        log(f"{task.value}: exam MSE {result.log[0].exam_mse:.4g} -> {min(e.exam_mse for e in result.log):.4g}")
    return model, result, gen


def train_toy_pipeline(recipe: ToyRecipe = ToyRecipe(), log: Optional[Callable[[str], None]] = None) -> Pipeline:
    models: Dict[Task, Model] = {}
    gens = {}
    for task in Task:
        models[task], _, gens[task] = train_toy(task, recipe, log)
    return Pipeline(
        models[Task.DENOISER],
        models[Task.BASELINE_REMOVER],
        models[Task.PEAK_LOCATOR],
        models[Task.PEAK_FITTER],
        fwhm_scale=fwhm_scale_for(gens[Task.PEAK_FITTER]),
        length=recipe.length,
    )


@dataclass(frozen=True)
class EasyCase:
    raw: Spectrum
    centers: NDArray[np.int64]
    intensities: NDArray[np.float64]  # in units of the normalized raw spectrum


def easy_exam(recipe: ToyRecipe = ToyRecipe(), n: int = 200, min_gap: int = 15,
              max_std: float = 0.001, max_slope: float = 1.0) -> List[EasyCase]:
    """Held-out spectra with at most three peaks spaced ``min_gap`` or more apart.

    Noise is limited to ``max_std`` and drift to ``max_slope``; untweaked so
    the labelled intensities describe the drawn peaks exactly.
    """
    gen = replace(
        recipe.gen_config(Task.PEAK_FITTER),
        n_peaks_range=(1, 3),
        gauss_stds=tuple(s for s in (0.0, 0.0005, 0.001) if s <= max_std),
        slope_coeffs=tuple(s for s in recipe.slope_coeffs if s <= max_slope),
        tweak_enabled=False,
        shadow_enabled=False,
        tight_prob=0.0,
        max_gaps=(2.0, 60.0),
    )
    cases: List[EasyCase] = []
    index = EXAM_INDEX_OFFSET
    while len(cases) < n:
        rec = gen_sample(gen, index)
        index += 1
        centers = np.flatnonzero(rec.labels.location > 0.5)
        if centers.size > 1 and np.diff(centers).min() < min_gap:
            continue
        cases.append(EasyCase(Spectrum(rec.input.raw), centers, rec.labels.intensity[centers]))
    return cases


@dataclass(frozen=True)
class EasyScore:
    accuracy: float
    max_position_error: int
    median_intensity_error: float
    n_truth: int
    n_matched: int


def score_easy(pipe: Pipeline, cases: Sequence[EasyCase], threshold: float = DEFAULT_THRESHOLD,
               window: int = DEFAULT_WINDOW, match_tol: int = 1) -> EasyScore:
    """Peak accuracy, position error and relative intensity error of matched peaks."""
    n_truth = n_matched = 0
    max_err = 0
    rel_errors: List[float] = []
    for case in cases:
        report = pipe.run(case.raw, threshold, window)
        found = {p.index: p for p in report.peaks}
        n_truth += len(case.centers)
        used = set()
        for c, amp in zip(case.centers, case.intensities):
            near = [i for i in found if abs(i - c) <= match_tol and i not in used]
            if not near:
                continue
            i = min(near, key=lambda j: (abs(j - c), j))
            used.add(i)
            n_matched += 1
            max_err = max(max_err, abs(i - int(c)))
            rel_errors.append(abs(found[i].intensity - amp) / amp)
    med = float(np.median(rel_errors)) if rel_errors else math.inf
    return EasyScore(n_matched / max(n_truth, 1), max_err, med, n_truth, n_matched)


def bundled_models() -> Path:
    """Directory of the toy checkpoints shipped with the package."""
    return Path(__file__).parent / "toy_models"
