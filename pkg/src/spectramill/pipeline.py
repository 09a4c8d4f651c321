"""Four-stage inference chain: denoise, correct baseline, locate, fit.

Every stage works on a min-max normalized spectrum. The corrected spectrum is
renormalized before location and fitting, and reported intensities are mapped
back to input signal units through both normalization records. Positions and
widths are mapped to the spectrum's axis.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np
from numpy.typing import NDArray

from .core import Spectrum, SpectrumError, channel_stack, normalize
from .nn.checkpoint import Checkpoint
from .nn.model import Model
from .synth import Task

STAGE_FILES = {task: f"{task.value}.smll" for task in Task}
DEFAULT_THRESHOLD = 0.5
DEFAULT_WINDOW = 6


class PipelineError(ValueError):
    pass


def nms_radius(window: int, diameter: bool = False) -> int:
    """Neighbourhood radius for a window size: window - 1, or window // 2 in diameter mode."""
    if window < 1:
        raise ValueError("window must be at least 1")
    return window // 2 if diameter else window - 1


def nms(scores: NDArray[np.float64], threshold: float = DEFAULT_THRESHOLD, window: int = DEFAULT_WINDOW,
        diameter: bool = False) -> List[int]:
    """Indices that exceed ``threshold`` and dominate their neighbourhood.

    Index i survives when scores[i] > threshold, scores[i] is strictly greater
    than every score in the r points to its left and at least every score in
    the r points to its right (ties go to the lower index).
    """
    s = np.asarray(scores, dtype=np.float64)
    r = nms_radius(window, diameter)
    n = s.shape[0]
    if r == 0:
        return np.flatnonzero(s > threshold).tolist()
    pad = np.full(r, -np.inf)
    padded = np.concatenate([pad, s, pad])
    wins = np.lib.stride_tricks.sliding_window_view(padded, r)
    left_max = wins[:n]  # windows [i - r, i)
    right_max = wins[r + 1 : r + 1 + n]  # windows (i, i + r]
    keep = (s > threshold) & (s > left_max.max(axis=1)) & (s >= right_max.max(axis=1))
    return np.flatnonzero(keep).tolist()


@dataclass(frozen=True)
class ReportedPeak:
    position: float
    index: int
    confidence: float
    intensity: float
    fwhm: float


@dataclass
class PeakReport:
    peaks: List[ReportedPeak]
    denoised: Spectrum
    baseline: NDArray[np.float64]
    corrected: Spectrum
    location_scores: NDArray[np.float64]
    meta: Dict = field(default_factory=dict)

    @property
    def indices(self) -> List[int]:
        return [p.index for p in self.peaks]

    def to_dict(self) -> dict:
        return {
            "peaks": [asdict(p) for p in self.peaks],
            "stages": {
                "axis": self.denoised.axis.tolist(),
                "denoised": self.denoised.values.tolist(),
                "baseline": np.asarray(self.baseline).tolist(),
                "corrected": self.corrected.values.tolist(),
                "location_scores": np.asarray(self.location_scores).tolist(),
            },
            "meta": self.meta,
        }

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1))


def _check_task(model: Model, task: Task) -> None:
    if model.spec.name is not task:
        raise PipelineError(f"expected a {task.value} model, got {model.spec.name.value}")


def _forward(model: Model, x: NDArray[np.float64]) -> NDArray[np.float64]:
    return model.predict(x[None])[0]


def denoise(model: Model, values: NDArray[np.float64]) -> NDArray[np.float64]:
    _check_task(model, Task.DENOISER)
    return _forward(model, channel_stack(values))[0]


def correct_baseline(model: Model, values: NDArray[np.float64]) -> NDArray[np.float64]:
    """Predicted baseline; subtract it from ``values`` to correct."""
    _check_task(model, Task.BASELINE_REMOVER)
    return _forward(model, channel_stack(values))[0]


def locate(model: Model, values: NDArray[np.float64]) -> NDArray[np.float64]:
    """Per-point peak confidence in [0, 1]."""
    _check_task(model, Task.PEAK_LOCATOR)
    return _forward(model, channel_stack(values))[0]


def fit(model: Model, values: NDArray[np.float64], indices: Sequence[int]) -> NDArray[np.float64]:
    """(2, L) intensity and scaled FWHM predictions given peak locations."""
    _check_task(model, Task.PEAK_FITTER)
    loc = np.zeros_like(np.asarray(values, dtype=np.float64))
    loc[list(indices)] = 1.0
    return _forward(model, np.concatenate([channel_stack(values), loc[None]]))


@dataclass
class Pipeline:
    denoiser: Model
    baseline_remover: Model
    locator: Model
    fitter: Model
    fwhm_scale: float = 60.0
    length: int = 555

    def __post_init__(self) -> None:
        _check_task(self.denoiser, Task.DENOISER)
        _check_task(self.baseline_remover, Task.BASELINE_REMOVER)
        _check_task(self.locator, Task.PEAK_LOCATOR)
        _check_task(self.fitter, Task.PEAK_FITTER)

    @classmethod
    def from_checkpoints(cls, cps: Dict[Task, Checkpoint]) -> "Pipeline":
        fitter = cps[Task.PEAK_FITTER]
        return cls(
            cps[Task.DENOISER].to_model(),
            cps[Task.BASELINE_REMOVER].to_model(),
            cps[Task.PEAK_LOCATOR].to_model(),
            fitter.to_model(),
            fwhm_scale=float(fitter.meta.get("fwhm_scale", 60.0)),
            length=int(fitter.meta.get("length", 555)),
        )

    @classmethod
    def load(cls, directory: str | Path) -> "Pipeline":
        d = Path(directory)
        cps = {}
        for task, name in STAGE_FILES.items():
            cp = Checkpoint.load(d / name)
            if cp.spec.name is not task:
                raise PipelineError(f"{name} holds a {cp.spec.name.value} model")
            cps[task] = cp
        return cls.from_checkpoints(cps)

    def save(self, directory: str | Path, meta: Optional[dict] = None) -> None:
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        info = {"fwhm_scale": self.fwhm_scale, "length": self.length, **(meta or {})}
        for task, model in zip(Task, (self.denoiser, self.baseline_remover, self.locator, self.fitter)):
            Checkpoint.from_model(model, meta=info).save(d / STAGE_FILES[task])

    def run(self, raw: Spectrum, threshold: float = DEFAULT_THRESHOLD, window: int = DEFAULT_WINDOW,
            diameter: bool = False) -> PeakReport:
        return run_pipeline(raw, self, threshold, window, diameter)


def run_pipeline(raw: Spectrum, pipe: Pipeline, threshold: float = DEFAULT_THRESHOLD,
                 window: int = DEFAULT_WINDOW, diameter: bool = False) -> PeakReport:
    if not 0 < threshold < 1:
        raise ValueError("threshold must lie in (0, 1)")
    try:
        norm = normalize(Spectrum(raw.values, raw.axis_start, raw.axis_step))
    except SpectrumError as exc:
        raise PipelineError(str(exc)) from exc
    assert norm.norm is not None
    den = denoise(pipe.denoiser, norm.values)
    base = correct_baseline(pipe.baseline_remover, den)
    diff = den - base
    if not diff.max() > diff.min():
        raise PipelineError("baseline-corrected spectrum is constant")
    corrected = normalize(Spectrum(diff, raw.axis_start, raw.axis_step, norm.norm))
    scores = locate(pipe.locator, corrected.values)
    idx = nms(scores, threshold, window, diameter)
    peaks: List[ReportedPeak] = []
    if idx:
        out = fit(pipe.fitter, corrected.values, idx)
        assert corrected.norm is not None
        scale = corrected.norm.scale * (raw.norm.scale if raw.norm else 1.0)
        for i in idx:
            peaks.append(
                ReportedPeak(
                    position=float(raw.index_to_axis(i)),
                    index=int(i),
                    confidence=float(scores[i]),
                    intensity=float(out[0, i] * scale),
                    fwhm=float(out[1, i] * pipe.fwhm_scale * raw.axis_step),
                )
            )
    meta = {
        "threshold": threshold,
        "window": window,
        "nms_radius": nms_radius(window, diameter),
        "length": len(raw),
        "resampled": bool(len(raw) != pipe.length),
    }
    return PeakReport(
        peaks,
        Spectrum(den, raw.axis_start, raw.axis_step, norm.norm),
        base,
        corrected,
        scores,
        meta,
    )
