"""Seeded synthetic spectra with ground truth for the four pipeline tasks.

Every sample is a pure function of ``(cfg.seed, index)``: the generator for a
sample is keyed on both, so datasets can be produced in any order or in
parallel and still match bit for bit.

Composition order for one sample:

1. pseudo-Voigt peaks and a multi-stage baseline drift, in amplitude units
2. combine and min-max normalize
3. baseline shifts (normalized units), spectral tweaking, noise
4. final min-max normalization of the model input; every target is mapped
   through the same affine transform so ``peaks + baseline + noise == input``
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, replace
from typing import List, Optional, Sequence, Tuple

import numpy as np
from numpy.typing import NDArray

from .core import (
    ChannelStack,
    PeakLabels,
    Spectrum,
    VoigtPeak,
    minmax,
    peak_labels,
    sum_peaks,
)

# Drift over the full axis per unit global slope, relative to a unit-height
# peak, with every multiplier at 1 and no flat/inverted segments.  Chosen so
# coefficients 35 and 9 give the ratios 2.961 and 0.7614.
DRIFT_PER_SLOPE_UNIT = 0.0846

DENOISER_SLOPES = (0.1, 1.0, 3.0, 6.0, 9.0, 14.0, 20.0, 27.0, 35.0)
PEAK_SLOPES = (0.2, 1.0, 3.0, 5.0, 7.0, 9.0)
DENOISER_STDS = (0.0, 0.001, 0.005, 0.01, 0.02, 0.05, 0.1, 0.15)
OTHER_STDS = (0.0, 0.0001, 0.0005, 0.001)

REGION_FLAT_PROB = 0.15
CHUNK_FLAT_PROB = 0.10
CHUNK_INVERT_PROB = 0.10
QUADRATIC_PROB = 0.5
BEND_INTERVALS = ((0.75, 0.95), (1.05, 1.25))
TWEAK_CENTER_INTERVALS = ((0.96, 0.999), (1.001, 1.04))
TWEAK_SIDE_INTERVALS = ((0.98, 0.999), (1.001, 1.02))


class Task(str, enum.Enum):
    DENOISER = "denoiser"
    BASELINE_REMOVER = "baseline_remover"
    PEAK_LOCATOR = "peak_locator"
    PEAK_FITTER = "peak_fitter"

    @classmethod
    def parse(cls, name: "str | Task") -> "Task":
        if isinstance(name, Task):
            return name
        key = str(name).strip().lower().replace("-", "_")
        aliases = {
            "denoise": cls.DENOISER,
            "baseline": cls.BASELINE_REMOVER,
            "baselineremover": cls.BASELINE_REMOVER,
            "locator": cls.PEAK_LOCATOR,
            "peaklocator": cls.PEAK_LOCATOR,
            "fitter": cls.PEAK_FITTER,
            "peakfitter": cls.PEAK_FITTER,
        }
        if key in aliases:
            return aliases[key]
        return cls(key)


@dataclass(frozen=True)
class BetaNoise:
    prob: float
    mag_range: Tuple[float, float]
    # per-point probability of a dent is drawn from U(0, max_fraction)
    max_fraction: float = 0.2


@dataclass(frozen=True)
class GenConfig:
    task: Task
    length: int = 555
    n_peaks_range: Tuple[int, int] = (1, 11)
    slope_coeffs: Tuple[float, ...] = PEAK_SLOPES
    gauss_stds: Tuple[float, ...] = OTHER_STDS
    beta1: Optional[BetaNoise] = BetaNoise(0.5, (0.001, 0.004))
    beta2: Optional[BetaNoise] = None
    shift_probs: Tuple[float, float] = (0.12, 0.04)
    shift_mag_range: Tuple[float, float] = (0.05, 1.0)
    tweak_enabled: bool = False
    shadow_enabled: bool = False
    amplitude_range: Tuple[float, float] = (0.05, 1.0)
    fwhm_range: Tuple[float, float] = (3.0, 60.0)
    tight_prob: float = 0.5
    max_gaps: Tuple[float, float] = (2.0, 12.0)
    seed: int = 0

    @classmethod
    def for_task(cls, task: "str | Task", **overrides) -> "GenConfig":
        """Task defaults, with keyword overrides for toy-scale studies."""
        task = Task.parse(task)
        big = task in (Task.DENOISER, Task.BASELINE_REMOVER)
        base = cls(
            task=task,
            slope_coeffs=DENOISER_SLOPES if big else PEAK_SLOPES,
            gauss_stds=DENOISER_STDS if task is Task.DENOISER else OTHER_STDS,
            beta2=BetaNoise(0.5, (0.005, 0.025)) if big else None,
            tweak_enabled=not big,
            shadow_enabled=task is Task.PEAK_FITTER,
        )
        return replace(base, **overrides)

    def to_dict(self) -> dict:
        d = {k: getattr(self, k) for k in self.__dataclass_fields__}
        d["task"] = self.task.value
        d["beta1"] = _beta_to_dict(self.beta1)
        d["beta2"] = _beta_to_dict(self.beta2)
        return _listify(d)

    @classmethod
    def from_dict(cls, d: dict) -> "GenConfig":
        d = dict(d)
        d["task"] = Task.parse(d["task"])
        d["beta1"] = None if d.get("beta1") is None else BetaNoise(**_tuplify(d["beta1"]))
        d["beta2"] = None if d.get("beta2") is None else BetaNoise(**_tuplify(d["beta2"]))
        return cls(**_tuplify(d))


def _beta_to_dict(b: Optional[BetaNoise]) -> Optional[dict]:
    if b is None:
        return None
    return {"prob": b.prob, "mag_range": list(b.mag_range), "max_fraction": b.max_fraction}


def _listify(d: dict) -> dict:
    return {k: list(v) if isinstance(v, tuple) else v for k, v in d.items()}


def _tuplify(d: dict) -> dict:
    return {k: tuple(v) if isinstance(v, list) else v for k, v in d.items()}


@dataclass
class Chunk:
    length: int
    flat: bool
    inverted: bool
    slope_mult: float
    bend: Optional[float] = None  # None for linear chunks


@dataclass
class Region:
    length: int
    flat: bool
    slope_sign: int
    slope_mult: float
    chunks: List[Chunk] = field(default_factory=list)


@dataclass
class BaselinePlan:
    global_slope: float
    regions: List[Region]


@dataclass
class SampleRecord:
    task: Task
    index: int
    clean_peaks: Spectrum
    baseline: NDArray[np.float64]
    noise: NDArray[np.float64]
    shift_positions: List[Tuple[int, int]]
    noise_std_used: float
    peaks: List[VoigtPeak]
    labels: PeakLabels
    input: ChannelStack
    raman_like: bool
    global_slope: float
    plan: BaselinePlan

    @property
    def denoised_target(self) -> NDArray[np.float64]:
        return self.clean_peaks.values + self.baseline

    def targets(self, fwhm_scale: float = 1.0) -> NDArray[np.float64]:
        """(channels, L) training target for this record's task."""
        if self.task is Task.DENOISER:
            return self.denoised_target[None]
        if self.task is Task.BASELINE_REMOVER:
            return self.baseline[None]
        if self.task is Task.PEAK_LOCATOR:
            return self.labels.location[None]
        return np.stack([self.labels.intensity, self.labels.fwhm / fwhm_scale])

    def inputs(self) -> NDArray[np.float64]:
        """(channels, L) model input: raw, d1, d2 (+ location labels for the fitter)."""
        x = self.input.as_array()
        if self.task is Task.PEAK_FITTER:
            x = np.concatenate([x, self.labels.location_channel()[None]])
        return x


def sample_rng(seed: int, index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(index)]))


def _uniform_union(rng: np.random.Generator, intervals: Sequence[Tuple[float, float]]) -> float:
    widths = np.array([b - a for a, b in intervals])
    k = rng.choice(len(intervals), p=widths / widths.sum())
    a, b = intervals[k]
    return float(rng.uniform(a, b))


def gen_peaks(rng: np.random.Generator, n: int, length: int, cfg: GenConfig) -> List[VoigtPeak]:
    """Draw ``n`` peaks as a cluster with bounded consecutive-center gaps.

    Gaps are drawn from U(1, max_gap) so rounded apexes stay distinct; the
    cluster is placed uniformly inside [5, L - 6].
    """
    if not 1 <= n <= 11:
        raise ValueError(f"peak count must be in [1, 11], got {n}")
    tight = rng.random() < cfg.tight_prob
    max_gap = cfg.max_gaps[0] if tight else cfg.max_gaps[1]
    gaps = rng.uniform(1.0, max_gap, size=n - 1)
    room = (length - 6) - 5
    span = float(gaps.sum())
    if span > room:
        if n - 1 > room:
            raise ValueError(f"{n} peaks do not fit in length {length}")
        # shrink the excess over the minimum gap so the cluster fits
        k = (room - (n - 1)) / max(span - (n - 1), 1e-12)
        gaps = 1.0 + (gaps - 1.0) * k
        span = float(gaps.sum())
    start = rng.uniform(5.0, (length - 6) - span)
    centers = start + np.concatenate([[0.0], np.cumsum(gaps)])
    centers = np.clip(centers, 5.0, length - 6.0)
    amps = rng.uniform(*cfg.amplitude_range, size=n)
    fwhms = rng.uniform(*cfg.fwhm_range, size=n)
    etas = rng.uniform(0.0, 1.0, size=n)
    return [
        VoigtPeak(float(c), float(a), float(w), float(e))
        for c, a, w, e in zip(centers, amps, fwhms, etas)
    ]


def _region_lengths(rng: np.random.Generator, length: int) -> List[int]:
    count = int(rng.integers(1, 11))
    nominal = length / count
    lengths: List[int] = []
    total = 0
    for _ in range(count):
        n = max(1, int(round(nominal * rng.uniform(0.5, 2.0))))
        if total + n >= length:
            lengths.append(length - total)
            total = length
            break
        lengths.append(n)
        total += n
    if total < length:
        lengths[-1] += length - total
    return lengths


def _chunk_curve(n: int, rise: float, bend: Optional[float]) -> NDArray[np.float64]:
    """Offsets at local positions 1..n for a chunk rising ``rise`` over n steps."""
    j = np.arange(1, n + 1, dtype=np.float64)
    if bend is None:
        return rise * j / n
    # quadratic through (0, 0), (n/2, bend * rise/2), (n, rise)
    a = -2.0 * (bend - 1.0) * rise / (n * n)
    b = rise / n - a * n
    return a * j * j + b * j


def gen_baseline(
    rng: np.random.Generator, length: int, global_slope: float
) -> Tuple[NDArray[np.float64], BaselinePlan]:
    """Multi-stage probabilistic baseline drift.

    Regions (flat, signed, scaled) are split into 3-18 point chunks (flat,
    inverted, scaled, linear or quadratic). Each chunk starts where the
    previous one ended, so the curve is continuous.
    """
    if global_slope < 0:
        raise ValueError("global slope must be non-negative")
    per_index = global_slope * DRIFT_PER_SLOPE_UNIT / (length - 1)
    out = np.empty(length)
    regions: List[Region] = []
    pos = 0
    level = 0.0
    for rlen in _region_lengths(rng, length):
        flat = rng.random() < REGION_FLAT_PROB
        sign = 1 if rng.random() < 0.5 else -1
        rmult = float(rng.uniform(0.01, 1.99))
        region = Region(rlen, flat, sign, rmult)
        used = 0
        while used < rlen:
            clen = min(int(rng.integers(3, 19)), rlen - used)
            cflat = rng.random() < CHUNK_FLAT_PROB
            inverted = rng.random() < CHUNK_INVERT_PROB
            cmult = float(rng.uniform(0.01, 1.99))
            bend = _uniform_union(rng, BEND_INTERVALS) if rng.random() >= QUADRATIC_PROB else None
            region.chunks.append(Chunk(clen, cflat, inverted, cmult, bend))
            slope = 0.0
            if not (flat or cflat):
                slope = per_index * sign * rmult * cmult * (-1 if inverted else 1)
            seg = level + _chunk_curve(clen, slope * clen, bend)
            out[pos + used : pos + used + clen] = seg
            level = float(seg[-1])
            used += clen
        regions.append(region)
        pos += rlen
    return out, BaselinePlan(global_slope, regions)


def draw_shift_count(rng: np.random.Generator, probs: Tuple[float, float]) -> int:
    u = rng.random()
    if u < probs[1]:
        return 2
    if u < probs[1] + probs[0]:
        return 1
    return 0


def apply_baseline_shift(
    rng: np.random.Generator, baseline: NDArray[np.float64], cfg: GenConfig
) -> Tuple[NDArray[np.float64], List[Tuple[int, int]]]:
    """Add 0-2 abrupt step shifts; returns the shifted copy and [start, stop) windows.

    A window of w points carries w increments; one of them holds 65-90% of
    the total magnitude and the rest is split randomly among the others.
    """
    out = np.array(baseline, dtype=np.float64, copy=True)
    length = out.shape[0]
    windows: List[Tuple[int, int]] = []
    for _ in range(draw_shift_count(rng, cfg.shift_probs)):
        width = int(rng.integers(2, 6))
        start = int(rng.integers(1, length - width))
        mag = float(rng.uniform(*cfg.shift_mag_range)) * (1 if rng.random() < 0.5 else -1)
        major = float(rng.uniform(0.65, 0.90))
        steps = np.empty(width)
        k = int(rng.integers(0, width))
        weights = rng.random(width - 1)
        steps[k] = major * mag
        steps[np.arange(width) != k] = (1.0 - major) * mag * weights / weights.sum()
        before, after = start - 1, start + width
        out[start : start + width] += np.cumsum(steps)
        out[after:] += mag
        if rng.random() < 0.5:
            out[before] *= 1.0 + rng.uniform(-0.1, 0.1)
        if after < length and rng.random() < 0.5:
            out[after] *= 1.0 + rng.uniform(-0.1, 0.1)
        windows.append((start, start + width))
    return out, windows


def draw_noise(
    rng: np.random.Generator, length: int, cfg: GenConfig, peak_max: float = 1.0
) -> Tuple[NDArray[np.float64], float]:
    """Gaussian noise (std relative to ``peak_max``) plus optional beta 'dents'."""
    std = float(cfg.gauss_stds[int(rng.integers(0, len(cfg.gauss_stds)))])
    noise = rng.normal(0.0, 1.0, size=length) * (std * peak_max)
    for beta in (cfg.beta1, cfg.beta2):
        if beta is None or rng.random() >= beta.prob:
            continue
        lo, hi = beta.mag_range
        frac = rng.uniform(0.0, beta.max_fraction)
        hit = rng.random(length) < frac
        sign = 1.0 if rng.random() < 0.5 else -1.0
        noise += sign * hit * (lo + (hi - lo) * rng.beta(1.0, 2.0, size=length))
    return noise, std


def add_noise(
    rng: np.random.Generator, values: NDArray[np.float64], cfg: GenConfig, peak_max: float = 1.0
) -> Tuple[NDArray[np.float64], float]:
    noise, std = draw_noise(rng, len(values), cfg, peak_max)
    return values + noise, std


def spectral_tweak(
    rng: np.random.Generator, values: NDArray[np.float64], peaks: Sequence[VoigtPeak]
) -> NDArray[np.float64]:
    out = np.array(values, dtype=np.float64, copy=True)
    if rng.random() >= 0.5:
        return out
    length = out.shape[0]
    for p in peaks:
        if rng.random() >= 0.5:
            continue
        c = p.index
        out[c] *= _uniform_union(rng, TWEAK_CENTER_INTERVALS)
        n_side = int(rng.integers(0, 4))
        for off in range(1, n_side + 1):
            for i in (c - off, c + off):
                if 0 <= i < length:
                    out[i] *= _uniform_union(rng, TWEAK_SIDE_INTERVALS)
    return out


def peak_shadow(rng: np.random.Generator, labels: PeakLabels) -> PeakLabels:
    """Move some fitter input labels by 1-3 points; ground-truth arrays are shared."""
    shadow = np.array(labels.shadowed_location, copy=True)
    if rng.random() < 0.5:
        last = labels.location.shape[0] - 1
        for j in range(shadow.shape[0]):
            if rng.random() >= 0.5:
                continue
            step = int(rng.integers(1, 4)) * (1 if rng.random() < 0.5 else -1)
            moved = shadow[j] + step
            if not 0 <= moved <= last:
                moved = shadow[j] - step
            shadow[j] = moved
    return PeakLabels(labels.location, labels.intensity, labels.fwhm, shadow)


def is_raman_like(peaks: Sequence[VoigtPeak], length: int) -> bool:
    """Sparse, sharp peaks: < 40% of points within one FWHM of a center and median FWHM < 15."""
    occupied = np.zeros(length, dtype=bool)
    for p in peaks:
        lo = max(0, int(math.floor(p.center - p.fwhm)))
        hi = min(length, int(math.ceil(p.center + p.fwhm)) + 1)
        occupied[lo:hi] = True
    return bool(occupied.mean() < 0.40 and np.median([p.fwhm for p in peaks]) < 15.0)


def peak_count_for_index(cfg: GenConfig, index: int) -> int:
    lo, hi = cfg.n_peaks_range
    return lo + index % (hi - lo + 1)


def gen_sample(cfg: GenConfig, index: int) -> SampleRecord:
    rng = sample_rng(cfg.seed, index)
    length = cfg.length
    n = peak_count_for_index(cfg, index)
    peaks = gen_peaks(rng, n, length, cfg)
    clean_raw = sum_peaks(peaks, length)
    slope = float(cfg.slope_coeffs[int(rng.integers(0, len(cfg.slope_coeffs)))])
    base_raw, plan = gen_baseline(rng, length, slope)

    _, s1, o1 = minmax(clean_raw + base_raw)
    clean = clean_raw / s1
    base = (base_raw - o1) / s1
    base, windows = apply_baseline_shift(rng, base, cfg)
    if cfg.tweak_enabled:
        clean = spectral_tweak(rng, clean, peaks)
    noise, std = draw_noise(rng, length, cfg, peak_max=float(clean.max()))

    pre = clean + base
    raw, s2, o2 = minmax(pre + noise)
    labels = peak_labels(peaks, length, intensity_scale=1.0 / (s1 * s2))
    if cfg.shadow_enabled:
        labels = peak_shadow(rng, labels)
    return SampleRecord(
        task=cfg.task,
        index=index,
        clean_peaks=Spectrum(clean / s2),
        baseline=(base - o2) / s2,
        noise=noise / s2,
        shift_positions=windows,
        noise_std_used=std,
        peaks=peaks,
        labels=labels,
        input=ChannelStack.from_raw(raw),
        raman_like=is_raman_like(peaks, length),
        global_slope=slope,
        plan=plan,
    )
