"""Spectral domain types: spectra, pseudo-Voigt peaks, label encodings.

All arrays are indexed in datapoint units. Axis metadata (start, step) is
only used when mapping indices back to instrument units.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence, Tuple

import numpy as np
from numpy.typing import NDArray

DEFAULT_LENGTH = 555


class SpectrumError(ValueError):
    """Raised for invalid spectra or peak parameters."""


@dataclass(frozen=True)
class NormRecord:
    scale: float
    offset: float


@dataclass(frozen=True)
class Spectrum:
    """Uniformly sampled spectrum with optional min-max normalization record."""

    values: NDArray[np.float64]
    axis_start: float = 0.0
    axis_step: float = 1.0
    norm: Optional[NormRecord] = None

    def __post_init__(self) -> None:
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 1:
            raise SpectrumError("spectrum values must be 1-D")
        if not np.all(np.isfinite(values)):
            raise SpectrumError("spectrum values must be finite")
        if not self.axis_step > 0:
            raise SpectrumError("axis_step must be positive")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    def __len__(self) -> int:
        return self.values.shape[0]

    @property
    def axis(self) -> NDArray[np.float64]:
        return self.axis_start + self.axis_step * np.arange(len(self))

    def index_to_axis(self, index: float) -> float:
        return self.axis_start + self.axis_step * index

    def axis_to_index(self, position: float) -> float:
        return (position - self.axis_start) / self.axis_step


@dataclass(frozen=True)
class VoigtPeak:
    center: float
    amplitude: float
    fwhm: float
    eta: float = 0.5

    def validate(self, length: Optional[int] = None) -> None:
        if not self.fwhm > 0:
            raise SpectrumError(f"fwhm must be positive, got {self.fwhm}")
        if not 0.0 <= self.eta <= 1.0:
            raise SpectrumError(f"eta must lie in [0, 1], got {self.eta}")
        if not self.amplitude > 0:
            raise SpectrumError(f"amplitude must be positive, got {self.amplitude}")
        if length is not None and not 0 <= self.center <= length - 1:
            raise SpectrumError(f"center {self.center} outside [0, {length - 1}]")

    @property
    def index(self) -> int:
        """Apex index (round half up)."""
        return int(np.floor(self.center + 0.5))


@dataclass(frozen=True)
class PeakLabels:
    """Per-point label encodings for a set of peaks.

    ``shadowed_location`` holds the apex indices handed to the fitter, which
    differ from the true apexes only when peak shadowing moved them.
    """

    location: NDArray[np.float64]
    intensity: NDArray[np.float64]
    fwhm: NDArray[np.float64]
    shadowed_location: NDArray[np.int64]

    @property
    def centers(self) -> NDArray[np.int64]:
        return np.flatnonzero(self.location > 0.5)

    def location_channel(self) -> NDArray[np.float64]:
        """Indicator built from the (possibly shadowed) fitter input labels."""
        out = np.zeros_like(self.location)
        out[self.shadowed_location] = 1.0
        return out


@dataclass(frozen=True)
class ChannelStack:
    raw: NDArray[np.float64]
    d1: NDArray[np.float64]
    d2: NDArray[np.float64]

    @classmethod
    def from_raw(cls, raw: NDArray[np.float64]) -> "ChannelStack":
        raw = np.asarray(raw, dtype=np.float64)
        return cls(raw, *derivatives(raw))

    def as_array(self) -> NDArray[np.float64]:
        return np.stack([self.raw, self.d1, self.d2])


def pseudo_voigt(x: NDArray[np.float64], peak: VoigtPeak) -> NDArray[np.float64]:
    """Evaluate a pseudo-Voigt at arbitrary positions ``x``.

    Gaussian and Lorentzian components share the FWHM and peak height, so the
    mixture keeps both properties regardless of ``eta``.
    """
    peak.validate()
    half = 0.5 * peak.fwhm
    u = (np.asarray(x, dtype=np.float64) - peak.center) / half
    gauss = np.exp(-np.log(2.0) * u * u)
    lorentz = 1.0 / (1.0 + u * u)
    return peak.amplitude * (peak.eta * lorentz + (1.0 - peak.eta) * gauss)


def eval_voigt(peak: VoigtPeak, length: int = DEFAULT_LENGTH) -> NDArray[np.float64]:
    if length < 8:
        raise SpectrumError(f"length must be >= 8, got {length}")
    return pseudo_voigt(np.arange(length, dtype=np.float64), peak)


def sum_peaks(peaks: Sequence[VoigtPeak], length: int) -> NDArray[np.float64]:
    out = np.zeros(length)
    for p in peaks:
        out += eval_voigt(p, length)
    return out


def derivatives(values: NDArray[np.float64]) -> Tuple[NDArray[np.float64], NDArray[np.float64]]:
    """First and second finite differences in index units.

    d1 uses central differences with one-sided edges; d2 uses the three-point
    stencil with the edge values replicated from their neighbours.
    """
    y = np.asarray(values, dtype=np.float64)
    if y.ndim != 1 or y.shape[0] < 3:
        raise SpectrumError("derivatives need a 1-D array of length >= 3")
    d1 = np.empty_like(y)
    d1[1:-1] = 0.5 * (y[2:] - y[:-2])
    d1[0] = y[1] - y[0]
    d1[-1] = y[-1] - y[-2]
    d2 = np.empty_like(y)
    d2[1:-1] = y[2:] - 2.0 * y[1:-1] + y[:-2]
    d2[0] = d2[1]
    d2[-1] = d2[-2]
    return d1, d2


def channel_stack(values: NDArray[np.float64]) -> NDArray[np.float64]:
    """(3, L) array of raw spectrum, first and second derivative."""
    return ChannelStack.from_raw(values).as_array()


def normalize(spec: Spectrum) -> Spectrum:
    """Min-max map to [0, 1], composing with any existing normalization."""
    lo = float(spec.values.min())
    hi = float(spec.values.max())
    if not hi > lo:
        raise SpectrumError("cannot normalize a constant spectrum")
    scale = hi - lo
    values = (spec.values - lo) / scale
    if spec.norm is not None:
        prev = spec.norm
        norm = NormRecord(scale=prev.scale * scale, offset=prev.offset + prev.scale * lo)
    else:
        norm = NormRecord(scale=scale, offset=lo)
    return Spectrum(values, spec.axis_start, spec.axis_step, norm)


def denormalize(spec: Spectrum) -> Spectrum:
    if spec.norm is None:
        return spec
    values = spec.values * spec.norm.scale + spec.norm.offset
    return Spectrum(values, spec.axis_start, spec.axis_step, None)


def minmax(values: NDArray[np.float64]) -> Tuple[NDArray[np.float64], float, float]:
    """Array-level normalization returning (normalized, scale, offset)."""
    spec = normalize(Spectrum(values))
    assert spec.norm is not None
    return np.array(spec.values), spec.norm.scale, spec.norm.offset


def peak_labels(
    peaks: Sequence[VoigtPeak],
    length: int,
    shadowed: Optional[Sequence[int]] = None,
    intensity_scale: float = 1.0,
) -> PeakLabels:
    """Encode peaks as apex indicator, intensity and FWHM arrays.

    Intensities are multiplied by ``intensity_scale`` so they can be expressed
    in the frame of a normalized spectrum.
    """
    location = np.zeros(length)
    intensity = np.zeros(length)
    fwhm = np.zeros(length)
    idx = np.array([p.index for p in peaks], dtype=np.int64)
    if len(set(idx.tolist())) != len(idx):
        raise SpectrumError("peak apexes must fall on distinct indices")
    for p, i in zip(peaks, idx):
        location[i] = 1.0
        intensity[i] = p.amplitude * intensity_scale
        fwhm[i] = p.fwhm
    shadow = idx.copy() if shadowed is None else np.asarray(shadowed, dtype=np.int64)
    return PeakLabels(location, intensity, fwhm, shadow)


def resample(
    axis: NDArray[np.float64], values: NDArray[np.float64], length: int = DEFAULT_LENGTH
) -> Spectrum:
    """Linearly interpolate an arbitrary increasing axis onto ``length`` points."""
    axis = np.asarray(axis, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    order = np.argsort(axis)
    axis, values = axis[order], values[order]
    if axis.shape[0] < 2 or not axis[-1] > axis[0]:
        raise SpectrumError("axis must contain at least two distinct values")
    grid = np.linspace(axis[0], axis[-1], length)
    return Spectrum(np.interp(grid, axis, values), float(grid[0]), float(grid[1] - grid[0]))


def read_spectrum_csv(path: str | Path, length: Optional[int] = DEFAULT_LENGTH) -> Tuple[Spectrum, NDArray[np.float64]]:
    """Read a two-column (axis, intensity) CSV with an optional header.

    Returns the spectrum resampled to ``length`` points (no resampling when
    ``length`` is None) and the original axis values.
    """
    xs, ys = [], []
    with open(path, newline="") as fh:
        for row in csv.reader(fh):
            if len(row) < 2 or not row[0].strip():
                continue
            try:
                x, y = float(row[0]), float(row[1])
            except ValueError:
                if xs:
                    raise SpectrumError(f"non-numeric row in {path}: {row}")
                continue  # header
            xs.append(x)
            ys.append(y)
    axis = np.array(xs)
    if length is None:
        step = (axis[-1] - axis[0]) / (len(axis) - 1)
        return Spectrum(np.array(ys), float(axis[0]), float(step)), axis
    return resample(axis, np.array(ys), length), axis


def write_spectrum_csv(path: str | Path, spec: Spectrum, header: bool = True) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        if header:
            w.writerow(["axis", "intensity"])
        for x, y in zip(spec.axis, spec.values):
            w.writerow([repr(float(x)), repr(float(y))])
