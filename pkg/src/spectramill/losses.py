"""Training objectives with analytic gradients w.r.t. the prediction.

Every ``*_and_grad`` function returns ``(value, d value / d pred)``; the plain
variant returns only the value. Inputs may carry leading batch axes: the
per-sample loss is computed along the last axis and averaged over the rest.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, Optional, Sequence, Tuple

import numpy as np
from numpy.typing import NDArray

Array = NDArray[np.float64]

CE_EPS = 1e-12
TV2_EPS = 1e-8


class LossError(ValueError):
    pass


@dataclass(frozen=True)
class ViperParams:
    alpha: float = 1.0
    beta: float = 1.0
    gamma: float = 1.0
    v: float = 8.0
    v_start: float = 8.0
    v_end: float = 2.0
    anneal_frac: float = 0.6

    def __post_init__(self) -> None:
        if min(self.alpha, self.beta, self.gamma) < 0:
            raise LossError("ViPeR weights must be non-negative")
        if not self.v > 0:
            raise LossError("vicinity threshold must be positive")

    def annealed(self, epoch: int, n_epochs: int) -> "ViperParams":
        """Linear v schedule from v_start to v_end over the first anneal_frac of training."""
        span = max(self.anneal_frac * n_epochs, 1e-12)
        t = min(epoch / span, 1.0)
        v = self.v_start + (self.v_end - self.v_start) * t
        return ViperParams(self.alpha, self.beta, self.gamma, v, self.v_start, self.v_end, self.anneal_frac)


@dataclass(frozen=True)
class PeakFitLossParams:
    apex_weight: float = 5.0
    t_mce: float = 0.94
    t_mqe: float = 0.97

    def __post_init__(self) -> None:
        if not self.t_mqe > self.t_mce:
            raise LossError("t_mqe must exceed t_mce")


@dataclass(frozen=True)
class BaselineLossParams:
    tv1_alpha: float = 0.5
    tv2_beta: float = 5e-4
    raman_mse_factor: float = 30.0
    shift_mse_factor: float = 6.0
    shift_halfwidth: int = 3
    # "sum" adds the penalties over points; "mean" divides them by the point count
    tv_reduction: str = "sum"

    def __post_init__(self) -> None:
        if min(self.tv1_alpha, self.tv2_beta, self.raman_mse_factor, self.shift_mse_factor) <= 0:
            raise LossError("baseline loss factors must be positive")
        if self.tv_reduction not in ("sum", "mean"):
            raise LossError(f"unknown tv_reduction {self.tv_reduction!r}")


DEFAULT_MSE_TABLE: Dict[float, float] = {
    0.0: 100.0,
    0.001: 100.0,
    0.005: 40.0,
    0.01: 40.0,
    0.02: 15.0,
    0.05: 4.0,
    0.1: 1.0,
    0.15: 1.0,
}


@dataclass(frozen=True)
class WeightedMseSchedule:
    table: Dict[float, float] = field(default_factory=lambda: dict(DEFAULT_MSE_TABLE))

    def __post_init__(self) -> None:
        keys = sorted(self.table)
        coefs = [self.table[k] for k in keys]
        if any(b > a for a, b in zip(coefs, coefs[1:])):
            raise LossError("weighted-MSE coefficients must be non-increasing in noise std")

    def coefficient(self, std: float) -> float:
        keys = np.array(sorted(self.table))
        k = keys[np.argmin(np.abs(keys - std))]
        return float(self.table[float(k)])

    @classmethod
    def plain(cls) -> "WeightedMseSchedule":
        return cls({0.0: 1.0})


def _rows(x: Array) -> Array:
    x = np.asarray(x, dtype=np.float64)
    return x.reshape(-1, x.shape[-1])


# ---------------------------------------------------------------------------
# plain comparators


def mse_and_grad(pred: Array, truth: Array) -> Tuple[float, Array]:
    pred = np.asarray(pred, dtype=np.float64)
    diff = pred - truth
    return float(np.mean(diff * diff)), 2.0 * diff / diff.size


def mse(pred: Array, truth: Array) -> float:
    return mse_and_grad(pred, truth)[0]


def cross_entropy_and_grad(y_pred: Array, y_true: Array) -> Tuple[float, Array]:
    """Mean binary cross-entropy with predictions clamped to [eps, 1 - eps]."""
    p = np.clip(np.asarray(y_pred, dtype=np.float64), CE_EPS, 1.0 - CE_EPS)
    t = np.asarray(y_true, dtype=np.float64)
    n = p.size
    value = -np.sum(t * np.log(p) + (1.0 - t) * np.log1p(-p)) / n
    grad = (-t / p + (1.0 - t) / (1.0 - p)) / n
    return float(value), grad


def cross_entropy(y_pred: Array, y_true: Array) -> float:
    return cross_entropy_and_grad(y_pred, y_true)[0]


def ce_mse_and_grad(y_pred: Array, y_true: Array) -> Tuple[float, Array]:
    """CE + MSE on the location indicator, the conventional comparator."""
    v1, g1 = cross_entropy_and_grad(y_pred, y_true)
    v2, g2 = mse_and_grad(y_pred, y_true)
    return v1 + v2, g1 + g2


# ---------------------------------------------------------------------------
# ViPeR


def distance_to_nearest(y_true: Array) -> Array:
    """Index distance from every point to the nearest ground-truth center, per row."""
    rows = _rows(y_true)
    pos = np.arange(rows.shape[1], dtype=np.float64)
    out = np.empty_like(rows)
    for r, row in enumerate(rows):
        centers = np.flatnonzero(row > 0.5)
        if centers.size == 0:
            raise LossError("ViPeR needs at least one ground-truth peak per sample")
        out[r] = np.abs(pos[:, None] - centers[None, :]).min(axis=1)
    return out.reshape(np.shape(y_true))


def viper_components(y_pred: Array, y_true: Array, p: ViperParams) -> Tuple[float, float, float]:
    """(F_p, P_V, P_L) averaged over samples."""
    yp = _rows(y_pred)
    yt = _rows(y_true)
    d = _rows(distance_to_nearest(y_true))
    far = d > p.v
    fp = p.alpha * np.sum(np.where(far, yp * (d - p.v) ** 2, 0.0), axis=1)
    pv = p.beta * np.sum((yp - yt) ** 2, axis=1)
    pl = p.gamma * np.sum(np.where(far, 0.0, (yp - 1.0) ** 2 * (1.0 - d / p.v) ** 2), axis=1)
    return float(fp.mean()), float(pv.mean()), float(pl.mean())


def viper_loss_and_grad(y_pred: Array, y_true: Array, p: Optional[ViperParams] = None) -> Tuple[float, Array]:
    p = p or ViperParams()
    shape = np.shape(y_pred)
    yp = _rows(y_pred)
    yt = _rows(y_true)
    d = _rows(distance_to_nearest(y_true))
    far = d > p.v
    fp_w = np.where(far, (d - p.v) ** 2, 0.0)
    near_w = np.where(far, 0.0, (1.0 - d / p.v) ** 2)
    per_row = (
        p.alpha * np.sum(yp * fp_w, axis=1)
        + p.beta * np.sum((yp - yt) ** 2, axis=1)
        + p.gamma * np.sum((yp - 1.0) ** 2 * near_w, axis=1)
    )
    n = yp.shape[0]
    grad = (p.alpha * fp_w + 2.0 * p.beta * (yp - yt) + 2.0 * p.gamma * (yp - 1.0) * near_w) / n
    return float(per_row.mean()), grad.reshape(shape)


def viper_loss(y_pred: Array, y_true: Array, p: Optional[ViperParams] = None) -> float:
    return viper_loss_and_grad(y_pred, y_true, p)[0]


# ---------------------------------------------------------------------------
# denoiser


def weighted_mse_and_grad(
    pred: Array, truth: Array, noise_std, schedule: Optional[WeightedMseSchedule] = None
) -> Tuple[float, Array]:
    """Per-sample MSE scaled by the coefficient of that sample's noise level."""
    schedule = schedule or WeightedMseSchedule()
    shape = np.shape(pred)
    yp = _rows(pred)
    yt = _rows(truth)
    stds = np.broadcast_to(np.asarray(noise_std, dtype=np.float64).ravel(), (yp.shape[0],))
    coef = np.array([schedule.coefficient(s) for s in stds])
    diff = yp - yt
    per_row = coef * np.mean(diff * diff, axis=1)
    grad = coef[:, None] * 2.0 * diff / diff.size
    return float(per_row.mean()), grad.reshape(shape)


def weighted_mse(pred: Array, truth: Array, noise_std, schedule: Optional[WeightedMseSchedule] = None) -> float:
    return weighted_mse_and_grad(pred, truth, noise_std, schedule)[0]


# ---------------------------------------------------------------------------
# baseline remover


def tv1_and_grad(y: Array, alpha: float, mask: Optional[Array] = None) -> Tuple[float, Array]:
    """alpha * sum |y[i+1] - y[i]| over pairs whose both points are unmasked."""
    y = np.asarray(y, dtype=np.float64)
    if y.shape[-1] < 3:
        raise LossError("TV penalties need at least 3 points")
    diff = y[..., 1:] - y[..., :-1]
    keep = np.ones(diff.shape, dtype=bool) if mask is None else (mask[..., 1:] & mask[..., :-1])
    value = alpha * np.sum(np.abs(diff) * keep)
    s = alpha * np.sign(diff) * keep
    grad = np.zeros_like(y)
    grad[..., 1:] += s
    grad[..., :-1] -= s
    return float(value), grad


def tv1(y: Array, alpha: float) -> float:
    return tv1_and_grad(y, alpha)[0]


def tv2_and_grad(y: Array, beta: float, mask: Optional[Array] = None, eps: float = TV2_EPS) -> Tuple[float, Array]:
    """beta * sum sqrt|y[i+2] - 2 y[i+1] + y[i]|.

    The value is exact; the gradient differentiates sqrt(|u| + eps) so it stays
    finite where the curvature vanishes.
    """
    y = np.asarray(y, dtype=np.float64)
    if y.shape[-1] < 3:
        raise LossError("TV penalties need at least 3 points")
    u = y[..., 2:] - 2.0 * y[..., 1:-1] + y[..., :-2]
    keep = (
        np.ones(u.shape, dtype=bool)
        if mask is None
        else (mask[..., 2:] & mask[..., 1:-1] & mask[..., :-2])
    )
    value = beta * np.sum(np.sqrt(np.abs(u)) * keep)
    s = beta * keep * np.sign(u) / (2.0 * np.sqrt(np.abs(u) + eps))
    grad = np.zeros_like(y)
    grad[..., 2:] += s
    grad[..., 1:-1] -= 2.0 * s
    grad[..., :-2] += s
    return float(value), grad


def tv2(y: Array, beta: float) -> float:
    return tv2_and_grad(y, beta)[0]


def shift_mask(length: int, windows: Sequence[Tuple[int, int]], halfwidth: int) -> NDArray[np.bool_]:
    """True inside any [start - hw, stop - 1 + hw] neighbourhood of a shift window."""
    m = np.zeros(length, dtype=bool)
    for start, stop in windows:
        m[max(0, start - halfwidth) : min(length, stop + halfwidth)] = True
    return m


def baseline_composite_and_grad(
    pred: Array,
    truth: Array,
    raman_like,
    shift_windows,
    p: Optional[BaselineLossParams] = None,
) -> Tuple[float, Array]:
    """Weighted MSE plus TV1/TV2 smoothing suspended around baseline shifts.

    Per-point MSE weights are ``raman_mse_factor`` on Raman-like spectra,
    ``shift_mse_factor`` near shifts (overriding the Raman factor), 1 elsewhere.
    For a single spectrum pass a bool and a list of windows; for a batch pass
    a sequence of each.
    """
    p = p or BaselineLossParams()
    shape = np.shape(pred)
    yp = _rows(pred)
    yt = _rows(truth)
    n, length = yp.shape
    if np.ndim(raman_like) == 0:
        raman_like = [bool(raman_like)]
        shift_windows = [shift_windows]
    total = 0.0
    grad = np.empty_like(yp)
    tv_scale = 1.0 if p.tv_reduction == "sum" else 1.0 / length
    for i in range(n):
        near = shift_mask(length, shift_windows[i], p.shift_halfwidth)
        w = np.full(length, p.raman_mse_factor if raman_like[i] else 1.0)
        w[near] = p.shift_mse_factor
        diff = yp[i] - yt[i]
        val = np.mean(w * diff * diff)
        g = 2.0 * w * diff / length
        v1, g1 = tv1_and_grad(yp[i], p.tv1_alpha * tv_scale, ~near)
        v2, g2 = tv2_and_grad(yp[i], p.tv2_beta * tv_scale, ~near)
        total += val + v1 + v2
        grad[i] = (g + g1 + g2) / n
    return total / n, grad.reshape(shape)


def baseline_composite_loss(pred, truth, raman_like, shift_windows, p: Optional[BaselineLossParams] = None) -> float:
    return baseline_composite_and_grad(pred, truth, raman_like, shift_windows, p)[0]


# ---------------------------------------------------------------------------
# peak fitter


def peakfit_branches(pred: Array, truth: Array, apex_mask: Array, p: PeakFitLossParams) -> NDArray[np.int8]:
    """0 = MSE, 1 = MCE, 2 = MQE at apexes; -1 off-apex (plain MSE)."""
    pred = np.asarray(pred, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    apex = np.broadcast_to(np.asarray(apex_mask, dtype=bool), pred.shape)
    out = np.full(pred.shape, -1, dtype=np.int8)
    if np.any(truth[apex] == 0):
        raise LossError("peak-fit truth must be non-zero at apex points")
    safe = np.where(apex, truth, 1.0)
    r = np.abs(pred - truth) / np.abs(safe)
    out[apex & (r > 1.0 - p.t_mce)] = 0
    out[apex & (r <= 1.0 - p.t_mce) & (r > 1.0 - p.t_mqe)] = 1
    out[apex & (r <= 1.0 - p.t_mqe)] = 2
    return out


def dynamic_peakfit_and_grad(
    pred: Array, truth: Array, apex_mask: Array, p: Optional[PeakFitLossParams] = None
) -> Tuple[float, Array]:
    """Apex points use 5x MSE, MCE (|e|^3) or MQE (e^4) by relative error; others plain MSE.

    Branches are re-evaluated on every call, point by point.
    """
    p = p or PeakFitLossParams()
    pred = np.asarray(pred, dtype=np.float64)
    e = pred - np.asarray(truth, dtype=np.float64)
    br = peakfit_branches(pred, truth, apex_mask, p)
    ae = np.abs(e)
    term = np.where(br == 1, ae**3, np.where(br == 2, e**4, e * e))
    dterm = np.where(br == 1, 3.0 * e * ae, np.where(br == 2, 4.0 * e**3, 2.0 * e))
    w = np.where(br >= 0, p.apex_weight, 1.0)
    return float(np.mean(w * term)), w * dterm / e.size


def dynamic_peakfit_loss(pred, truth, apex_mask, p: Optional[PeakFitLossParams] = None) -> float:
    return dynamic_peakfit_and_grad(pred, truth, apex_mask, p)[0]
