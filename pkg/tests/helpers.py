"""Finite-difference oracles shared by the gradient tests."""

from __future__ import annotations

from typing import Callable, Iterable, Optional, Tuple

import numpy as np

H = 1e-5


def rel_err(a: np.ndarray, b: np.ndarray, floor: float = 1e-6) -> np.ndarray:
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)


def central_diff(f: Callable[[np.ndarray], float], x: np.ndarray, idx: Iterable[Tuple[int, ...]], h: float = H):
    out = []
    for i in idx:
        xp = x.copy()
        xp[i] += h
        xm = x.copy()
        xm[i] -= h
        out.append((f(xp) - f(xm)) / (2 * h))
    return np.array(out)


def sample_indices(shape, n: int, rng: np.random.Generator, keep: Optional[Callable] = None):
    """Up to ``n`` distinct multi-indices, optionally filtered by ``keep(index)``."""
    flat = rng.permutation(int(np.prod(shape)))
    out = []
    for f in flat:
        i = np.unravel_index(f, shape)
        if keep is None or keep(i):
            out.append(i)
        if len(out) == n:
            break
    return out


def check_loss_grad(value_and_grad, x: np.ndarray, rng, n: int = 100, keep=None, floor: float = 1e-6) -> float:
    """Max relative error between an analytic gradient and central differences."""
    _, g = value_and_grad(x)
    idx = sample_indices(x.shape, n, rng, keep)
    num = central_diff(lambda z: value_and_grad(z)[0], x, idx)
    ana = np.array([g[i] for i in idx])
    err = rel_err(ana, num, floor)
    return float(err.max()) if err.size else 0.0
