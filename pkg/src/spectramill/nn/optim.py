"""Adam with L1/L2 weight penalties."""

from __future__ import annotations

from dataclasses import dataclass
from typing import List

import numpy as np

from .tensor import Tensor


@dataclass(frozen=True)
class AdamConfig:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


class Adam:
    def __init__(self, params: List[Tensor], cfg: AdamConfig = AdamConfig()) -> None:
        self.params = list(params)
        self.cfg = cfg
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]
        self.t = 0

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def step(self) -> None:
        c = self.cfg
        self.t += 1
        bc1 = 1.0 - c.beta1**self.t
        bc2 = 1.0 - c.beta2**self.t
        for p, m, v in zip(self.params, self.m, self.v):
            if p.grad is None:
                continue
            g = p.grad
            m *= c.beta1
            m += (1.0 - c.beta1) * g
            v *= c.beta2
            v += (1.0 - c.beta2) * g * g
            p.data = (p.data - c.lr * (m / bc1) / (np.sqrt(v / bc2) + c.eps)).astype(p.data.dtype, copy=False)


def weight_penalty(params: List[Tensor], l1: float, l2: float) -> float:
    """Adds the L1/L2 gradient to every conv weight and returns the penalty value."""
    total = 0.0
    if l1 == 0 and l2 == 0:
        return total
    for p in params:
        if not p.name.endswith(".weight") or p.data.ndim != 3:
            continue
        w = p.data
        total += l1 * float(np.abs(w).sum()) + l2 * float((w.astype(np.float64) ** 2).sum())
        g = l1 * np.sign(w) + 2.0 * l2 * w
        p.accumulate(g.astype(w.dtype))
    return total
