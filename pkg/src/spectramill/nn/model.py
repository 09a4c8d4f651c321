"""Multi-stream residual U-Nets built from a ModelSpec.

Each input channel (raw, d1, d2, and for the fitter the location labels) runs
through its own U-Net pathway. Pathway outputs are concatenated and fused by a
1x1 convolution to the output channels; the locator ends in a sigmoid.

Pathway layout for kernels k[0..n-1] and filters f[0..n-1]:

* encoder level i < n-1: residual blocks (k[i], f[i]), keep a skip, max pool
* level n-1 is the bottleneck
* decoder level i (descending): upsample, up-convolution (k[i]), concat skip,
  residual blocks (k[i], f[i])

Each level stacks ``spec.blocks_per_level`` residual blocks.

In hybrid nets, levels with k[i] == 1 keep neither a skip nor a pool/upsample
pair. Pooling pads odd lengths by one point and upsampling crops back, so any
input length (555 included) round-trips.
"""

from __future__ import annotations

from collections import OrderedDict
from dataclasses import dataclass
from typing import Dict, List, Optional

import numpy as np

from ..synth import Task
from . import functional as F
from .spec import ModelSpec
from .tensor import Tensor, parameter


@dataclass
class Context:
    training: bool
    rng: np.random.Generator


class Conv1d:
    def __init__(self, cin: int, cout: int, kernel: int, rng: np.random.Generator, dtype, name: str) -> None:
        bound = np.sqrt(6.0 / (cin * kernel))  # He-uniform
        self.weight = parameter(rng.uniform(-bound, bound, (cout, cin, kernel)).astype(dtype), f"{name}.weight")
        self.bias = parameter(np.zeros(cout, dtype=dtype), f"{name}.bias")

    def params(self) -> List[Tensor]:
        return [self.weight, self.bias]

    def __call__(self, x: Tensor) -> Tensor:
        return F.conv1d(x, self.weight, self.bias)


class BatchNorm1d:
    def __init__(self, ch: int, dtype, name: str, momentum: float = 0.1, eps: float = 1e-5) -> None:
        self.gamma = parameter(np.ones(ch, dtype=dtype), f"{name}.gamma")
        self.beta = parameter(np.zeros(ch, dtype=dtype), f"{name}.beta")
        self.running_mean = np.zeros(ch, dtype=dtype)
        self.running_var = np.ones(ch, dtype=dtype)
        self.name = name
        self.momentum = momentum
        self.eps = eps

    def params(self) -> List[Tensor]:
        return [self.gamma, self.beta]

    def buffers(self) -> Dict[str, np.ndarray]:
        return {f"{self.name}.running_mean": self.running_mean, f"{self.name}.running_var": self.running_var}

    def __call__(self, x: Tensor, ctx: Context) -> Tensor:
        return F.batch_norm(
            x, self.gamma, self.beta, self.running_mean, self.running_var, ctx.training, self.momentum, self.eps
        )


class ResidualBlock:
    """conv-BN-act-dropout-conv-BN, drop-path on the branch, shortcut, act."""

    def __init__(self, cin: int, cout: int, kernel: int, spec: ModelSpec, rng, dtype, name: str) -> None:
        self.conv1 = Conv1d(cin, cout, kernel, rng, dtype, f"{name}.conv1")
        self.bn1 = BatchNorm1d(cout, dtype, f"{name}.bn1")
        self.conv2 = Conv1d(cout, cout, kernel, rng, dtype, f"{name}.conv2")
        self.bn2 = BatchNorm1d(cout, dtype, f"{name}.bn2")
        self.shortcut = Conv1d(cin, cout, 1, rng, dtype, f"{name}.shortcut") if cin != cout else None
        self.activation = spec.activation
        self.dropout_rate = spec.dropout_rate
        self.drop_path_rate = spec.drop_path_rate

    def modules(self):
        mods = [self.conv1, self.bn1, self.conv2, self.bn2]
        return mods + ([self.shortcut] if self.shortcut is not None else [])

    def __call__(self, x: Tensor, ctx: Context) -> Tensor:
        h = F.activation(self.bn1(self.conv1(x), ctx), self.activation)
        h = F.dropout(h, self.dropout_rate, ctx.rng, ctx.training)
        h = self.bn2(self.conv2(h), ctx)
        h = F.drop_path(h, self.drop_path_rate, ctx.rng, ctx.training)
        skip = self.shortcut(x) if self.shortcut is not None else x
        return F.activation(F.add(h, skip), self.activation)


class Pathway:
    def __init__(self, spec: ModelSpec, rng, dtype, name: str) -> None:
        n = len(spec.kernels)
        reps = spec.blocks_per_level
        self.spec = spec
        self.encoder: List[List[ResidualBlock]] = []
        cin = 1
        for i in range(n):
            level = []
            for r in range(reps):
                level.append(
                    ResidualBlock(cin, spec.filters[i], spec.kernels[i], spec, rng, dtype, f"{name}.enc{i}.{r}")
                )
                cin = spec.filters[i]
            self.encoder.append(level)
        self.upconv: Dict[int, Conv1d] = {}
        self.decoder: List[List[ResidualBlock]] = []
        for i in range(n - 2, -1, -1):
            extra = 0
            if spec.pooled(i):
                self.upconv[i] = Conv1d(cin, cin, spec.kernels[i], rng, dtype, f"{name}.up{i}")
                extra = spec.filters[i]
            level = []
            for r in range(reps):
                level.append(
                    ResidualBlock(cin + extra, spec.filters[i], spec.kernels[i], spec, rng, dtype, f"{name}.dec{i}.{r}")
                )
                cin, extra = spec.filters[i], 0
            self.decoder.append(level)
        self.out_channels = cin

    def modules(self):
        mods = []
        for level in self.encoder:
            for blk in level:
                mods.extend(blk.modules())
        for level, i in zip(self.decoder, range(len(self.spec.kernels) - 2, -1, -1)):
            if i in self.upconv:
                mods.append(self.upconv[i])
            for blk in level:
                mods.extend(blk.modules())
        return mods

    def __call__(self, x: Tensor, ctx: Context) -> Tensor:
        n = len(self.spec.kernels)
        skips: List[Optional[Tensor]] = []
        h = x
        for i, level in enumerate(self.encoder):
            for blk in level:
                h = blk(h, ctx)
            if i == n - 1:
                break
            if self.spec.pooled(i):
                skips.append(h)
                h = F.maxpool1d(h)
            else:
                skips.append(None)
        for level, i in zip(self.decoder, range(n - 2, -1, -1)):
            skip = skips[i]
            if skip is not None:
                h = F.upsample(h, skip.data.shape[2])
                h = F.activation(self.upconv[i](h), self.spec.activation)
                h = F.concat([h, skip])
            for blk in level:
                h = blk(h, ctx)
        return h


class Model:
    def __init__(self, spec: ModelSpec, seed: int = 0, dtype=np.float32) -> None:
        self.spec = spec
        self.dtype = np.dtype(dtype)
        rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0x5EED]))
        self.pathways = [Pathway(spec, rng, self.dtype, f"path{j}") for j in range(spec.input_channels)]
        fused = sum(p.out_channels for p in self.pathways)
        self.fuse = Conv1d(fused, spec.output_channels, 1, rng, self.dtype, "fuse")
        self.dropout_rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0xD20F]))

    def modules(self):
        return [m for p in self.pathways for m in p.modules()] + [self.fuse]

    def parameters(self) -> List[Tensor]:
        return [t for m in self.modules() for t in m.params()]

    def named_parameters(self) -> "OrderedDict[str, Tensor]":
        return OrderedDict((t.name, t) for t in self.parameters())

    def buffers(self) -> "OrderedDict[str, np.ndarray]":
        out: "OrderedDict[str, np.ndarray]" = OrderedDict()
        for m in self.modules():
            if isinstance(m, BatchNorm1d):
                out.update(m.buffers())
        return out

    def n_parameters(self) -> int:
        return int(sum(t.data.size for t in self.parameters()))

    def state(self) -> "OrderedDict[str, np.ndarray]":
        """Parameters then buffers, copied, in deterministic construction order."""
        out = OrderedDict((k, t.data.copy()) for k, t in self.named_parameters().items())
        out.update((k, v.copy()) for k, v in self.buffers().items())
        return out

    def load_state(self, state: Dict[str, np.ndarray]) -> None:
        params = self.named_parameters()
        bufs = self.buffers()
        missing = (set(params) | set(bufs)) - set(state)
        if missing:
            raise KeyError(f"state is missing {sorted(missing)[:3]}...")
        for k, t in params.items():
            if state[k].shape != t.data.shape:
                raise ValueError(f"shape mismatch for {k}: {state[k].shape} vs {t.data.shape}")
            t.data = np.array(state[k], dtype=self.dtype)
        for k, b in bufs.items():
            b[...] = state[k]

    def forward(self, x, training: bool = False) -> Tensor:
        """x: (B, C, L) array or Tensor holding at least the channels named in the spec."""
        if not isinstance(x, Tensor):
            x = Tensor(np.asarray(x, dtype=self.dtype))
        if x.data.ndim != 3:
            raise ValueError(f"expected (batch, channels, length) input, got {x.data.shape}")
        ctx = Context(training, self.dropout_rng)
        outs = []
        for j, path in enumerate(self.pathways):
            xj = F.select_channels(x, [self.spec.channels[j]])
            outs.append(path(xj, ctx))
        y = self.fuse(F.concat(outs))
        if self.spec.name is Task.PEAK_LOCATOR:
            y = F.sigmoid(y)
        return y

    __call__ = forward

    def predict(self, x, batch_size: int = 64) -> np.ndarray:
        """Eval-mode forward over a batch, returned as float64."""
        x = np.asarray(x)
        outs = [self.forward(x[i : i + batch_size]).data for i in range(0, x.shape[0], batch_size)]
        return np.concatenate(outs).astype(np.float64)


def build_model(spec: ModelSpec, seed: int = 0, dtype=np.float32) -> Model:
    spec.validate()
    return Model(spec, seed, dtype)
