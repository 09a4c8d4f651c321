"""Architecture descriptions for the four pipeline networks."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, replace
from typing import Tuple

from ..synth import Task
from .functional import ACTIVATIONS


class SpecError(ValueError):
    pass


@dataclass(frozen=True)
class ModelSpec:
    name: Task
    kernels: Tuple[int, ...]
    filters: Tuple[int, ...]
    activation: str
    hybrid: bool
    input_channels: int = 3
    output_channels: int = 1
    dropout_rate: float = 0.1
    drop_path_rate: float = 0.05
    l1: float = 1e-6
    l2: float = 1e-5
    blocks_per_level: int = 2
    # per-channel input selection; lets ablations feed a subset of the stack
    channels: Tuple[int, ...] = ()

    def __post_init__(self) -> None:
        object.__setattr__(self, "name", Task.parse(self.name))
        object.__setattr__(self, "kernels", tuple(int(k) for k in self.kernels))
        object.__setattr__(self, "filters", tuple(int(f) for f in self.filters))
        if not self.channels:
            object.__setattr__(self, "channels", tuple(range(self.input_channels)))
        object.__setattr__(self, "channels", tuple(int(c) for c in self.channels))
        self.validate()

    def validate(self) -> None:
        if len(self.kernels) != len(self.filters) or not self.kernels:
            raise SpecError("kernels and filters must be non-empty and equally long")
        if any(k < 1 for k in self.kernels) or any(f < 1 for f in self.filters):
            raise SpecError("kernel sizes and filter counts must be positive")
        if self.activation not in ACTIVATIONS:
            raise SpecError(f"unknown activation {self.activation!r}")
        if len(self.channels) != self.input_channels:
            raise SpecError("channels must list one source index per input channel")
        if not 0 <= self.dropout_rate < 1 or not 0 <= self.drop_path_rate < 1:
            raise SpecError("dropout rates must lie in [0, 1)")
        if self.blocks_per_level < 1:
            raise SpecError("blocks_per_level must be at least 1")
        if self.l1 < 0 or self.l2 < 0:
            raise SpecError("regularization weights must be non-negative")

    def pooled(self, level: int) -> bool:
        """Levels with 1x1 kernels skip sampling and skip connections in hybrid nets."""
        return not (self.hybrid and self.kernels[level] == 1)

    def capped(self, max_filters: int) -> "ModelSpec":
        return replace(self, filters=tuple(min(f, max_filters) for f in self.filters))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["name"] = self.name.value
        d["kernels"] = list(self.kernels)
        d["filters"] = list(self.filters)
        d["channels"] = list(self.channels)
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelSpec":
        return cls(**d)


DENOISER = ModelSpec(Task.DENOISER, (3, 5, 7, 9), (17, 19, 21, 23), "swish", hybrid=False)
BASELINE_REMOVER = ModelSpec(
    Task.BASELINE_REMOVER, (5, 7, 9, 11, 11, 15), (20, 22, 24, 26, 22, 28), "mish", hybrid=False
)
PEAK_LOCATOR = ModelSpec(
    Task.PEAK_LOCATOR, (15, 1, 15, 1, 1, 15, 1, 4), (20, 20, 6, 20, 10, 17, 18, 14), "gelu", hybrid=True
)
# the fitter has one more level of filters than kernels, so it reuses the locator kernels
PEAK_FITTER = ModelSpec(
    Task.PEAK_FITTER,
    (15, 1, 15, 1, 1, 15, 1, 4),
    (24, 20, 8, 20, 10, 20, 18, 16),
    "swish",
    hybrid=True,
    input_channels=4,
    output_channels=2,
)

PRESETS = {
    Task.DENOISER: DENOISER,
    Task.BASELINE_REMOVER: BASELINE_REMOVER,
    Task.PEAK_LOCATOR: PEAK_LOCATOR,
    Task.PEAK_FITTER: PEAK_FITTER,
}


def preset(task: "str | Task") -> ModelSpec:
    return PRESETS[Task.parse(task)]
