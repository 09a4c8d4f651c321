"""Binary checkpoint format.

Layout (little-endian)::

    b"SMLL" | u32 version | u32 n | spec JSON (n bytes)
    | u32 m | header JSON (m bytes): tensor names/shapes, config digest, meta
    | float32 blobs in header order

Weights are stored as float32; models built in float32 round-trip bit-exactly.
"""

from __future__ import annotations

import hashlib
import json
import struct
from collections import OrderedDict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict

import numpy as np

from .model import Model, build_model
from .spec import ModelSpec

MAGIC = b"SMLL"
VERSION = 1


class CheckpointError(ValueError):
    pass


def config_digest(config: dict) -> str:
    return hashlib.sha256(json.dumps(config, sort_keys=True).encode()).hexdigest()


@dataclass
class Checkpoint:
    spec: ModelSpec
    state: "OrderedDict[str, np.ndarray]"
    config_digest: str = ""
    meta: Dict = field(default_factory=dict)

    @classmethod
    def from_model(cls, model: Model, config: dict | None = None, meta: dict | None = None) -> "Checkpoint":
        return cls(model.spec, model.state(), config_digest(config or {}), dict(meta or {}))

    def to_model(self, dtype=np.float32) -> Model:
        m = build_model(self.spec, 0, dtype)
        m.load_state(self.state)
        return m

    def n_parameters(self) -> int:
        return self.to_model().n_parameters()

    def to_bytes(self) -> bytes:
        spec = self.spec.to_json().encode()
        header = json.dumps(
            {
                "tensors": [[k, list(v.shape)] for k, v in self.state.items()],
                "config_digest": self.config_digest,
                "meta": self.meta,
            },
            sort_keys=True,
        ).encode()
        parts = [MAGIC, struct.pack("<II", VERSION, len(spec)), spec, struct.pack("<I", len(header)), header]
        parts += [np.ascontiguousarray(v, dtype="<f4").tobytes() for v in self.state.values()]
        return b"".join(parts)

    @classmethod
    def from_bytes(cls, buf: bytes) -> "Checkpoint":
        if buf[:4] != MAGIC:
            raise CheckpointError("not a checkpoint file (bad magic)")
        version, n = struct.unpack_from("<II", buf, 4)
        if version != VERSION:
            raise CheckpointError(f"unsupported checkpoint version {version}")
        pos = 12
        spec = ModelSpec.from_dict(json.loads(buf[pos : pos + n]))
        pos += n
        (m,) = struct.unpack_from("<I", buf, pos)
        pos += 4
        header = json.loads(buf[pos : pos + m])
        pos += m
        state: "OrderedDict[str, np.ndarray]" = OrderedDict()
        for name, shape in header["tensors"]:
            count = int(np.prod(shape))
            state[name] = np.frombuffer(buf, dtype="<f4", count=count, offset=pos).reshape(shape).astype(np.float32)
            pos += 4 * count
        if pos != len(buf):
            raise CheckpointError("trailing bytes after weight blobs")
        return cls(spec, state, header["config_digest"], header["meta"])

    def save(self, path: str | Path) -> None:
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def load(cls, path: str | Path) -> "Checkpoint":
        return cls.from_bytes(Path(path).read_bytes())
