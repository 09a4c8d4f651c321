"""Task datasets built from synthetic records, plus their on-disk formats.

Two file formats are supported:

* text: one JSON object per line. The first line is a header carrying the
  generator config; every following line is one sample.
* packed: an 8-byte magic ``b"SMDSET\\x00\\x01"`` (last two bytes are the format
  version), a little-endian u32 header length, a JSON header, then fixed-size
  records of little-endian float32 values.
"""

from __future__ import annotations

import hashlib
import json
import struct
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
from numpy.typing import NDArray

from .synth import GenConfig, SampleRecord, Task, gen_sample

PACKED_MAGIC = b"SMDSET\x00\x01"
MAX_WINDOWS = 2


class DatasetFormatError(ValueError):
    pass


@dataclass
class Dataset:
    task: Task
    inputs: NDArray[np.float64]  # (N, C, L)
    targets: NDArray[np.float64]  # (N, T, L)
    apex: NDArray[np.bool_]  # (N, L) true peak apexes
    noise_std: NDArray[np.float64]
    raman_like: NDArray[np.bool_]
    shift_windows: List[List[Tuple[int, int]]]
    indices: NDArray[np.int64]
    fwhm_scale: float = 1.0
    config: Dict = field(default_factory=dict)

    def __len__(self) -> int:
        return self.inputs.shape[0]

    @property
    def length(self) -> int:
        return self.inputs.shape[2]

    def subset(self, mask_or_idx) -> "Dataset":
        idx = np.arange(len(self))[mask_or_idx]
        return Dataset(
            self.task,
            self.inputs[idx],
            self.targets[idx],
            self.apex[idx],
            self.noise_std[idx],
            self.raman_like[idx],
            [self.shift_windows[i] for i in idx],
            self.indices[idx],
            self.fwhm_scale,
            self.config,
        )

    def with_channels(self, channels: Sequence[int]) -> "Dataset":
        out = self.subset(slice(None))
        out.inputs = self.inputs[:, list(channels)]
        return out

    def peak_indices(self, i: int) -> NDArray[np.int64]:
        return np.flatnonzero(self.apex[i])

    def digest(self) -> str:
        h = hashlib.sha256()
        for arr in (self.inputs, self.targets, self.apex, self.noise_std, self.raman_like):
            h.update(np.ascontiguousarray(arr).tobytes())
        h.update(json.dumps(self.shift_windows).encode())
        return h.hexdigest()


def fwhm_scale_for(cfg: GenConfig) -> float:
    """FWHM targets are divided by the largest drawable width."""
    return float(cfg.fwhm_range[1])


def from_records(records: Sequence[SampleRecord], cfg: GenConfig) -> Dataset:
    scale = fwhm_scale_for(cfg)
    return Dataset(
        task=cfg.task,
        inputs=np.stack([r.inputs() for r in records]),
        targets=np.stack([r.targets(scale) for r in records]),
        apex=np.stack([r.labels.location > 0.5 for r in records]),
        noise_std=np.array([r.noise_std_used for r in records]),
        raman_like=np.array([r.raman_like for r in records]),
        shift_windows=[list(r.shift_positions) for r in records],
        indices=np.array([r.index for r in records], dtype=np.int64),
        fwhm_scale=scale,
        config=cfg.to_dict(),
    )


def _gen_many(args: Tuple[dict, List[int]]) -> List[SampleRecord]:
    cfg_dict, idx = args
    cfg = GenConfig.from_dict(cfg_dict)
    return [gen_sample(cfg, i) for i in idx]


def generate_records(cfg: GenConfig, indices: Iterable[int], jobs: int = 1) -> List[SampleRecord]:
    """Generate records in index order, optionally across worker processes."""
    idx = list(indices)
    if jobs <= 1 or len(idx) < 2 * jobs:
        return [gen_sample(cfg, i) for i in idx]
    shards = [idx[k::jobs] for k in range(jobs)]
    with ProcessPoolExecutor(jobs) as pool:
        parts = list(pool.map(_gen_many, [(cfg.to_dict(), s) for s in shards]))
    by_index = {r.index: r for part in parts for r in part}
    return [by_index[i] for i in idx]


def build_dataset(cfg: GenConfig, n: int, start: int = 0, jobs: int = 1) -> Dataset:
    return from_records(generate_records(cfg, range(start, start + n), jobs), cfg)


# ---------------------------------------------------------------------------
# text format


def write_text(path: str | Path, ds: Dataset) -> None:
    with open(path, "w") as fh:
        header = {
            "format": "spectramill-dataset",
            "version": 1,
            "task": ds.task.value,
            "fwhm_scale": ds.fwhm_scale,
            "config": ds.config,
        }
        fh.write(json.dumps(header) + "\n")
        for i in range(len(ds)):
            rec = {
                "index": int(ds.indices[i]),
                "input": ds.inputs[i].tolist(),
                "targets": ds.targets[i].tolist(),
                "metadata": {
                    "apex": np.flatnonzero(ds.apex[i]).tolist(),
                    "noise_std": float(ds.noise_std[i]),
                    "raman_like": bool(ds.raman_like[i]),
                    "shift_windows": [list(w) for w in ds.shift_windows[i]],
                },
            }
            fh.write(json.dumps(rec) + "\n")


def read_text(path: str | Path) -> Dataset:
    with open(path) as fh:
        header = json.loads(fh.readline())
        recs = [json.loads(line) for line in fh if line.strip()]
    length = len(recs[0]["input"][0])
    apex = np.zeros((len(recs), length), dtype=bool)
    for i, r in enumerate(recs):
        apex[i, r["metadata"]["apex"]] = True
    return Dataset(
        task=Task.parse(header["task"]),
        inputs=np.array([r["input"] for r in recs], dtype=np.float64),
        targets=np.array([r["targets"] for r in recs], dtype=np.float64),
        apex=apex,
        noise_std=np.array([r["metadata"]["noise_std"] for r in recs]),
        raman_like=np.array([r["metadata"]["raman_like"] for r in recs], dtype=bool),
        shift_windows=[[tuple(w) for w in r["metadata"]["shift_windows"]] for r in recs],
        indices=np.array([r["index"] for r in recs], dtype=np.int64),
        fwhm_scale=float(header["fwhm_scale"]),
        config=header["config"],
    )


# ---------------------------------------------------------------------------
# packed format


def _record_width(c: int, t: int, length: int) -> int:
    # index, inputs, targets, apex, noise_std, raman_like, windows
    return 1 + c * length + t * length + length + 2 + 2 * MAX_WINDOWS


def write_packed(path: str | Path, ds: Dataset) -> None:
    n, c, length = ds.inputs.shape
    t = ds.targets.shape[1]
    header = json.dumps(
        {
            "task": ds.task.value,
            "n": n,
            "channels": c,
            "targets": t,
            "length": length,
            "fwhm_scale": ds.fwhm_scale,
            "config": ds.config,
        }
    ).encode()
    rows = np.empty((n, _record_width(c, t, length)), dtype="<f4")
    for i in range(n):
        win = np.full(2 * MAX_WINDOWS, -1.0)
        for k, (a, b) in enumerate(ds.shift_windows[i][:MAX_WINDOWS]):
            win[2 * k : 2 * k + 2] = (a, b)
        rows[i] = np.concatenate(
            [
                [ds.indices[i]],
                ds.inputs[i].ravel(),
                ds.targets[i].ravel(),
                ds.apex[i].astype(float),
                [ds.noise_std[i], float(ds.raman_like[i])],
                win,
            ]
        )
    with open(path, "wb") as fh:
        fh.write(PACKED_MAGIC)
        fh.write(struct.pack("<I", len(header)))
        fh.write(header)
        fh.write(rows.tobytes())


def read_packed(path: str | Path) -> Dataset:
    blob = Path(path).read_bytes()
    if blob[:6] != PACKED_MAGIC[:6]:
        raise DatasetFormatError(f"{path} is not a packed spectramill dataset")
    if blob[6:8] != PACKED_MAGIC[6:8]:
        raise DatasetFormatError(f"unsupported packed dataset version {blob[6:8]!r}")
    (hlen,) = struct.unpack("<I", blob[8:12])
    header = json.loads(blob[12 : 12 + hlen])
    n, c, t, length = header["n"], header["channels"], header["targets"], header["length"]
    rows = np.frombuffer(blob[12 + hlen :], dtype="<f4").reshape(n, _record_width(c, t, length))
    rows = rows.astype(np.float64)
    pos = 1
    inputs = rows[:, pos : pos + c * length].reshape(n, c, length)
    pos += c * length
    targets = rows[:, pos : pos + t * length].reshape(n, t, length)
    pos += t * length
    apex = rows[:, pos : pos + length] > 0.5
    pos += length
    noise_std, raman = rows[:, pos], rows[:, pos + 1] > 0.5
    win = rows[:, pos + 2 :].astype(int)
    windows = [
        [(int(w[2 * k]), int(w[2 * k + 1])) for k in range(MAX_WINDOWS) if w[2 * k] >= 0] for w in win
    ]
    return Dataset(
        task=Task.parse(header["task"]),
        inputs=inputs,
        targets=targets,
        apex=apex,
        noise_std=noise_std,
        raman_like=raman,
        shift_windows=windows,
        indices=rows[:, 0].astype(np.int64),
        fwhm_scale=float(header["fwhm_scale"]),
        config=header["config"],
    )


def save(path: str | Path, ds: Dataset, fmt: str = "text") -> None:
    if fmt == "text":
        write_text(path, ds)
    elif fmt == "packed":
        write_packed(path, ds)
    else:
        raise DatasetFormatError(f"unknown dataset format {fmt!r}")


def load(path: str | Path) -> Dataset:
    with open(path, "rb") as fh:
        head = fh.read(6)
    return read_packed(path) if head == PACKED_MAGIC[:6] else read_text(path)
