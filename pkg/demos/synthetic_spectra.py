"""Draw one synthetic sample per stage and plot its components.

Run: python demos/synthetic_spectra.py [out_dir]
"""

from __future__ import annotations

import sys
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from spectramill.synth import GenConfig, Task, gen_sample  # noqa: E402


def main(out: Path) -> None:
    out.mkdir(parents=True, exist_ok=True)
    fig, axes = plt.subplots(len(Task), 1, figsize=(8, 10), sharex=True)
    for ax, task in zip(axes, Task):
        rec = gen_sample(GenConfig.for_task(task, seed=7), index=3)
        x = rec.clean_peaks.axis
        ax.plot(x, rec.input.raw, lw=1, label="input")
        ax.plot(x, rec.baseline, lw=1, label="baseline")
        ax.plot(x, rec.clean_peaks.values, lw=1, label="peaks")
        for p in rec.peaks:
            ax.axvline(x[int(round(p.center))], color="gray", lw=0.5, ls=":")
        ax.set_title(f"{task.value}: {len(rec.peaks)} peaks, noise std {rec.noise_std_used:g}, "
                     f"{len(rec.shift_positions)} shifts", fontsize=9, loc="left")
        ax.legend(fontsize=7, loc="upper right")
    fig.tight_layout()
    path = out / "synthetic_spectra.svg"
    fig.savefig(path, format="svg")
    print(f"wrote {path}")


if __name__ == "__main__":
    main(Path(sys.argv[1] if len(sys.argv) > 1 else "demo_out"))
