"""Run the four-stage pipeline on a fresh easy spectrum.

Uses the bundled toy checkpoints; pass --retrain to train a new set
(a few minutes on one core).

Run: python demos/toy_pipeline.py [--retrain] [out_dir]
"""

from __future__ import annotations

import argparse
from pathlib import Path

import numpy as np

from spectramill.datasets import build_dataset
from spectramill.evaluation import EXAM_INDEX_OFFSET, sweep
from spectramill.pipeline import Pipeline
from spectramill.plotting import stage_plot, sweep_heatmap
from spectramill.synth import Task
from spectramill.toys import ToyRecipe, bundled_models, easy_exam, score_easy, train_toy_pipeline


def main() -> None:
    ap = argparse.ArgumentParser()
    ap.add_argument("out", nargs="?", default="demo_out")
    ap.add_argument("--retrain", action="store_true")
    args = ap.parse_args()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    recipe = ToyRecipe()
    pipe = train_toy_pipeline(recipe, log=print) if args.retrain else Pipeline.load(bundled_models())

    cases = easy_exam(recipe, n=50)
    case = cases[0]
    report = pipe.run(case.raw)
    print(f"truth centers {case.centers.tolist()}, intensities {np.round(case.intensities, 3).tolist()}")
    for p in report.peaks:
        print(f"  found index {p.index}  confidence {p.confidence:.3f}  intensity {p.intensity:.3f}  fwhm {p.fwhm:.3g}")
    raw = case.raw.values
    stage_plot(report, (raw - raw.min()) / np.ptp(raw), out / "toy_stages.svg")

    print(score_easy(pipe, cases))
    grid = sweep(pipe.locator, build_dataset(recipe.gen_config(Task.PEAK_LOCATOR), 100, EXAM_INDEX_OFFSET))
    sweep_heatmap(grid, out / "toy_sweep.svg", "toy locator accuracy")
    print(f"wrote {out / 'toy_stages.svg'} and {out / 'toy_sweep.svg'}")


if __name__ == "__main__":
    main()
