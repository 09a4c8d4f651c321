"""One paired toy ablation with a short seed list.

Run: python demos/loss_ablation.py [study] [n_seeds]
"""

from __future__ import annotations

import sys
import time
from dataclasses import replace

from spectramill.evaluation import AblationConfig, Study, ablation


def main(study: Study, n_seeds: int) -> None:
    cfg = replace(AblationConfig(), seeds=tuple(range(n_seeds)))
    t0 = time.perf_counter()
    report = ablation(study, cfg, progress=print)
    print(report.summary(), f"({time.perf_counter() - t0:.0f}s)")


if __name__ == "__main__":
    name = sys.argv[1] if len(sys.argv) > 1 else Study.WEIGHTED_VS_PLAIN_MSE.value
    main(Study(name), int(sys.argv[2]) if len(sys.argv) > 2 else 2)
