"""Command-line front end.

Every command writes ``<output>.manifest.json`` next to its main output with
the resolved config, its digest, input/output digests and the tool version.
Exit codes: 0 success, 2 config error, 3 I/O error, 4 divergence, 5 digest
mismatch on resume.
"""

from __future__ import annotations

import argparse
import contextlib
import copy
import hashlib
import json
import os
import sys
from dataclasses import replace
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np

from . import __version__
from . import datasets as D
from . import losses as L
from .core import read_spectrum_csv
from .nn.checkpoint import Checkpoint, CheckpointError, config_digest
from .nn.model import build_model
from .nn.optim import AdamConfig
from .nn.spec import ModelSpec, SpecError, preset
from .synth import GenConfig, Task
from .train import (
    BaselineObjective,
    DivergenceError,
    OBJECTIVES,
    PeakFitObjective,
    TrainConfig,
    ViperObjective,
    WeightedMseObjective,
    train,
)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_DIVERGENCE = 4
EXIT_DIGEST = 5


class ConfigError(ValueError):
    pass


class DigestMismatch(ValueError):
    pass


DEFAULTS: Dict[str, dict] = {
    "gen": {"task": "denoiser", "n": 100, "seed": 0, "start": 0, "length": 555, "format": "text", "generator": {}},
    "train": {
        "task": None,
        "loss": None,
        "epochs": 30,
        "batch_size": 32,
        "seed": 0,
        "adam": {"lr": 1e-3, "beta1": 0.9, "beta2": 0.999, "eps": 1e-8},
        "max_filters": None,
        "model": {},
        "viper": {"alpha": 1.0, "beta": 1.0, "gamma": 1.0, "v": 8.0, "v_start": 8.0, "v_end": 2.0, "anneal_frac": 0.6},
        "weighted_mse": {str(k): v for k, v in L.DEFAULT_MSE_TABLE.items()},
        "baseline": {"tv1_alpha": 0.5, "tv2_beta": 5e-4, "raman_mse_factor": 30.0, "shift_mse_factor": 6.0,
                     "shift_halfwidth": 3, "tv_reduction": "sum"},
        "peakfit": {"apex_weight": 5.0, "t_mce": 0.94, "t_mqe": 0.97},
    },
    "run": {"threshold": 0.5, "window": 6, "diameter": False, "length": None},
    "sweep": {"thresholds": [0.3, 0.5, 0.8], "windows": [6, 12, 18], "match_tol": 1, "diameter": False},
    "ablate": {"study": "viper_vs_ce_mse", "n_train": 400, "n_exam": 200, "epochs": 20, "seeds": [0, 1, 2, 3, 4],
               "length": 128, "max_filters": 8, "batch_size": 32, "lr": None, "viper_alpha": 1e-4},
    "compare": {},
}


def sha256_file(path: str | Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def write_manifest(out: Path, command: str, config: dict, inputs: List[Path], outputs: List[Path]) -> Path:
    path = out.parent / f"{out.name}.manifest.json"
    manifest = {
        "command": command,
        "version": __version__,
        "config": config,
        "config_digest": config_digest(config),
        "inputs": {str(p): sha256_file(p) for p in inputs if Path(p).is_file()},
        "outputs": {str(p): sha256_file(p) for p in outputs if Path(p).is_file()},
    }
    path.write_text(json.dumps(manifest, indent=1, sort_keys=True))
    return path


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if k not in out and out:
            raise ConfigError(f"unknown config key {k!r}")
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v) if out[k] else dict(v)
        else:
            out[k] = v
    return out


def resolve_config(command: str, args: argparse.Namespace, flags: Dict[str, str]) -> dict:
    """Defaults, then the --config file, then explicit flags."""
    cfg = copy.deepcopy(DEFAULTS[command])
    if getattr(args, "config", None):
        try:
            loaded = json.loads(Path(args.config).read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"malformed config {args.config}: {exc}") from exc
        cfg = _merge(cfg, loaded.get(command, loaded))
    for flag, key in flags.items():
        value = getattr(args, flag, None)
        if value is not None:
            cfg[key] = value
    if "seed" in cfg and getattr(args, "seed", None) is None and os.environ.get("SPECTRAMILL_SEED"):
        cfg["seed"] = int(os.environ["SPECTRAMILL_SEED"])
    return cfg


@contextlib.contextmanager
def deterministic(enabled: bool):
    """Single-threaded BLAS so reductions happen in a fixed order."""
    if not enabled:
        yield
        return
    from threadpoolctl import threadpool_limits

    with threadpool_limits(limits=1):
        yield


# ---------------------------------------------------------------------------
# commands


def cmd_gen(args) -> int:
    cfg = resolve_config("gen", args, {"task": "task", "n": "n", "seed": "seed", "start": "start",
                                       "length": "length", "format": "format"})
    gen = GenConfig.for_task(cfg["task"], length=cfg["length"], seed=cfg["seed"], **_gen_overrides(cfg))
    ds = D.build_dataset(gen, cfg["n"], cfg["start"], args.jobs)
    out = Path(args.out)
    D.save(out, ds, cfg["format"])
    write_manifest(out, "gen", cfg, [], [out])
    print(f"wrote {len(ds)} {gen.task.value} samples to {out} (sha256 {ds.digest()[:12]})")
    return EXIT_OK


def _gen_overrides(cfg: dict) -> dict:
    g = dict(cfg["generator"])
    fields = set(GenConfig.__dataclass_fields__)
    bad = set(g) - fields
    if bad:
        raise ConfigError(f"unknown generator fields {sorted(bad)}")
    base = GenConfig.for_task(cfg["task"]).to_dict()
    base.update(g)
    full = GenConfig.from_dict(base)
    return {k: getattr(full, k) for k in g}


def _objective(task: Task, cfg: dict):
    name = cfg["loss"] or {"denoiser": "weighted_mse", "baseline_remover": "baseline_composite",
                           "peak_locator": "viper", "peak_fitter": "dynamic_peakfit"}[task.value]
    if name not in OBJECTIVES:
        raise ConfigError(f"unknown loss {name!r}; choose from {sorted(OBJECTIVES)}")
    if name == "viper":
        return ViperObjective(L.ViperParams(**cfg["viper"]))
    if name == "weighted_mse":
        return WeightedMseObjective(L.WeightedMseSchedule({float(k): float(v) for k, v in cfg["weighted_mse"].items()}))
    if name == "baseline_composite":
        return BaselineObjective(L.BaselineLossParams(**cfg["baseline"]))
    if name == "dynamic_peakfit":
        return PeakFitObjective(L.PeakFitLossParams(**cfg["peakfit"]))
    return OBJECTIVES[name]()


def cmd_train(args) -> int:
    cfg = resolve_config("train", args, {"task": "task", "loss": "loss", "epochs": "epochs",
                                         "batch_size": "batch_size", "seed": "seed", "max_filters": "max_filters"})
    if args.lr is not None:
        cfg["adam"]["lr"] = args.lr
    if args.print_config:
        print(json.dumps(cfg, indent=1))
        return EXIT_OK
    if not args.data or not args.out:
        raise ConfigError("train needs --data and --out")
    data = D.load(args.data)
    exam = D.load(args.exam) if args.exam else None
    task = Task.parse(cfg["task"] or data.task)
    if task is not data.task:
        raise ConfigError(f"--task {task.value} does not match {data.task.value} data")
    spec = preset(task)
    if cfg["model"]:
        spec = ModelSpec.from_dict({**spec.to_dict(), **cfg["model"]})
    if cfg["max_filters"]:
        spec = spec.capped(int(cfg["max_filters"]))
    objective = _objective(task, cfg)
    model = build_model(spec, seed=cfg["seed"])
    digest = config_digest(cfg)
    if args.resume:
        prev = Checkpoint.load(args.resume)
        if prev.config_digest != digest:
            raise DigestMismatch(f"{args.resume} was trained with a different config")
        model.load_state(prev.state)
    tcfg = TrainConfig(cfg["epochs"], cfg["batch_size"], cfg["seed"], AdamConfig(**cfg["adam"]))
    result = train(model, data, objective, tcfg, exam,
                   on_epoch=lambda e: print(f"epoch {e.epoch}: train {e.train_loss:.6g} exam {e.exam_mse:.6g}"))
    out = Path(args.out)
    meta = {"fwhm_scale": data.fwhm_scale, "length": data.length, "best_epoch": result.best_epoch,
            "loss": objective.describe(), "train": tcfg.to_dict()}
    Checkpoint(spec, model.state(), digest, meta).save(out)
    metrics = Path(args.metrics) if args.metrics else out.with_suffix(".metrics.csv")
    result.write_csv(metrics)
    inputs = [Path(args.data)] + ([Path(args.exam)] if args.exam else [])
    write_manifest(out, "train", cfg, inputs, [out, metrics])
    print(f"best exam MSE {min(e.exam_mse for e in result.log):.6g} at epoch {result.best_epoch}; saved {out}")
    return EXIT_OK


def cmd_run(args) -> int:
    from .pipeline import Pipeline, run_pipeline
    from .plotting import stage_plot

    cfg = resolve_config("run", args, {"threshold": "threshold", "window": "window", "length": "length"})
    if args.diameter:
        cfg["diameter"] = True
    pipe = Pipeline.load(args.models)
    length = cfg["length"] or pipe.length
    spec, _ = read_spectrum_csv(args.input, length)
    report = run_pipeline(spec, pipe, cfg["threshold"], cfg["window"], cfg["diameter"])
    out = Path(args.out)
    report.save(out)
    outputs = [out]
    if args.plot:
        stage_plot(report, (spec.values - spec.values.min()) / np.ptp(spec.values), args.plot)
        outputs.append(Path(args.plot))
    inputs = [Path(args.input)] + sorted(Path(args.models).glob("*.smll"))
    write_manifest(out, "run", cfg, inputs, outputs)
    print(f"{len(report.peaks)} peaks")
    for p in report.peaks:
        print(f"  position {p.position:.4g}  confidence {p.confidence:.3f}  intensity {p.intensity:.4g}  fwhm {p.fwhm:.4g}")
    return EXIT_OK


def _floats(text: str) -> List[float]:
    return [float(x) for x in text.split(",") if x]


def _ints(text: str) -> List[int]:
    return [int(x) for x in text.split(",") if x]


def cmd_sweep(args) -> int:
    from .evaluation import sweep
    from .plotting import sweep_heatmap

    cfg = resolve_config("sweep", args, {"match_tol": "match_tol"})
    if args.thresholds:
        cfg["thresholds"] = _floats(args.thresholds)
    if args.windows:
        cfg["windows"] = _ints(args.windows)
    if args.diameter:
        cfg["diameter"] = True
    cp = Checkpoint.load(args.model)
    if cp.spec.name is not Task.PEAK_LOCATOR:
        raise ConfigError("sweep needs a peak_locator checkpoint")
    exam = D.load(args.data)
    grid = sweep(cp.to_model(), exam, cfg["thresholds"], cfg["windows"], cfg["match_tol"], cfg["diameter"])
    out = Path(args.out)
    grid.write_csv(out)
    outputs = [out]
    if args.plot:
        sweep_heatmap(grid, args.plot)
        outputs.append(Path(args.plot))
    write_manifest(out, "sweep", cfg, [Path(args.model), Path(args.data)], outputs)
    for i, t in enumerate(grid.thresholds):
        print(f"threshold {t:g}: " + "  ".join(f"w{w}={grid.cells[i, j]:.3f}" for j, w in enumerate(grid.windows)))
    return EXIT_OK


def cmd_ablate(args) -> int:
    from .evaluation import AblationConfig, Study, ablation
    from .plotting import loss_curves

    cfg = resolve_config("ablate", args, {"study": "study", "n_train": "n_train", "n_exam": "n_exam",
                                          "epochs": "epochs", "length": "length"})
    if args.seeds:
        cfg["seeds"] = _ints(args.seeds)
    try:
        study = Study(cfg["study"])
    except ValueError as exc:
        raise ConfigError(f"unknown study {cfg['study']!r}") from exc
    acfg = AblationConfig(**{k: v for k, v in cfg.items() if k != "study"} | {"seeds": tuple(cfg["seeds"]),
                                                                             "jobs": args.jobs})
    report = ablation(study, acfg, progress=print)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    table = out_dir / f"{study.value}.csv"
    report.write_csv(table)
    curves = out_dir / f"{study.value}_curves.svg"
    loss_curves(report.logs, curves)
    write_manifest(table, "ablate", cfg, [], [table, curves])
    print(report.summary())
    return EXIT_OK


def cmd_compare(args) -> int:
    from .evaluation import compare_to_annotation

    cfg = resolve_config("compare", args, {})
    report = json.loads(Path(args.report).read_text())
    peaks = [(p["position"], p["intensity"], p["fwhm"]) for p in report["peaks"]]
    result = compare_to_annotation(peaks, args.annotation)
    out = Path(args.out)
    result.write_csv(out)
    write_manifest(out, "compare", cfg, [Path(args.report), Path(args.annotation)], [out])
    for m in result.matched:
        ie = "undefined" if m.intensity_error is None else f"{m.intensity_error:.3f}"
        fe = "undefined" if m.fwhm_error is None else f"{m.fwhm_error:.3f}"
        print(f"expert {m.expert.position:g} -> model {m.model_position:g}: intensity {ie}, fwhm {fe}")
    print(f"{len(result.unmatched_expert)} unmatched expert peaks, {len(result.unmatched_model)} unmatched model peaks")
    return EXIT_OK


def cmd_inspect(args) -> int:
    cp = Checkpoint.load(args.checkpoint)
    info = {
        "spec": cp.spec.to_dict(),
        "parameters": cp.to_model().n_parameters(),
        "config_digest": cp.config_digest,
        "meta": cp.meta,
    }
    print(json.dumps(info, indent=1))
    return EXIT_OK


def cmd_print_config(args) -> int:
    cfg = DEFAULTS if not args.command_name else {args.command_name: DEFAULTS[args.command_name]}
    print(json.dumps(cfg, indent=1))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="spectramill", description="Synthetic spectra, U-Net training and peak analysis.")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, seed=True):
        sp.add_argument("--config", help="JSON config; flags override its values")
        sp.add_argument("--jobs", type=int, default=1, help="worker processes")
        sp.add_argument("--deterministic", action="store_true", help="single-threaded reductions")
        if seed:
            sp.add_argument("--seed", type=int, help="falls back to $SPECTRAMILL_SEED")

    g = sub.add_parser("gen", help="generate a synthetic dataset")
    common(g)
    g.add_argument("--task", choices=[t.value for t in Task])
    g.add_argument("--n", type=int)
    g.add_argument("--start", type=int, help="first sample index")
    g.add_argument("--length", type=int)
    g.add_argument("--format", choices=["text", "packed"])
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gen)

    t = sub.add_parser("train", help="train one network")
    common(t)
    t.add_argument("--task", choices=[x.value for x in Task])
    t.add_argument("--data")
    t.add_argument("--exam")
    t.add_argument("--out")
    t.add_argument("--loss", choices=sorted(OBJECTIVES))
    t.add_argument("--epochs", type=int)
    t.add_argument("--batch-size", type=int)
    t.add_argument("--lr", type=float)
    t.add_argument("--max-filters", type=int)
    t.add_argument("--metrics", help="metrics CSV path")
    t.add_argument("--resume", help="checkpoint to continue from (config digest must match)")
    t.add_argument("--print-config", action="store_true", help="print the resolved config and exit")
    t.set_defaults(func=cmd_train)

    r = sub.add_parser("run", help="run the four-stage pipeline on a spectrum CSV")
    common(r, seed=False)
    r.add_argument("--input", required=True)
    r.add_argument("--models", required=True, help="directory holding the four checkpoints")
    r.add_argument("--threshold", type=float)
    r.add_argument("--window", type=int)
    r.add_argument("--diameter", action="store_true", help="read the window as a diameter")
    r.add_argument("--length", type=int, help="resampling length (default: the models' training length)")
    r.add_argument("--out", required=True)
    r.add_argument("--plot")
    r.set_defaults(func=cmd_run)

    s = sub.add_parser("sweep", help="threshold x window accuracy grid for a locator")
    common(s, seed=False)
    s.add_argument("--model", required=True)
    s.add_argument("--data", required=True)
    s.add_argument("--thresholds")
    s.add_argument("--windows")
    s.add_argument("--match-tol", type=int)
    s.add_argument("--diameter", action="store_true")
    s.add_argument("--out", required=True)
    s.add_argument("--plot")
    s.set_defaults(func=cmd_sweep)

    a = sub.add_parser("ablate", help="paired toy-scale loss/input ablation")
    common(a, seed=False)
    a.add_argument("--study", choices=["viper_vs_ce_mse", "weighted_vs_plain_mse", "dynamic_vs_plain_peakfit",
                                       "input_channels"])
    a.add_argument("--seeds")
    a.add_argument("--n-train", type=int)
    a.add_argument("--n-exam", type=int)
    a.add_argument("--epochs", type=int)
    a.add_argument("--length", type=int)
    a.add_argument("--out", required=True)
    a.set_defaults(func=cmd_ablate)

    c = sub.add_parser("compare", help="normalized errors against an expert annotation CSV")
    common(c, seed=False)
    c.add_argument("--report", required=True)
    c.add_argument("--annotation", required=True)
    c.add_argument("--out", required=True)
    c.set_defaults(func=cmd_compare)

    i = sub.add_parser("inspect-checkpoint", help="print a checkpoint's spec and parameter count")
    i.add_argument("checkpoint")
    i.set_defaults(func=cmd_inspect, deterministic=False)

    pc = sub.add_parser("print-config", help="print default configs")
    pc.add_argument("command_name", nargs="?", choices=sorted(DEFAULTS))
    pc.set_defaults(func=cmd_print_config, deterministic=False)
    return p


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        with deterministic(getattr(args, "deterministic", False)):
            return args.func(args)
    except DivergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DIVERGENCE
    except DigestMismatch as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DIGEST
    except (OSError, D.DatasetFormatError, CheckpointError, json.JSONDecodeError) as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (ConfigError, SpecError, L.LossError, KeyError, TypeError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ValueError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
