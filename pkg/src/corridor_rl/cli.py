"""Command-line entry point.

Subcommands: train-background, train-tsp, evaluate, plot, validate-config.
Exit codes: 0 success, 1 configuration error, 2 runtime abort.
"""

from __future__ import annotations

import argparse
import os
import sys

from .config import ConfigError, load_experiment
from .rl import TrainingDiverged
from .simulation import SimulationError


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", required=True, help="experiment JSON path")
    p.add_argument("--seed", type=int, default=None, help="override scenario seed")
    p.add_argument("--out", default="out", help="output directory")
    p.add_argument("--episodes", type=int, default=None, help="override episode count")
    p.add_argument("--debug-trace", action="store_true",
                   help="write per-epoch observation/reward traces")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="corridor-rl",
                                description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    tb = sub.add_parser("train-background", help="train the general-traffic agents")
    _add_common(tb)

    tt = sub.add_parser("train-tsp", help="train priority agents on top of "
                                          "trained background agents")
    _add_common(tt)
    tt.add_argument("--mode", choices=("independent", "coordinated"), required=True)
    tt.add_argument("--background-models", required=True,
                    help="directory holding background_A/background_B models")

    ev = sub.add_parser("evaluate", help="greedy evaluation over seeded replicates")
    _add_common(ev)
    ev.add_argument("--baseline", choices=("fixed", "actuated", "marl"), default=None)
    ev.add_argument("--tsp", choices=("off", "independent", "coordinated"), default=None)
    ev.add_argument("--models", default=None, help="model directory (marl baseline)")
    ev.add_argument("--workers", type=int, default=1)

    pl = sub.add_parser("plot", help="render SVG charts from a metrics or curve CSV")
    pl.add_argument("--metrics", required=True)
    pl.add_argument("--out", default="out")

    vc = sub.add_parser("validate-config", help="check an experiment JSON")
    vc.add_argument("--config", required=True)
    return p


def _load(args) -> "ExperimentConfig":
    cfg = load_experiment(args.config)
    if getattr(args, "seed", None) is not None:
        cfg.scenario.seed = args.seed
    if getattr(args, "episodes", None) is not None:
        cfg.episodes = args.episodes
        cfg.validate()
    return cfg


def _cmd_train_background(args) -> int:
    from .harness import train_background
    cfg = _load(args)
    train_background(cfg, args.out)
    print(f"trained {cfg.episodes} episodes; models and learning curve in {args.out}")
    return 0


def _cmd_train_tsp(args) -> int:
    from .harness import train_tsp
    cfg = _load(args)
    train_tsp(cfg, args.background_models, args.out, args.mode)
    print(f"trained {args.mode} TSP agents; outputs in {args.out}")
    return 0


def _cmd_evaluate(args) -> int:
    from .harness import evaluate
    cfg = _load(args)
    if args.baseline is not None:
        cfg.baseline = args.baseline
    if args.tsp is not None:
        cfg.tsp = args.tsp
    if args.models is not None:
        cfg.model_dir = args.models
    cfg.validate()
    if cfg.baseline == "marl" and not cfg.model_dir:
        raise ConfigError("evaluate with baseline=marl needs --models")
    evaluate(cfg, args.out, workers=args.workers, trace=args.debug_trace)
    print(f"evaluated {cfg.replicates} replicates; outputs in {args.out}")
    return 0


def _cmd_plot(args) -> int:
    import csv

    from .metrics import read_metrics
    from .plots import box_plot, line_plot

    os.makedirs(args.out, exist_ok=True)
    with open(args.metrics, newline="", encoding="utf-8") as fh:
        header = next(csv.reader(fh))
    written = []
    if header[:2] == ["episode", "mean_global_reward"]:
        xs, ys = [], []
        with open(args.metrics, newline="", encoding="utf-8") as fh:
            for rec in csv.DictReader(fh):
                xs.append(float(rec["episode"]))
                ys.append(float(rec["mean_global_reward"]))
        svg = line_plot("Learning curve", xs, ys, "episode", "mean global reward")
        path = os.path.join(args.out, "learning_curve.svg")
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(svg)
        written.append(path)
    elif header[:2] == ["episode", "mean_bus_delay_A"]:
        xs, ya, yb = [], [], []
        with open(args.metrics, newline="", encoding="utf-8") as fh:
            for rec in csv.DictReader(fh):
                xs.append(float(rec["episode"]))
                ya.append(float(rec["mean_bus_delay_A"]))
                yb.append(float(rec["mean_bus_delay_B"]))
        for label, ys in (("A", ya), ("B", yb)):
            svg = line_plot(f"Bus delay during training ({label})", xs, ys,
                            "episode", "mean bus delay (s)")
            path = os.path.join(args.out, f"tsp_curve_{label}.svg")
            with open(path, "w", encoding="utf-8") as fh:
                fh.write(svg)
            written.append(path)
    else:
        rows = read_metrics(args.metrics)
        groups: dict[str, list[float]] = {}
        for r in rows:
            if r.statistic == "mean" and r.window == "all" and r.movement != "BUS_DELAY":
                groups.setdefault(f"{r.movement}@{r.section}", []).append(r.value)
        svg = box_plot("Delay by movement (replicate means)", groups, "delay (s)")
        path = os.path.join(args.out, "movement_delay.svg")
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(svg)
        written.append(path)
    print("wrote " + ", ".join(written))
    return 0


def _cmd_validate(args) -> int:
    load_experiment(args.config)
    print(f"{args.config}: OK")
    return 0


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    handlers = {
        "train-background": _cmd_train_background,
        "train-tsp": _cmd_train_tsp,
        "evaluate": _cmd_evaluate,
        "plot": _cmd_plot,
        "validate-config": _cmd_validate,
    }
    try:
        return handlers[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except (SimulationError, TrainingDiverged) as exc:
        print(f"runtime abort: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
