"""``hydrovision`` command line: synth, train, evaluate, predict, adjacency.

Exit codes: 0 success, 1 usage/config error, 2 data error, 3 runtime error.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .errors import ConfigError, HydroVisionError

log = logging.getLogger("hydrovision")


def _cmd_synth(args):
    from .synth import generate, write_scenario

    scenario = generate(n=args.n, T=args.steps, seed=args.seed, size=args.size)
    out = write_scenario(scenario, args.out)
    print(f"wrote scenario to {out}")


def _cmd_train(args):
    from .pipeline import load_run_config, run_training

    cfg = load_run_config(args.config)
    if args.out is not None:
        cfg.out_dir = args.out
    if args.seed is not None:
        cfg.train.seed = args.seed
    if args.max_epochs is not None:
        cfg.train.max_epochs = args.max_epochs
        cfg.train.patience = min(cfg.train.patience, max(args.max_epochs - 1, 1))
    run = run_training(cfg)
    print(
        f"best epoch {run.result.best_epoch}, val MAE {run.result.best_val_mae:.6f}; "
        f"artifacts in {run.out_dir}"
    )


def _cmd_evaluate(args):
    from .pipeline import evaluate_checkpoint, load_checkpoint, plot_forecasts

    ckpt = load_checkpoint(args.checkpoint)
    report, prepared = evaluate_checkpoint(ckpt, args.data, predictor=args.predictor)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.json").write_text(report.to_json())
    if args.plots:
        plot_forecasts(ckpt, prepared, out)
    print(report.table())


def _cmd_predict(args):
    from .pipeline import forecast, load_checkpoint, write_forecast

    ckpt = load_checkpoint(args.checkpoint)
    dates, values = forecast(ckpt, args.data, args.horizon)
    write_forecast(args.out or sys.stdout, dates, values, ckpt.station_ids)


def _cmd_adjacency(args):
    import torch

    from .graphs import format_adjacency
    from .pipeline import load_checkpoint

    ckpt = load_checkpoint(args.checkpoint)
    with torch.no_grad():
        adj = ckpt.model.adjacencies()[args.kind]
    if adj is None:
        raise ConfigError(f"checkpoint has no {args.kind} adjacency")
    sys.stdout.write(format_adjacency(adj))


def build_parser():
    parser = argparse.ArgumentParser(prog="hydrovision", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="write a synthetic terrain + station scenario")
    p.add_argument("--n", type=int, default=6, help="number of stations")
    p.add_argument("--steps", type=int, default=2000, help="number of daily rows")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--size", type=int, default=64, help="raster side length in cells")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_synth)

    p = sub.add_parser("train", help="run the full training pipeline from a JSON config")
    p.add_argument("--config", required=True)
    p.add_argument("--out", help="override out_dir")
    p.add_argument("--seed", type=int, help="override train.seed")
    p.add_argument("--max-epochs", type=int, help="override train.max_epochs")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("evaluate", help="score a checkpoint on the test split")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True, help="directory with series.csv and stations.csv")
    p.add_argument("--out", required=True)
    p.add_argument("--plots", action="store_true")
    p.add_argument("--predictor", choices=("model", "persistence", "oracle"), default="model",
                   help=argparse.SUPPRESS)
    p.set_defaults(func=_cmd_evaluate)

    p = sub.add_parser("predict", help="forecast past the end of a series")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--horizon", type=int, default=None)
    p.add_argument("--out", help="forecast CSV path (default: stdout)")
    p.set_defaults(func=_cmd_predict)

    p = sub.add_parser("adjacency", help="dump a learned adjacency matrix")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--kind", choices=("adaptive", "elevation", "hybrid"), default="hybrid")
    p.set_defaults(func=_cmd_adjacency)
    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 1 if exc.code else 0
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        args.func(args)
    except HydroVisionError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
