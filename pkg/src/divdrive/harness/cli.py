"""Command-line entry point: ``divdrive {collect,train,evaluate,interpret,sweep}``.

Every subcommand reads one run config (``--config``, default: the shipped
desk config) and writes under ``--out`` (default: the config's ``out``)::

    OUT/dataset.bin                 collect
    OUT/expert/metrics.*            collect (the expert's own scores)
    OUT/train/{best,last}.ckpt      train, plus train_steps.csv / train_epochs.csv
    OUT/evaluate/metrics.*          evaluate
    OUT/interpret/*.csv|json|pgm    interpret
    OUT/sweep/sweep.csv|json        sweep

Exit codes: 0 success, 1 usage error (bad flags or config), 2 runtime failure.
"""

import argparse
import sys
from pathlib import Path

from ..binio import FormatError
from ..model import CheckpointMismatch, load_checkpoint, read_checkpoint
from ..sim.episode import ExpertPolicy
from . import evaluate as ev
from .agent import ModelAgent
from .config import ConfigError, RunConfig
from .dataset import Dataset, DatasetMismatch, collect
from .interpret_run import run_interpret
from .sweep import DEFAULT_GRID, parse_grid, run_sweep
from .train import train

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="run config YAML (default: shipped desk config)")
    common.add_argument("--seed", type=int, metavar="N", help="override the config seed")
    common.add_argument("--out", metavar="DIR", help="output directory (default: the config's out)")
    p = _Parser(prog="divdrive", description="Desk-scale driving policy: data, training, evaluation, saliency.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    sub.add_parser("collect", parents=[common], help="run the expert and write the dataset")

    t = sub.add_parser("train", parents=[common], help="behaviour-clone a policy")
    t.add_argument("--dataset", metavar="PATH", help="dataset file (default: OUT/dataset.bin)")

    e = sub.add_parser("evaluate", parents=[common], help="closed-loop driving scores")
    e.add_argument("--checkpoint", metavar="PATH", help="checkpoint, or 'expert' (default: OUT/train/best.ckpt)")
    e.add_argument("--runs", type=int, metavar="N", help="number of evaluation runs")

    i = sub.add_parser("interpret", parents=[common], help="saliency reports")
    i.add_argument("--checkpoint", metavar="PATH", action="append",
                   help="checkpoint; give twice to compare two models (first = a, second = b)")

    s = sub.add_parser("sweep", parents=[common], help="train and evaluate over a lambda_div grid")
    s.add_argument("--lambda-div-grid", metavar="CSV", default=",".join(f"{v:g}" for v in DEFAULT_GRID),
                   help="comma-separated lambda_div values")
    s.add_argument("--dataset", metavar="PATH", help="dataset file (default: OUT/dataset.bin, collected if absent)")
    return p


def _config(args):
    cfg = RunConfig.load(args.config)
    changes = {}
    if args.seed is not None:
        changes["seed"] = args.seed
    if args.out is not None:
        changes["out"] = args.out
    if getattr(args, "runs", None) is not None:
        if args.runs < 1:
            raise UsageError("--runs must be >= 1")
        changes["evaluate.runs"] = args.runs
    return cfg.replace(**changes) if changes else cfg


def _load_model(cfg, path):
    header, _ = read_checkpoint(path)
    stored = (header.get("extra") or {}).get("train_hash")
    if stored != cfg.train_hash:
        raise CheckpointMismatch(f"checkpoint {path} was trained under a different config "
                                 f"({str(stored)[:12]} vs {cfg.train_hash[:12]})")
    return load_checkpoint(path, expected_model_config=cfg.model)


def _dataset(cfg, path, out, allow_collect=False):
    path = Path(path) if path else out / "dataset.bin"
    if not path.exists():
        if not allow_collect:
            raise FileNotFoundError(f"dataset {path} not found; run 'divdrive collect' first")
        ds, _, _ = collect(cfg)
        ds.save(path)
        return ds
    return Dataset.load(path, expected_data_hash=cfg.data_hash)


def cmd_collect(cfg, args, out):
    ds, clean, _ = collect(cfg)
    out.mkdir(parents=True, exist_ok=True)
    ds.save(out / "dataset.bin")
    report = ev.build_report(cfg, [ev.score(clean, cfg.penalties)], [clean], "expert")
    ev.write_report(report, out / "expert")
    ds_score = report["summary"]["ds"]["mean"]
    print(f"frames {len(ds)}")
    print(f"expert DS {ds_score:.3f}")
    if ds_score < cfg.collect.ds_floor:
        print(f"warning: expert DS {ds_score:.3f} is below the floor {cfg.collect.ds_floor}; "
              "check the world configs", file=sys.stderr)


def cmd_train(cfg, args, out):
    ds = _dataset(cfg, args.dataset, out)
    res = train(cfg, ds, out / "train", log=print)
    print(f"best epoch {res.best_epoch} val {res.best_val!r}")
    print(f"checkpoint {res.best_path}")


def cmd_evaluate(cfg, args, out):
    ck = args.checkpoint or str(out / "train" / "best.ckpt")
    if ck == "expert":
        make, source = ExpertPolicy, "expert"
    else:
        model = _load_model(cfg, ck)
        make, source = (lambda: ModelAgent(model, cfg.controller)), ev.file_sha256(ck)
    per_run, records = ev.evaluate_policy(cfg, make)
    report = ev.build_report(cfg, per_run, records, source)
    ev.write_report(report, out / "evaluate")
    s = report["summary"]
    print(f"DS {s['ds']['mean']:.3f} +- {s['ds']['std']:.3f}  RC {s['rc']['mean']:.3f}  IP {s['ip']['mean']:.4f}")


def cmd_interpret(cfg, args, out):
    paths = args.checkpoint or [str(out / "train" / "best.ckpt")]
    if len(paths) > 2:
        raise UsageError("at most two --checkpoint values")
    models = [_load_model(cfg.replace(**{"loss.div": _stored_div(p)}) if len(paths) > 1 else cfg, p)
              for p in paths]
    summary = run_interpret(cfg, models, out / "interpret")
    print(f"frames {summary['frames']}")
    for name, rep in summary["models"].items():
        gtc = rep["categories"].get("overall", {}).get("gtc")
        print(f"{name}: overall GTC {gtc}")


def _stored_div(path):
    """Twins differ only in lambda_div, so the comparison accepts each under its own weight."""
    header, _ = read_checkpoint(path)
    return float((header.get("extra") or {}).get("lambda_div", 0.0))


def cmd_sweep(cfg, args, out):
    try:
        grid = parse_grid(args.lambda_div_grid)
    except ValueError as e:
        raise UsageError(str(e)) from e
    ds = _dataset(cfg, args.dataset, out, allow_collect=True)
    rows, best = run_sweep(cfg, ds, grid, out / "sweep", log=print)
    for r in rows:
        ds_txt = "-" if r["ds_mean"] is None else f"{r['ds_mean']:.3f} +- {r['ds_std']:.3f}"
        print(f"lambda_div {r['lambda_div']:g}: DS {ds_txt} [{r['status']}]")
    print(f"best lambda_div {best}")
    if not any(r["status"] == "ok" for r in rows):
        raise RuntimeError("every sweep cell failed")


COMMANDS = {"collect": cmd_collect, "train": cmd_train, "evaluate": cmd_evaluate,
            "interpret": cmd_interpret, "sweep": cmd_sweep}


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        cfg = _config(args)
    except UsageError as e:
        print(f"divdrive: error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except ConfigError as e:
        print(f"divdrive: config error: {e}", file=sys.stderr)
        return EXIT_USAGE
    out = Path(cfg.out)
    try:
        COMMANDS[args.command](cfg, args, out)
    except UsageError as e:
        print(f"divdrive: error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except ConfigError as e:
        print(f"divdrive: config error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (CheckpointMismatch, DatasetMismatch, FormatError, OSError, RuntimeError, ValueError) as e:
        print(f"divdrive: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
