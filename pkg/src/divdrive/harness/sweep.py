"""Diversity-weight sweep: train and evaluate one policy per lambda_div."""

import csv
import traceback
from pathlib import Path

from ..interpret import write_json
from ..model import load_checkpoint
from .agent import ModelAgent
from .evaluate import _stat, evaluate_policy
from .train import train

DEFAULT_GRID = (5e-1, 5e-2, 5e-3, 5e-4, 5e-5, 5e-6)
SWEEP_COLUMNS = ("lambda_div", "ds_mean", "ds_std", "rc_mean", "ip_mean", "best_epoch", "status")


def parse_grid(text):
    """Comma-separated floats; raises ValueError on an empty or malformed list."""
    items = [t.strip() for t in str(text).split(",") if t.strip()]
    if not items:
        raise ValueError("lambda grid is empty")
    grid = []
    for t in items:
        v = float(t)
        if not v >= 0:
            raise ValueError(f"lambda_div must be a non-negative number, got {t!r}")
        grid.append(v)
    return tuple(grid)


def _cell(cfg, ds, lam, out_dir, log):
    cell_cfg = cfg.replace(**{"loss.div": lam})
    res = train(cell_cfg, ds, out_dir, log)
    model = load_checkpoint(res.best_path, expected_model_config=cell_cfg.model)
    per_run, _ = evaluate_policy(cell_cfg, lambda: ModelAgent(model, cell_cfg.controller))
    ds_mean, ds_std = _stat([r.ds for r in per_run])
    return {"lambda_div": lam, "ds_mean": ds_mean, "ds_std": ds_std,
            "rc_mean": _stat([r.rc for r in per_run])[0], "ip_mean": _stat([r.ip for r in per_run])[0],
            "best_epoch": res.best_epoch, "status": "ok"}


def run_sweep(cfg, ds, grid, out_dir, log=None):
    """One row per lambda; a failing cell is recorded with its error and the sweep goes on."""
    log = log or (lambda *_: None)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rows = []
    for lam in grid:
        try:
            row = _cell(cfg, ds, lam, out_dir / f"lambda_{lam:g}", log)
        except Exception as e:  # isolate the cell
            log(traceback.format_exc())
            row = {"lambda_div": lam, "ds_mean": None, "ds_std": None, "rc_mean": None, "ip_mean": None,
                   "best_epoch": None, "status": f"failed: {type(e).__name__}: {e}"}
        log(f"lambda {lam:g}: {row['status']} ds {row['ds_mean']}")
        rows.append(row)
    ok = [r for r in rows if r["status"] == "ok"]
    best = max(ok, key=lambda r: r["ds_mean"])["lambda_div"] if ok else None
    with open(out_dir / "sweep.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(SWEEP_COLUMNS)
        for r in rows:
            w.writerow(["" if r[k] is None else (repr(r[k]) if isinstance(r[k], float) else r[k])
                        for k in SWEEP_COLUMNS])
    write_json(out_dir / "sweep.json", {"run_hash": cfg.run_hash, "rows": rows, "best_lambda_div": best})
    return rows, best
