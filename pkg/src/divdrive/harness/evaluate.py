"""Closed-loop evaluation and its reports."""

import csv
import hashlib
import math
from pathlib import Path

import numpy as np

from ..interpret import write_json
from ..sim.infractions import KINDS
from ..sim.scoring import episode_scores, score
from .dataset import collect_records

SUMMARY_COLUMNS = ("metric", "mean", "std")
EPISODE_COLUMNS = ("run", "route", "seed", "rc", "ip", "ds", "km", "completed") + KINDS
PER_KM_COLUMNS = ("km",) + KINDS


def file_sha256(path):
    with open(path, "rb") as fh:
        return hashlib.sha256(fh.read()).hexdigest()


def run_seeds(cfg, run):
    return [s + run * cfg.evaluate.run_seed_stride for s in cfg.evaluate.seeds]


def evaluate_policy(cfg, make_policy, runs=None):
    """Score ``make_policy()`` over ``runs`` repetitions of the evaluation routes x seeds."""
    runs = cfg.evaluate.runs if runs is None else runs
    per_run, all_records = [], []
    for r in range(runs):
        records = collect_records(cfg, make_policy(), seeds=run_seeds(cfg, r), record=False)
        all_records.append(records)
        per_run.append(score(records, cfg.penalties))
    return per_run, all_records


def _stat(values):
    v = np.asarray(values, dtype=np.float64)
    return math.fsum(v) / len(v), float(np.sqrt(math.fsum((v - v.mean()) ** 2) / len(v)))


def build_report(cfg, per_run, all_records, source):
    flat = [rec for run in all_records for rec in run]
    pooled = score(flat, cfg.penalties)
    summary = {m: dict(zip(("mean", "std"), _stat([getattr(r, m) for r in per_run]))) for m in ("ds", "rc", "ip")}
    episodes = []
    for ri, run in enumerate(all_records):
        for rec in run:
            rc, ip, ds = episode_scores(rec.completion, rec.events, cfg.penalties)
            counts = {k: 0 for k in KINDS}
            for ev in rec.events:
                counts[ev.kind] += 1
            episodes.append({"run": ri, "route": rec.route, "seed": rec.seed, "rc": rc, "ip": ip, "ds": ds,
                             "km": rec.km, "completed": rec.completed, **counts})
    return {"run_hash": cfg.run_hash, "source": source, "runs": len(per_run), "summary": summary,
            "per_run": [{"ds": r.ds, "rc": r.rc, "ip": r.ip} for r in per_run],
            "counts": pooled.counts, "km": pooled.km, "per_km": pooled.per_km, "episodes": episodes}


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, bool):
        return int(v)
    return repr(v) if isinstance(v, float) else v


def write_report(report, out_dir):
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_json(out_dir / "metrics.json", report)
    with open(out_dir / "metrics.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(SUMMARY_COLUMNS)
        for m in ("ds", "rc", "ip"):
            w.writerow([m, _fmt(report["summary"][m]["mean"]), _fmt(report["summary"][m]["std"])])
    with open(out_dir / "infractions_per_km.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(PER_KM_COLUMNS)
        w.writerow([_fmt(report["km"])] + [_fmt(report["per_km"][k]) for k in KINDS])
    with open(out_dir / "episodes.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(EPISODE_COLUMNS)
        for e in report["episodes"]:
            w.writerow([_fmt(e[k]) for k in EPISODE_COLUMNS])
