"""Interpretability reports for trained policies.

Expert episodes on the evaluation seeds are replayed with ground-truth masks,
so every model is scored on the same frames.  Each frame's saliency is the
EigenCam map of the encoder features, upsampled to the grid and binarised.
"""

import math
from pathlib import Path

import numpy as np

from .. import autodiff as ad
from .. import interpret as it
from ..controller import extract_action
from .dataset import collect_records

SIGNALS = ("steer_ctrl", "steer_traj")
BATCH = 64


def replay_frames(cfg, seeds=None):
    """Expert frames with masks over routes x seeds; ``[]`` for an empty route or seed set."""
    seeds = cfg.evaluate.seeds if seeds is None else seeds
    if not cfg.routes or not seeds:
        return []
    records = collect_records(cfg, seeds=seeds, with_masks=True)
    return [(r.route, r.seed, f) for r in records for f in r.frames]


def traj_steer(waypoints):
    """Heading of the lateral controller's aim point: the trajectory branch's steering intent."""
    w = np.asarray(waypoints, dtype=np.float64)
    aim = w[:2].mean(axis=0)
    return math.atan2(aim[1], aim[0])


def analyse(model, frames, quantile=0.85):
    """Per-frame saliency maps, binary masks and steering signals for one model."""
    maps, steer_ctrl, steer_traj = [], [], []
    for b in range(0, len(frames), BATCH):
        chunk = [f for _, _, f in frames[b:b + BATCH]]
        obs = np.stack([f.observation for f in chunk])
        meas = np.stack([f.meas for f in chunk])
        with ad.no_grad():
            out = model(obs, meas)
        M = out.F_traj.data
        factor = obs.shape[-1] // M.shape[-1]
        for i in range(len(chunk)):
            maps.append(it.upsample(it.eigencam(M[i]), factor))
            steer_ctrl.append(extract_action(out.action_params.data[i, 0]).steer)
            steer_traj.append(traj_steer(out.waypoints.data[i]))
    masks = [it.binarize(s, quantile) for s in maps]
    return {"maps": maps, "masks": masks, "steer_ctrl": np.array(steer_ctrl), "steer_traj": np.array(steer_traj)}


def model_report(frames, result):
    fm = [f.masks for _, _, f in frames]
    cats = it.category_report(zip(result["masks"], fm))
    sem = it.semantic_report(zip(result["masks"], fm))
    mass = np.array([it.saliency_mass(s) for s in result["maps"]])
    rho = {}
    for sig in SIGNALS:
        rho[sig] = it.pearson(mass, result[sig]) if len(mass) >= 3 else None
    return {"categories": cats, "semantic": sem, "rho": rho, "n": len(frames)}


def correlation_rows(reports):
    """Single model: its rho per signal.  Two models: the a-vs-b comparison."""
    rows = {}
    a = reports[0] if reports else None
    b = reports[1] if len(reports) > 1 else None
    for sig in SIGNALS:
        ra = a["rho"][sig] if a else None
        if b is None:
            rows[sig] = {"rho_a": ra, "n_a": a["n"]} if ra is not None else None
            continue
        rb = b["rho"][sig]
        if ra is None or rb is None or abs(ra) >= 1 or abs(rb) >= 1 or min(a["n"], b["n"]) <= 3:
            rows[sig] = {"rho_a": ra, "rho_b": rb, "n_a": a["n"], "n_b": b["n"]}
        else:
            rows[sig] = it.correlation_report(ra, rb, a["n"], b["n"])
    return rows


def run_interpret(cfg, models, out_dir, names=None, pgm_per_episode=1):
    """Write the category, semantic and correlation tables for one or two models.

    With two models the first is "a" in the correlation comparison (the
    diversity-trained policy) and the second "b".
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    names = names or [f"model_{chr(ord('a') + i)}" for i in range(len(models))]
    frames = replay_frames(cfg)
    reports = []
    for name, model in zip(names, models):
        sub = out_dir / name if len(models) > 1 else out_dir
        sub.mkdir(parents=True, exist_ok=True)
        result = analyse(model, frames, cfg.interpret.quantile)
        rep = model_report(frames, result)
        it.write_category_csv(sub / "categories.csv", rep["categories"])
        it.write_semantic_csv(sub / "semantic.csv", rep["semantic"])
        pgm = sub / "saliency"
        pgm.mkdir(exist_ok=True)
        seen = {}
        for (route, seed, f), s in zip(frames, result["maps"]):
            k = seen.get((route, seed), 0)
            if k < pgm_per_episode:
                it.write_pgm(pgm / f"{route}_{seed}_{f.step:05d}.pgm", s)
            seen[(route, seed)] = k + 1
        reports.append(rep)
    rows = correlation_rows(reports)
    it.write_correlation_csv(out_dir / "correlation.csv", rows)
    summary = {"run_hash": cfg.run_hash, "quantile": cfg.interpret.quantile, "frames": len(frames),
               "models": {n: {"categories": r["categories"], "semantic": r["semantic"], "rho": r["rho"]}
                          for n, r in zip(names, reports)},
               "correlation": rows}
    it.write_json(out_dir / "interpret.json", summary)
    return summary
