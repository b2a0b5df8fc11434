"""Behaviour-cloning training with momentum SGD."""

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .. import autodiff as ad
from .. import losses
from ..autodiff import Rng
from ..model import Policy, save_checkpoint

STEP_COLUMNS = ("epoch", "step", "traj", "ctrl", "sub", "div", "total")
EPOCH_COLUMNS = ("epoch", "train_total", "val_traj", "val_ctrl", "val_sub", "val_div", "val_total", "best")


NonFiniteLoss = losses.NonFiniteLoss


def check_finite(br, epoch, step):
    for k in STEP_COLUMNS[2:]:
        if not math.isfinite(br[k]):
            raise NonFiniteLoss(k, f" at epoch {epoch}, step {step}")


def split_indices(n, val_every):
    """Every ``val_every``-th frame is held out for validation."""
    idx = np.arange(n)
    val = idx % val_every == 0
    return idx[~val], idx[val]


def expert_targets(ds, idx):
    seq = np.concatenate([ds.action[idx][:, None, :], ds.future[idx]], axis=1)
    return losses.expert_beta_params(seq)


def batch_loss(model, ds, idx, w):
    """Total objective and its float breakdown on frames ``idx``."""
    out = model(ds.observations(idx), ds.meas[idx])
    traj = losses.trajectory_loss(out.waypoints, ds.waypoints[idx])
    ctrl = losses.action_loss(out.action_params, expert_targets(ds, idx))
    sub = losses.subtask_loss(out.features, ds.features[idx], out.speed, ds.speed[idx],
                              out.value, ds.value[idx], w)
    if w.div > 0:
        div = losses.diversity_loss_branches(out.F_traj, out.F_ctrl, 1.0, degenerate="skip")
    else:
        # still logged, but kept out of the graph
        div = losses.diversity_loss_branches(out.F_traj.detach(), [F.detach() for F in out.F_ctrl], 1.0,
                                             degenerate="skip")
    return losses.total_loss(traj, ctrl, sub, div, w)


def evaluate_loss(model, ds, idx, w, batch_size):
    """Frame-weighted mean of each loss component over ``idx`` (no gradients)."""
    sums = {k: [] for k in ("traj", "ctrl", "sub", "div", "total")}
    with ad.no_grad():
        for b in range(0, len(idx), batch_size):
            chunk = idx[b:b + batch_size]
            _, br = batch_loss(model, ds, chunk, w)
            for k in sums:
                sums[k].append(br[k] * len(chunk))
    n = max(len(idx), 1)
    return {k: math.fsum(v) / n for k, v in sums.items()}


class MomentumSGD:
    def __init__(self, params, lr, momentum, grad_clip=None):
        self.params = params
        self.lr, self.momentum, self.grad_clip = lr, momentum, grad_clip
        self.velocity = [np.zeros_like(p.data) for p in params]

    def step(self):
        grads = [p.grad for p in self.params]
        if self.grad_clip:
            norm = math.sqrt(math.fsum(float((g * g).sum()) for g in grads))
            if norm > self.grad_clip:
                grads = [g * (self.grad_clip / norm) for g in grads]
        for p, v, g in zip(self.params, self.velocity, grads):
            v *= self.momentum
            v += g
            p.data = p.data - self.lr * v

    def state_arrays(self):
        return {f"velocity/{i}": v for i, v in enumerate(self.velocity)}


@dataclass
class TrainResult:
    best_path: Path
    last_path: Path
    best_val: float
    best_epoch: int
    epochs: list


def _f(x):
    return repr(float(x))


def train(cfg, ds, out_dir, log=None):
    """Train a fresh policy on ``ds``; writes checkpoints and CSV logs under ``out_dir``."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    log = log or (lambda *_: None)
    w, oc = cfg.loss, cfg.optim
    model = Policy(cfg.model, seed=cfg.seed)
    shuffle = Rng(cfg.seed).spawn(1)
    params = model.parameters()
    opt = MomentumSGD(params, oc.lr, oc.momentum, oc.grad_clip)
    train_idx, val_idx = split_indices(len(ds), oc.val_every)
    best_val, best_epoch = math.inf, -1
    best_path, last_path = out_dir / "best.ckpt", out_dir / "last.ckpt"
    epochs = []
    step = 0
    meta = {"run_hash": cfg.run_hash, "train_hash": cfg.train_hash, "data_hash": ds.header["data_hash"],
            "lambda_div": cfg.loss.div}

    with open(out_dir / "train_steps.csv", "w", newline="") as sf, \
            open(out_dir / "train_epochs.csv", "w", newline="") as ef:
        sw, ew = csv.writer(sf), csv.writer(ef)
        sw.writerow(STEP_COLUMNS)
        ew.writerow(EPOCH_COLUMNS)
        if oc.epochs == 0:
            val = evaluate_loss(model, ds, val_idx, w, oc.batch_size)
            best_val, best_epoch = val["total"], 0
            save_checkpoint(model, best_path, cfg.run_hash, {**meta, "epoch": 0, "val_loss": best_val})
        for epoch in range(1, oc.epochs + 1):
            order = train_idx[shuffle.permutation(len(train_idx))]
            totals = []
            for b in range(0, len(order), oc.batch_size):
                chunk = np.sort(order[b:b + oc.batch_size])
                ad.zero_grad(params)
                try:
                    total, br = batch_loss(model, ds, chunk, w)
                except NonFiniteLoss as e:
                    raise NonFiniteLoss(e.component, f" at epoch {epoch}, step {step + 1}") from e
                check_finite(br, epoch, step + 1)
                total.backward()
                opt.step()
                step += 1
                totals.append(br["total"] * len(chunk))
                sw.writerow([epoch, step] + [_f(br[k]) for k in STEP_COLUMNS[2:]])
            val = evaluate_loss(model, ds, val_idx, w, oc.batch_size)
            is_best = val["total"] < best_val
            if is_best:
                best_val, best_epoch = val["total"], epoch
                save_checkpoint(model, best_path, cfg.run_hash, {**meta, "epoch": epoch, "val_loss": best_val})
            row = {"epoch": epoch, "train_total": math.fsum(totals) / len(order),
                   **{f"val_{k}": v for k, v in val.items()}}
            epochs.append(row)
            ew.writerow([epoch, _f(row["train_total"])] + [_f(val[k]) for k in ("traj", "ctrl", "sub", "div", "total")]
                        + [int(is_best)])
            ef.flush()
            log(f"epoch {epoch}: train {row['train_total']:.4f} val {val['total']:.4f}{' *' if is_best else ''}")
    save_checkpoint(model, last_path, cfg.run_hash,
                    {**meta, "epoch": oc.epochs, "val_loss": epochs[-1]["val_total"] if epochs else best_val,
                     "shuffle_rng": {k: str(v) for k, v in shuffle.get_state().items()}},
                    opt.state_arrays())
    return TrainResult(best_path, last_path, best_val, best_epoch, epochs)


def overfit(model, ds, idx, w, steps, lr, momentum=0.9, grad_clip=None, decay=True):
    """Repeated updates on one fixed batch; returns the total loss before each update.

    With ``decay`` the step size falls linearly to zero, which stops the L1
    trajectory term from chattering around its minimum.
    """
    params = model.parameters()
    opt = MomentumSGD(params, lr, momentum, grad_clip)
    history = []
    for k in range(steps):
        if decay:
            opt.lr = lr * (1.0 - k / steps)
        ad.zero_grad(params)
        total, br = batch_loss(model, ds, np.asarray(idx), w)
        total.backward()
        opt.step()
        history.append(br["total"])
    return history


def params_snapshot(model):
    return {k: v.data.copy() for k, v in model.named_params().items()}

