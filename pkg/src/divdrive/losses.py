"""Training objectives for the two-branch policy.

All functions take :class:`~divdrive.autodiff.Tensor` inputs (plain arrays
are accepted for targets) and return scalar Tensors.  Batched inputs carry
a leading batch axis and are averaged over it.
"""

from dataclasses import asdict, dataclass, fields

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

DIV_EPS = 1e-12

# expert action -> Beta parameters: mean preserved, fixed concentration
EXPERT_CONCENTRATION = 20.0
EXPERT_MEAN_CLIP = 0.05


@dataclass(frozen=True)
class LossWeights:
    traj: float = 1.0
    ctrl: float = 1.0
    sub: float = 1.0
    feat: float = 1.0
    speed: float = 1.0
    value: float = 1.0
    div: float = 5e-5
    baseline: float = 1.0

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if not (v >= 0 and np.isfinite(v)):
                raise ValueError(f"loss weight {f.name} must be finite and non-negative, got {v}")

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown loss weights: {sorted(unknown)}")
        return cls(**{k: float(v) for k, v in d.items()})

    def to_dict(self):
        return asdict(self)


def trajectory_loss(pred, expert):
    """Sum over steps of the L1 waypoint distance; (..., T, 2) inputs."""
    pred, expert = ad.as_tensor(pred), ad.as_tensor(expert)
    if pred.shape != expert.shape:
        raise ValueError(f"trajectory horizon/shape mismatch: {pred.shape} vs {expert.shape}")
    per_sample = ad.absolute(pred - expert).sum(axis=(-2, -1))
    return per_sample.mean() if per_sample.ndim else per_sample


def beta_kl(alpha_p, beta_p, alpha_q, beta_q):
    """Elementwise KL(Beta(alpha_p, beta_p) || Beta(alpha_q, beta_q))."""
    a1, b1, a2, b2 = (ad.as_tensor(v) for v in (alpha_p, beta_p, alpha_q, beta_q))
    for v in (a1, b1, a2, b2):
        if not np.all(v.data > 0):
            raise ValueError("Beta parameters must be strictly positive")
    s1 = a1 + b1
    log_b1 = ad.lgamma(a1) + ad.lgamma(b1) - ad.lgamma(s1)
    log_b2 = ad.lgamma(a2) + ad.lgamma(b2) - ad.lgamma(a2 + b2)
    return (log_b2 - log_b1
            + (a1 - a2) * ad.digamma(a1)
            + (b1 - b2) * ad.digamma(b1)
            + (a2 - a1 + b2 - b1) * ad.digamma(s1))


def action_loss(pred, expert):
    """KL at the current step plus the mean KL over the T future steps.

    ``pred`` and ``expert`` have shape (..., T+1, D, 2) with the last axis
    holding (alpha, beta); KLs are summed over the D action dimensions.
    """
    pred, expert = ad.as_tensor(pred), ad.as_tensor(expert)
    if pred.shape != expert.shape:
        raise ValueError(f"action sequence shape mismatch: {pred.shape} vs {expert.shape}")
    steps = pred.shape[-3]
    if steps < 2:
        raise ValueError("action sequence needs the current step and at least one future step")
    kl = beta_kl(pred[..., 0], pred[..., 1], expert[..., 0], expert[..., 1]).sum(axis=-1)
    per_sample = kl[..., 0] + kl[..., 1:].mean(axis=-1)
    return per_sample.mean() if per_sample.ndim else per_sample


def expert_beta_params(actions, concentration=EXPERT_CONCENTRATION, clip=EXPERT_MEAN_CLIP):
    """Map actions in [-1, 1] to Beta parameters whose mean is the action's unit position."""
    a = np.asarray(actions, dtype=np.float64)
    m = np.clip((a + 1.0) / 2.0, clip, 1.0 - clip)
    return np.stack([m * concentration, (1.0 - m) * concentration], axis=-1)


def subtask_components(model_feat, expert_feat, pred_speed, expert_speed, pred_value, expert_value):
    """Unweighted (feature MSE, |speed error|, squared value error), batch-averaged."""
    model_feat, expert_feat = ad.as_tensor(model_feat), ad.as_tensor(expert_feat)
    if model_feat.shape != expert_feat.shape:
        raise ValueError(f"feature shape mismatch: {model_feat.shape} vs {expert_feat.shape}")
    lf = ad.square(model_feat - expert_feat).mean()
    ls = ad.absolute(ad.as_tensor(pred_speed) - ad.as_tensor(expert_speed)).mean()
    lv = ad.square(ad.as_tensor(pred_value) - ad.as_tensor(expert_value)).mean()
    return lf, ls, lv


def subtask_loss(model_feat, expert_feat, pred_speed, expert_speed, pred_value, expert_value, w):
    lf, ls, lv = subtask_components(model_feat, expert_feat, pred_speed, expert_speed,
                                    pred_value, expert_value)
    return lf * w.feat + ls * w.speed + lv * w.value


def _flatten_maps(M):
    M = ad.as_tensor(M)
    if M.ndim not in (3, 4):
        raise ValueError(f"feature stack must be (n_f, h, w) or (B, n_f, h, w), got {M.shape}")
    if M.size == 0:
        raise ValueError("feature stack is empty")
    return M.reshape(M.shape[:-2] + (M.shape[-2] * M.shape[-1],))


def _scale_denominator(means, degenerate):
    top = means.max(axis=-1, keepdims=True)
    bad = top.data <= DIV_EPS
    if np.any(bad):
        if degenerate == "raise":
            raise ValueError("degenerate feature stack: every map has (near) zero mean activation")
        # masked samples get a unit denominator and are dropped by the caller
        top = top + Tensor(bad.astype(np.float64))
    return top, ~bad[..., 0]


def diversity_weighted_map(M, degenerate="raise"):
    """Spatially softmax-normalised maps scaled by their mean relative to the largest mean."""
    flat = _flatten_maps(M)
    s = ad.softmax(flat, axis=-1)
    means = flat.mean(axis=-1)
    top, _ = _scale_denominator(means, degenerate)
    scale = means / top
    out = s * scale.reshape(scale.shape + (1,))
    return out.reshape(ad.as_tensor(M).shape)


def diversity_loss(M, degenerate="raise"):
    """Negative sum over positions of the per-position maximum weighted activation.

    For a batched (B, n_f, h, w) stack the per-sample losses are averaged.
    With ``degenerate="skip"`` samples whose maps are all zero contribute 0
    instead of raising.
    """
    flat = _flatten_maps(M)
    s = ad.softmax(flat, axis=-1)
    means = flat.mean(axis=-1)
    top, valid = _scale_denominator(means, degenerate)
    if flat.shape[-2] == 1:
        # one softmax map sums to one: the loss is identically -1, so skip the roundoff
        per_sample = Tensor(-np.ones(means.shape[:-1])) + (flat * 0.0).sum(axis=(-2, -1))
    else:
        weighted = s * (means / top).reshape(means.shape + (1,))
        per_sample = -(weighted.max(axis=-2).sum(axis=-1))
    if per_sample.ndim == 0:
        return per_sample
    if not valid.all():
        per_sample = per_sample * Tensor(valid.astype(np.float64))
    return per_sample.mean()


def diversity_loss_branches(F_traj, F_ctrl_seq, lambda_div=1.0, degenerate="raise"):
    """Diversity term over the trajectory stack and the T+1 control stacks of one unroll."""
    F_ctrl_seq = list(F_ctrl_seq)
    if len(F_ctrl_seq) < 2:
        raise ValueError("control feature sequence needs the current step and at least one future step")
    T = len(F_ctrl_seq) - 1
    if lambda_div == 0:
        return Tensor(0.0)
    future = diversity_loss(F_ctrl_seq[1], degenerate)
    for F in F_ctrl_seq[2:]:
        future = future + diversity_loss(F, degenerate)
    raw = diversity_loss(F_traj, degenerate) + diversity_loss(F_ctrl_seq[0], degenerate) + future / float(T)
    return raw * lambda_div


class NonFiniteLoss(FloatingPointError, RuntimeError):
    """A loss component evaluated to NaN or infinity; ``component`` names it."""

    def __init__(self, component, where=""):
        super().__init__(f"non-finite {component} loss{where}")
        self.component = component


def total_loss(traj, ctrl, sub, div, w):
    """Weighted objective and an itemised float breakdown for logging.

    ``div`` is the unweighted branch sum (``diversity_loss_branches`` with
    ``lambda_div=1``); ``sub`` already carries its internal weights.
    """
    comps = {"traj": traj, "ctrl": ctrl, "sub": sub, "div": div}
    for name, v in comps.items():
        if not np.all(np.isfinite(ad.as_tensor(v).data)):
            raise NonFiniteLoss(name)
    traj, ctrl, sub, div = (ad.as_tensor(v) for v in (traj, ctrl, sub, div))
    base = traj * w.traj
    base = base + ctrl * w.ctrl
    base = base + sub * w.sub
    base = base * w.baseline
    total = div * w.div + base
    breakdown = {name: ad.as_tensor(v).item() for name, v in comps.items()}
    breakdown["total"] = total.item()
    return total, breakdown


def recombine(breakdown, w):
    """Recompute the total from logged components in the same operation order."""
    base = breakdown["traj"] * w.traj
    base = base + breakdown["ctrl"] * w.ctrl
    base = base + breakdown["sub"] * w.sub
    base = base * w.baseline
    return breakdown["div"] * w.div + base
