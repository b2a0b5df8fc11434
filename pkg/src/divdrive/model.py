"""Two-branch driving policy: a waypoint GRU and an attention-guided control GRU.

A small strided conv encoder maps the observation grid to a spatial feature
stack ``M`` (n_f x h x w).  The trajectory branch feeds on ``M`` directly,
so ``F_traj = M``.  The control branch attends over the spatial positions
of ``M`` at every unroll step, and its per-step stack is the attention map
times ``M`` (``F_ctrl_t = w_t * M``), i.e. exactly the spatially weighted
features the step's action is computed from.
"""

import hashlib
from dataclasses import asdict, dataclass, fields

import numpy as np

from . import autodiff as ad
from . import binio
from .autodiff import Rng, Tensor

CHECKPOINT_MAGIC = b"DDCK"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class ModelConfig:
    in_channels: int = 5
    grid: int = 32
    conv_channels: tuple = (8, 16, 16)
    meas_dim: int = 7
    meas_hidden: int = 64
    joint: int = 128
    hidden: int = 64
    horizon: int = 4
    n_features: int = 8
    action_embed: int = 16
    speed_scale: float = 6.0
    goal_scale: float = 20.0
    waypoint_scale: float = 10.0

    def __post_init__(self):
        object.__setattr__(self, "conv_channels", tuple(int(c) for c in self.conv_channels))
        if len(self.conv_channels) != 3:
            raise ValueError("encoder has exactly three conv layers")
        if self.grid % 4:
            raise ValueError("grid size must be divisible by 4")
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")

    @property
    def n_f(self):
        return self.conv_channels[-1]

    @property
    def fmap(self):
        return self.grid // 4

    def to_dict(self):
        d = asdict(self)
        d["conv_channels"] = list(self.conv_channels)
        return d

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown model settings: {sorted(unknown)}")
        return cls(**d)

    def hash(self):
        return hashlib.sha256(binio.canonical_json(self.to_dict()).encode()).hexdigest()


class Linear:
    def __init__(self, n_in, n_out, rng):
        self.W = ad.xavier_uniform((n_in, n_out), rng)
        self.b = Tensor(np.zeros(n_out), requires_grad=True)

    def __call__(self, x):
        return x @ self.W + self.b

    def params(self):
        return {"W": self.W, "b": self.b}


class Conv:
    def __init__(self, c_in, c_out, stride, rng, k=3):
        self.w = ad.xavier_uniform((c_out, c_in, k, k), rng)
        self.b = Tensor(np.zeros(c_out), requires_grad=True)
        self.stride = stride
        self.pad = k // 2

    def __call__(self, x):
        return ad.conv2d(x, self.w, self.b, self.stride, self.pad)

    def params(self):
        return {"w": self.w, "b": self.b}


class GRUCell:
    """z = s(W_z[x,h]), r = s(W_r[x,h]), h~ = tanh(W_h[x, r*h]), h' = (1 - z) h + z h~."""

    def __init__(self, n_in, n_hidden, rng):
        self.z = Linear(n_in + n_hidden, n_hidden, rng)
        self.r = Linear(n_in + n_hidden, n_hidden, rng)
        self.h = Linear(n_in + n_hidden, n_hidden, rng)

    def __call__(self, x, h):
        xh = ad.concat([x, h], axis=-1)
        z = ad.sigmoid(self.z(xh))
        r = ad.sigmoid(self.r(xh))
        cand = ad.tanh(self.h(ad.concat([x, r * h], axis=-1)))
        return (1.0 - z) * h + z * cand

    def params(self):
        return {f"{g}.{k}": v for g in ("z", "r", "h") for k, v in getattr(self, g).params().items()}


@dataclass
class PolicyOutputs:
    F_traj: Tensor             # (B, n_f, h, w)
    F_ctrl: list               # T+1 tensors (B, n_f, h, w)
    waypoints: Tensor          # (B, T, 2)
    deltas: Tensor             # (B, T, 2)
    action_params: Tensor      # (B, T+1, 2, 2): [steer, accel] x [alpha, beta]
    speed: Tensor              # (B,)
    value: Tensor              # (B,)
    features: Tensor           # (B, n_features)
    attention: list            # T+1 tensors (B, h*w)
    h_traj: list               # T+1 tensors (B, hidden)
    h_ctrl: list               # T+1 tensors (B, hidden)


def beta_mean_action(params):
    """Differentiable (B, 2) action in [-1, 1] from (B, 2, 2) Beta parameters."""
    a, b = params[..., 0], params[..., 1]
    return a * 2.0 / (a + b) - 1.0


class Policy:
    def __init__(self, cfg=None, seed=0):
        self.cfg = cfg or ModelConfig()
        self.seed = int(seed)
        c = self.cfg
        self.rng = Rng(self.seed)
        r = self.rng
        c1, c2, c3 = c.conv_channels
        self.conv1 = Conv(c.in_channels, c1, 2, r)
        self.conv2 = Conv(c1, c2, 2, r)
        self.conv3 = Conv(c2, c3, 1, r)
        hw = c.fmap * c.fmap
        self.meas1 = Linear(c.meas_dim, c.meas_hidden, r)
        self.meas2 = Linear(c.meas_hidden, c.meas_hidden, r)
        self.joint = Linear(c3 * hw + c.meas_hidden, c.joint, r)
        self.speed_head = Linear(c.joint, 1, r)
        self.value_head = Linear(c.joint, 1, r)
        self.feat_head = Linear(c.joint, c.n_features, r)
        self.traj_init = Linear(c.joint, c.hidden, r)
        self.traj_gru = GRUCell(4, c.hidden, r)
        self.traj_out = Linear(c.hidden, 2, r)
        self.ctrl_init = Linear(c.joint, c.hidden, r)
        self.attn = Linear(2 * c.hidden, hw, r)
        self.fuse = Linear(c3 + c.hidden + c.meas_hidden, c.hidden, r)
        self.policy_head = Linear(c.hidden, 4, r)
        self.act_embed = Linear(2, c.action_embed, r)
        self.ctrl_gru = GRUCell(c.hidden + c.action_embed, c.hidden, r)
        self._meas_scale = np.array([1.0 / c.speed_scale, 1, 1, 1, 1, 1.0 / c.goal_scale, 1.0 / c.goal_scale])

    # -- parameters -------------------------------------------------------
    def named_params(self):
        out = {}
        for name in ("conv1", "conv2", "conv3", "meas1", "meas2", "joint", "speed_head", "value_head",
                     "feat_head", "traj_init", "traj_gru", "traj_out", "ctrl_init", "attn", "fuse",
                     "policy_head", "act_embed", "ctrl_gru"):
            for k, v in getattr(self, name).params().items():
                out[f"{name}.{k}"] = v
        return out

    def parameters(self):
        return list(self.named_params().values())

    def n_params(self):
        return sum(p.size for p in self.parameters())

    # -- forward ----------------------------------------------------------
    def encode(self, obs, meas):
        c = self.cfg
        obs = ad.as_tensor(obs)
        meas = ad.as_tensor(meas)
        if obs.ndim != 4 or obs.shape[1:] != (c.in_channels, c.grid, c.grid):
            raise ValueError(f"observation batch must be (B, {c.in_channels}, {c.grid}, {c.grid}), got {obs.shape}")
        if meas.ndim != 2 or meas.shape != (obs.shape[0], c.meas_dim):
            raise ValueError(f"measurement batch must be (B, {c.meas_dim}), got {meas.shape}")
        x = ad.relu(self.conv1(obs))
        x = ad.relu(self.conv2(x))
        M = ad.relu(self.conv3(x))
        m = meas * self._meas_scale
        m = ad.relu(self.meas2(ad.relu(self.meas1(m))))
        return M, m

    def trajectory_branch(self, joint, goal):
        c = self.cfg
        B = joint.shape[0]
        h = ad.tanh(self.traj_init(joint))
        g = ad.as_tensor(goal) * (1.0 / c.waypoint_scale)
        w = Tensor(np.zeros((B, 2)))
        hs, ws, ds = [h], [], []
        for _ in range(c.horizon):
            h = self.traj_gru(ad.concat([w * (1.0 / c.waypoint_scale), g], axis=-1), h)
            d = self.traj_out(h)
            w = w + d
            hs.append(h)
            ws.append(w)
            ds.append(d)
        return ad.stack(ws, axis=1), ad.stack(ds, axis=1), hs

    def _control_step(self, M, flatM, m, h_traj, h_ctrl):
        B, nf, H, W = M.shape
        att = ad.softmax(self.attn(ad.concat([h_traj, h_ctrl], axis=-1)), axis=-1)     # (B, hw)
        F = M * att.reshape((B, 1, H, W))
        pooled = (flatM * att.reshape((B, 1, H * W))).sum(axis=-1)                       # (B, nf)
        feat = ad.relu(self.fuse(ad.concat([pooled, h_ctrl, m], axis=-1)))
        params = (ad.softplus(self.policy_head(feat)) + 1.0).reshape((B, 2, 2))
        return att, F, feat, params

    def control_branch(self, M, m, joint, h_traj):
        if len(h_traj) < 2:
            raise ValueError("control unroll needs T >= 1")
        B, nf, H, W = M.shape
        flatM = M.reshape((B, nf, H * W))
        h = ad.tanh(self.ctrl_init(joint))
        hs, atts, Fs, ps = [h], [], [], []
        att, F, feat, params = self._control_step(M, flatM, m, h_traj[0], h)
        atts.append(att), Fs.append(F), ps.append(params)
        for t in range(1, len(h_traj)):
            a_prev = beta_mean_action(params)
            h = self.ctrl_gru(ad.concat([feat, self.act_embed(a_prev)], axis=-1), h)
            att, F, feat, params = self._control_step(M, flatM, m, h_traj[t], h)
            hs.append(h), atts.append(att), Fs.append(F), ps.append(params)
        return ad.stack(ps, axis=1), Fs, atts, hs

    def forward(self, obs, meas):
        M, m = self.encode(obs, meas)
        B = M.shape[0]
        flat = M.reshape((B, -1))
        joint = ad.relu(self.joint(ad.concat([flat, m], axis=-1)))
        goal = ad.as_tensor(meas).data[:, 5:7]
        waypoints, deltas, h_traj = self.trajectory_branch(joint, goal)
        params, F_ctrl, atts, h_ctrl = self.control_branch(M, m, joint, h_traj)
        return PolicyOutputs(
            F_traj=M, F_ctrl=F_ctrl, waypoints=waypoints, deltas=deltas, action_params=params,
            speed=self.speed_head(joint).reshape((B,)), value=self.value_head(joint).reshape((B,)),
            features=self.feat_head(joint), attention=atts, h_traj=h_traj, h_ctrl=h_ctrl)

    __call__ = forward

    # -- persistence ------------------------------------------------------
    def state_arrays(self):
        return {k: v.data.copy() for k, v in self.named_params().items()}

    def load_arrays(self, arrays):
        named = self.named_params()
        missing = set(named) - set(arrays)
        extra = set(arrays) - set(named)
        if missing or extra:
            raise ValueError(f"parameter table mismatch: missing {sorted(missing)}, unexpected {sorted(extra)}")
        for k, p in named.items():
            a = arrays[k]
            if a.shape != p.data.shape:
                raise ValueError(f"parameter {k} has shape {a.shape}, expected {p.data.shape}")
            p.data = np.array(a, dtype=np.float64)


def save_checkpoint(model, path, run_hash=None, extra=None, extra_arrays=None):
    """Write parameters, optional extra arrays (e.g. optimizer state), config and Rng state."""
    header = {"model_config": model.cfg.to_dict(), "model_hash": model.cfg.hash(), "run_hash": run_hash,
              "seed": model.seed, "rng_state": {k: str(v) for k, v in model.rng.get_state().items()},
              "extra": extra or {}}
    arrays = {f"param/{k}": v for k, v in model.state_arrays().items()}
    for k, v in (extra_arrays or {}).items():
        arrays[f"extra/{k}"] = v
    return binio.write(path, CHECKPOINT_MAGIC, CHECKPOINT_VERSION, header, arrays)


class CheckpointMismatch(ValueError):
    pass


def read_checkpoint(path):
    _, header, arrays = binio.read(path, CHECKPOINT_MAGIC, (CHECKPOINT_VERSION,))
    return header, arrays


def load_checkpoint(path, expected_run_hash=None, expected_model_config=None):
    """Rebuild a Policy from a checkpoint; refuses a config-hash mismatch."""
    header, arrays = read_checkpoint(path)
    cfg = ModelConfig.from_dict(header["model_config"])
    if cfg.hash() != header["model_hash"]:
        raise CheckpointMismatch("checkpoint model config does not match its recorded hash")
    if expected_model_config is not None and expected_model_config.hash() != header["model_hash"]:
        raise CheckpointMismatch("checkpoint was written for a different model config")
    if expected_run_hash is not None and header.get("run_hash") != expected_run_hash:
        raise CheckpointMismatch(
            f"checkpoint run hash {header.get('run_hash')} does not match config hash {expected_run_hash}")
    model = Policy(cfg, header["seed"])
    model.load_arrays({k[len("param/"):]: v for k, v in arrays.items() if k.startswith("param/")})
    model.rng.set_state({k: int(v) for k, v in header["rng_state"].items()})
    model.checkpoint_header = header
    model.checkpoint_extra = {k[len("extra/"):]: v for k, v in arrays.items() if k.startswith("extra/")}
    return model
