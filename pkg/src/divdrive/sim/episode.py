"""Closed-loop episodes and their records.

Episode record file layout (little-endian)::

    magic b"DDEP", version uint16
    hlen uint32, header JSON (route, seed, completion, km, events, steps, shapes)
    nframes uint32
    per frame: flen uint32, then the frame payload:
        step uint32
        obs       uint8[C*H*W]     observation value * 4
        meas      f8[7]
        expert    f8[2]            steer, accel
        waypoints f8[T*2]
        speed     f8, value f8
        features  f8[F]
        future    f8[T*2]          expert (steer, accel) at the T future steps
        policy    f8[3]            steer, throttle, brake actually applied
        mmask     uint8            1 if masks follow
        masks     uint8[K*H*W]     ground-truth masks in MASK_KEYS order
    tlen uint32, trace f8[steps * len(TRACE_COLUMNS)]

The CSV export holds only the per-step scalars of the trace.
"""

import csv
import json
import struct
from dataclasses import dataclass, field

import numpy as np

from ..controller import ControlAction
from . import render
from .dynamics import EgoState, VehicleParams, step as bicycle_step
from .expert import Expert, ExpertConfig, N_FEATURES, measurement_vector
from .infractions import InfractionEvent, InfractionMonitor, TraceStep
from .world import World
from ..autodiff import Rng

OBS_SCALE = 4
MEAS_DIM = 7
TRACE_COLUMNS = ("time", "x", "y", "yaw", "v", "steer", "throttle", "brake", "route_s", "completion", "lateral")
MASK_KEYS = render.CATEGORIES + render.SEMANTIC_CLASSES
END_MARGIN = 1.0


def quantize_obs(obs):
    q = np.rint(np.asarray(obs) * OBS_SCALE)
    if np.any(np.abs(q / OBS_SCALE - obs) > 1e-12):
        raise ValueError("observation values must be multiples of 1/4")
    return q.astype(np.uint8)


def dequantize_obs(q):
    return np.asarray(q, dtype=np.float64) / OBS_SCALE


@dataclass
class Frame:
    step: int
    obs: np.ndarray            # uint8 (C, H, W), value * 4
    meas: np.ndarray
    expert_action: np.ndarray  # (steer, accel)
    waypoints: np.ndarray      # (T, 2)
    target_speed: float
    value: float
    features: np.ndarray
    future_actions: np.ndarray  # (T, 2)
    policy_action: np.ndarray   # (steer, throttle, brake)
    masks: dict = None

    @property
    def observation(self):
        return dequantize_obs(self.obs)


@dataclass
class EpisodeRecord:
    route: str
    seed: int
    completion: float
    km: float
    events: list
    steps: int
    completed: bool
    frames: list = field(default_factory=list)
    trace: np.ndarray = None

    # -- binary -----------------------------------------------------------
    def to_bytes(self):
        shape = list(self.frames[0].obs.shape) if self.frames else [0, 0, 0]
        horizon = len(self.frames[0].waypoints) if self.frames else 0
        header = {"route": self.route, "seed": self.seed, "completion": self.completion, "km": self.km,
                  "steps": self.steps, "completed": self.completed,
                  "events": [e.to_dict() for e in self.events],
                  "obs_shape": shape, "horizon": horizon, "n_features": N_FEATURES}
        h = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
        out = [b"DDEP", struct.pack("<H", 1), struct.pack("<I", len(h)), h, struct.pack("<I", len(self.frames))]
        for f in self.frames:
            parts = [struct.pack("<I", f.step), f.obs.astype(np.uint8).tobytes()]
            for a in (f.meas, f.expert_action, f.waypoints, [f.target_speed, f.value], f.features,
                      f.future_actions, f.policy_action):
                parts.append(np.asarray(a, dtype="<f8").tobytes())
            if f.masks is None:
                parts.append(b"\x00")
            else:
                parts.append(b"\x01")
                parts.append(np.stack([f.masks[k] for k in MASK_KEYS]).astype(np.uint8).tobytes())
            payload = b"".join(parts)
            out += [struct.pack("<I", len(payload)), payload]
        t = np.asarray(self.trace if self.trace is not None else np.zeros((0, len(TRACE_COLUMNS))), "<f8")
        tb = t.tobytes()
        out += [struct.pack("<I", len(tb)), tb]
        return b"".join(out)

    @classmethod
    def from_bytes(cls, buf):
        if buf[:4] != b"DDEP":
            raise ValueError("not an episode record")
        (version,) = struct.unpack_from("<H", buf, 4)
        if version != 1:
            raise ValueError(f"unsupported episode record version {version}")
        (hlen,) = struct.unpack_from("<I", buf, 6)
        pos = 10
        header = json.loads(buf[pos:pos + hlen].decode())
        pos += hlen
        (n,) = struct.unpack_from("<I", buf, pos)
        pos += 4
        c, hh, ww = header["obs_shape"]
        T, F = header["horizon"], header["n_features"]
        frames = []
        for _ in range(n):
            (flen,) = struct.unpack_from("<I", buf, pos)
            pos += 4
            p = buf[pos:pos + flen]
            pos += flen
            (stepi,) = struct.unpack_from("<I", p, 0)
            o = 4
            obs = np.frombuffer(p, np.uint8, c * hh * ww, o).reshape(c, hh, ww).copy()
            o += c * hh * ww

            def f8(k):
                nonlocal o
                a = np.frombuffer(p, "<f8", k, o).astype(np.float64)
                o += 8 * k
                return a

            meas, act, wp, sv, feat = f8(MEAS_DIM), f8(2), f8(2 * T).reshape(T, 2), f8(2), f8(F)
            fut, pol = f8(2 * T).reshape(T, 2), f8(3)
            masks = None
            if p[o] == 1:
                m = np.frombuffer(p, np.uint8, len(MASK_KEYS) * hh * ww, o + 1).reshape(len(MASK_KEYS), hh, ww)
                masks = {k: m[i].astype(bool) for i, k in enumerate(MASK_KEYS)}
            frames.append(Frame(stepi, obs, meas, act, wp, float(sv[0]), float(sv[1]), feat, fut, pol, masks))
        (tlen,) = struct.unpack_from("<I", buf, pos)
        pos += 4
        trace = np.frombuffer(buf, "<f8", tlen // 8, pos).reshape(-1, len(TRACE_COLUMNS)).astype(np.float64)
        events = [InfractionEvent(e["kind"], e["time"], (e["x"], e["y"])) for e in header["events"]]
        return cls(header["route"], header["seed"], header["completion"], header["km"], events,
                   header["steps"], header["completed"], frames, trace)

    def save(self, path):
        with open(path, "wb") as fh:
            fh.write(self.to_bytes())

    @classmethod
    def load(cls, path):
        with open(path, "rb") as fh:
            return cls.from_bytes(fh.read())

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(TRACE_COLUMNS)
            for row in self.trace:
                w.writerow([f"{v:.6f}" for v in row])


@dataclass
class StepContext:
    """What a policy sees at one step; ``expert`` is privileged and only the expert policy may use it."""

    step: int
    obs: np.ndarray
    meas: np.ndarray
    command: str
    ego: EgoState
    expert: object


class ExpertPolicy:
    needs_observation = False

    def reset(self):
        pass

    def act(self, ctx):
        return ctx.expert.action


class SteerNoise:
    """Occasional triangular steering pulses added to the executed action.

    Used during collection so the data contains recoveries from small
    deviations; the recorded labels stay the expert's own actions.
    """

    def __init__(self, seed, every=(40, 100), duration=(10, 20), magnitude=(0.15, 0.35)):
        self.rng = Rng(seed).spawn(7)
        self.every, self.duration, self.magnitude = every, duration, magnitude
        self.next = int(self.rng.integers(*self.every))
        self.start, self.length, self.amp = 0, 0, 0.0

    def offset(self, k):
        if k == self.next:
            self.start = k
            self.length = int(self.rng.integers(*self.duration))
            self.amp = float(self.rng.uniform(*self.magnitude)) * (1.0 if self.rng.uniform() < 0.5 else -1.0)
            self.next = k + self.length + int(self.rng.integers(*self.every))
        t = k - self.start
        if self.length and 0 <= t < self.length:
            return self.amp * (1.0 - abs(2.0 * t / self.length - 1.0))
        return 0.0


def initial_state(cfg):
    p = cfg.route_line.point_at(0.0)
    return EgoState(float(p[0]), float(p[1]), float(cfg.route_line.heading_at(0.0)), 0.0)


def run_episode(cfg, policy=None, seed=0, record=True, frame_stride=2, future_interval=10,
                with_masks=False, params=VehicleParams(), ecfg=ExpertConfig(), grid=render.GridSpec(),
                max_steps=None, noise=None):
    """Drive one episode with ``policy`` (the expert if None).

    Stops at the route end, at a terminal infraction or at the time limit.
    Frames are kept every ``frame_stride`` steps when ``record`` is set.
    ``noise`` (a :class:`SteerNoise`) perturbs the executed steering.
    """
    policy = policy or ExpertPolicy()
    policy.reset()
    world = World(cfg, seed)
    expert = Expert(cfg, params, ecfg)
    monitor = InfractionMonitor(cfg, params)
    ego = initial_state(cfg)
    line = cfg.route_line
    dt = cfg.dt
    n_steps = int(round(cfg.timeout / dt))
    if max_steps is not None:
        n_steps = min(n_steps, max_steps)
    s = 0.0
    progress = 0.0
    dist = 0.0
    completed = False
    frames, trace, expert_actions = [], [], []
    last_step = None
    for k in range(n_steps):
        out = expert.act(world, ego, s, dt)
        take = record and k % frame_stride == 0
        obs = render.render_observation(world, ego, s, grid) if (take or policy.needs_observation) else None
        meas = measurement_vector(ego.v, out.command, out.goal)
        ctx = StepContext(k, obs, meas, out.command, ego, out)
        action = policy.act(ctx)
        if not isinstance(action, ControlAction):
            raise TypeError("policy must return a ControlAction")
        expert_actions.append((out.action.steer, out.action.accel))
        if noise is not None:
            action = ControlAction.clamped(action.steer + noise.offset(k), action.throttle, action.brake)
        if take:
            masks = render.render_masks(world, ego, grid) if with_masks else None
            frames.append(Frame(k, quantize_obs(obs), meas, np.array(expert_actions[-1]), out.waypoints,
                                out.target_speed, out.value, out.features, None,
                                np.array(action.as_tuple()), masks))
        new = bicycle_step(ego, action, dt, params)
        world.advance(ego, dt)
        dist += float(np.hypot(new.x - ego.x, new.y - ego.y))
        ego = new
        s_new, lateral, _ = line.project((ego.x, ego.y), s_hint=s, window=10.0)
        s = max(s, s_new)
        progress = min(1.0, s / line.length)
        last_step = TraceStep(world.time, ego.x, ego.y, ego.yaw, ego.v, lateral, world.snapshot())
        monitor.update(last_step)
        trace.append((world.time, ego.x, ego.y, ego.yaw, ego.v, *action.as_tuple(), s, progress, lateral))
        if s >= line.length - END_MARGIN:
            completed, progress = True, 1.0
            trace[-1] = trace[-1][:-2] + (1.0, lateral)
            break
        if monitor.terminated:
            break
    if not completed and not monitor.terminated and last_step is not None and n_steps == int(round(cfg.timeout / dt)):
        monitor.timeout(last_step)
    acts = np.array(expert_actions) if expert_actions else np.zeros((0, 2))
    for f in frames:
        idx = np.minimum(f.step + future_interval * np.arange(1, ecfg.horizon + 1), len(acts) - 1)
        f.future_actions = acts[idx]
    return EpisodeRecord(cfg.name, int(seed), float(progress), dist / 1000.0, list(monitor.events),
                         len(trace), completed, frames,
                         np.array(trace, dtype=np.float64).reshape(-1, len(TRACE_COLUMNS)))


def replay_trace(record, cfg):
    """Rebuild the detector's view of a recorded episode (needs the world, since agents are not stored)."""
    world = World(cfg, record.seed)
    steps = []
    prev = None
    for row in record.trace:
        t, x, y, yaw, v = row[:5]
        ego_prev = prev or initial_state(cfg)
        world.advance(ego_prev, cfg.dt)
        steps.append(TraceStep(world.time, x, y, yaw, v, row[10], world.snapshot()))
        prev = EgoState(x, y, yaw, v)
    return steps
