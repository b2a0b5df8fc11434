"""World description files and the time-stepped world state.

A world file is YAML with these top-level keys (lengths in metres, times
in seconds, speeds in m/s; every polyline or polygon is a list of
``[x, y]`` pairs):

``name``
    identifier used in reports.
``dt``, ``timeout``, ``cruise_speed``
    simulation step, episode time limit and the route's nominal speed.
``roads``
    list of ``{centerline, width}``; their buffered union is drivable.
``drivable``
    optional extra drivable polygons.
``obstacles``
    static layout polygons (collisions count as ``collision_layout``).
``route``
    the ego's polyline; the ego starts at its first point, at rest.
``signals``
    list of ``{id, stop_line: [[x, y], [x, y]], zone, phases, offset,
    offset_jitter}`` where ``phases`` is a cycle of ``[state, duration]``
    with state in green/yellow/red and ``zone`` the polygon rendered as the
    signal's visible area.
``stop_signs``
    list of ``{id, trigger, visibility}``, visibility ``painted`` (seen only
    within ``near_distance`` of the ego) or ``upright``.  A sign is cleared,
    and no longer shown, once the ego has waited ``stop_hold`` seconds
    below 0.1 m/s with its centre within ``stop_clear_distance`` of the
    trigger polygon.  Only a stop inside the polygon avoids the infraction,
    so stopping short and then driving through is still penalised.
``vehicles``
    list of ``{id, kind, path, speed, start_s, start_time, speed_jitter,
    length, width}``; ``kind`` is car or cyclist.  Agents stop for whatever
    is in front of them and vanish at the end of their path.
``pedestrians``
    list of ``{id, start, end, speed, trigger_time, trigger_distance,
    time_jitter, radius}``; a pedestrian starts walking at the trigger time
    or when the ego comes within ``trigger_distance``, whichever is first.

Per-seed randomisation touches signal offsets, agent speeds and
pedestrian trigger times only.
"""

import math
from dataclasses import dataclass, field

import numpy as np
import yaml

from ..autodiff import Rng
from . import geometry as geo

SIGNAL_STATES = ("green", "yellow", "red")
STOP_CLEAR_SPEED = 0.1


def _arr(x):
    return np.asarray(x, dtype=np.float64)


@dataclass
class Road:
    centerline: np.ndarray
    width: float = 7.0


@dataclass
class Signal:
    id: str
    stop_line: np.ndarray
    zone: np.ndarray
    phases: list
    offset: float = 0.0
    offset_jitter: float = 0.0

    def __post_init__(self):
        for state, dur in self.phases:
            if state not in SIGNAL_STATES or dur <= 0:
                raise ValueError(f"bad phase {state!r}/{dur} for signal {self.id}")
        self.cycle = float(sum(d for _, d in self.phases))

    def state_at(self, t, offset):
        tau = (t + offset) % self.cycle
        for state, dur in self.phases:
            if tau < dur:
                return state
            tau -= dur
        return self.phases[-1][0]

    def remaining_at(self, t, offset):
        """Seconds left in the current phase."""
        tau = (t + offset) % self.cycle
        for _, dur in self.phases:
            if tau < dur:
                return dur - tau
            tau -= dur
        return 0.0


@dataclass
class StopSign:
    id: str
    trigger: np.ndarray
    visibility: str = "painted"

    def __post_init__(self):
        if self.visibility not in ("painted", "upright"):
            raise ValueError(f"stop sign visibility must be painted or upright, got {self.visibility}")


@dataclass
class VehicleSpec:
    id: str
    path: np.ndarray
    speed: float
    kind: str = "car"
    start_s: float = 0.0
    start_time: float = 0.0
    speed_jitter: float = 0.0
    length: float = 4.5
    width: float = 2.0

    def __post_init__(self):
        if self.kind not in ("car", "cyclist"):
            raise ValueError(f"vehicle kind must be car or cyclist, got {self.kind}")


@dataclass
class PedestrianSpec:
    id: str
    start: np.ndarray
    end: np.ndarray
    speed: float = 1.3
    trigger_time: float = 1e9
    trigger_distance: float = 0.0
    time_jitter: float = 0.0
    radius: float = 0.4


@dataclass
class WorldConfig:
    name: str
    route: np.ndarray
    roads: list
    dt: float = 0.05
    timeout: float = 120.0
    cruise_speed: float = 6.0
    drivable: list = field(default_factory=list)
    obstacles: list = field(default_factory=list)
    signals: list = field(default_factory=list)
    stop_signs: list = field(default_factory=list)
    vehicles: list = field(default_factory=list)
    pedestrians: list = field(default_factory=list)
    near_distance: float = 10.0
    sidewalk_width: float = 2.5
    stop_hold: float = 1.0
    stop_clear_distance: float = 8.0

    def __post_init__(self):
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        self.route_line = geo.Polyline(self.route)
        self.drivable_pieces = [p for r in self.roads for p in geo.buffer_polyline(r.centerline, r.width / 2)]
        self.drivable_pieces += [_arr(p) for p in self.drivable]
        self.drivable_bboxes = [geo.bbox(p) for p in self.drivable_pieces]
        self.signal_s = {}
        for sig in self.signals:
            s = self.route_line.crossing_s(sig.stop_line[0], sig.stop_line[1])
            if s is not None:
                self.signal_s[sig.id] = s
        self.stop_sign_span = {}
        dense = np.arange(0.0, self.route_line.length, 0.25)
        pts = self.route_line.point_at(dense)
        for ss in self.stop_signs:
            inside = geo.points_in_polygon(pts, ss.trigger)
            if inside.any():
                self.stop_sign_span[ss.id] = (float(dense[inside].min()), float(dense[inside].max()))

    @property
    def route_length(self):
        return self.route_line.length

    def drivable_mask(self, points):
        pts = np.asarray(points, dtype=np.float64).reshape(-1, 2)
        out = np.zeros(len(pts), dtype=bool)
        box = (pts[:, 0].min(), pts[:, 1].min(), pts[:, 0].max(), pts[:, 1].max())
        for piece, pb in zip(self.drivable_pieces, self.drivable_bboxes):
            if geo.bbox_overlap(box, pb):
                out |= geo.points_in_polygon(pts, piece)
        return out

    # -- serialisation ----------------------------------------------------
    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d["route"] = _arr(d["route"])
        d["roads"] = [Road(_arr(r["centerline"]), float(r.get("width", 7.0))) for r in d.get("roads", [])]
        d["drivable"] = [_arr(p) for p in d.get("drivable", [])]
        d["obstacles"] = [_arr(p) for p in d.get("obstacles", [])]
        d["signals"] = [Signal(s["id"], _arr(s["stop_line"]), _arr(s["zone"]),
                               [(p[0], float(p[1])) for p in s["phases"]],
                               float(s.get("offset", 0.0)), float(s.get("offset_jitter", 0.0)))
                        for s in d.get("signals", [])]
        d["stop_signs"] = [StopSign(s["id"], _arr(s["trigger"]), s.get("visibility", "painted"))
                           for s in d.get("stop_signs", [])]
        d["vehicles"] = [VehicleSpec(**{**v, "path": _arr(v["path"])}) for v in d.get("vehicles", [])]
        d["pedestrians"] = [PedestrianSpec(**{**p, "start": _arr(p["start"]), "end": _arr(p["end"])})
                            for p in d.get("pedestrians", [])]
        return cls(**d)

    def to_dict(self):
        r = lambda a: np.round(np.asarray(a, dtype=np.float64), 6).tolist()
        out = {
            "name": self.name, "dt": self.dt, "timeout": self.timeout, "cruise_speed": self.cruise_speed,
            "near_distance": self.near_distance, "sidewalk_width": self.sidewalk_width,
            "stop_hold": self.stop_hold,
            "stop_clear_distance": self.stop_clear_distance,
            "route": r(self.route),
            "roads": [{"centerline": r(x.centerline), "width": x.width} for x in self.roads],
        }
        if self.drivable:
            out["drivable"] = [r(p) for p in self.drivable]
        if self.obstacles:
            out["obstacles"] = [r(p) for p in self.obstacles]
        if self.signals:
            out["signals"] = [{"id": s.id, "stop_line": r(s.stop_line), "zone": r(s.zone),
                               "phases": [[p, d] for p, d in s.phases], "offset": s.offset,
                               "offset_jitter": s.offset_jitter} for s in self.signals]
        if self.stop_signs:
            out["stop_signs"] = [{"id": s.id, "trigger": r(s.trigger), "visibility": s.visibility}
                                 for s in self.stop_signs]
        if self.vehicles:
            out["vehicles"] = [{"id": v.id, "kind": v.kind, "path": r(v.path), "speed": v.speed,
                                "start_s": v.start_s, "start_time": v.start_time,
                                "speed_jitter": v.speed_jitter, "length": v.length, "width": v.width}
                               for v in self.vehicles]
        if self.pedestrians:
            out["pedestrians"] = [{"id": p.id, "start": r(p.start), "end": r(p.end), "speed": p.speed,
                                   "trigger_time": p.trigger_time, "trigger_distance": p.trigger_distance,
                                   "time_jitter": p.time_jitter, "radius": p.radius}
                                  for p in self.pedestrians]
        return out

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            return cls.from_dict(yaml.safe_load(fh))

    def save(self, path):
        with open(path, "w") as fh:
            yaml.safe_dump(self.to_dict(), fh, sort_keys=False, default_flow_style=None, width=120)


class VehicleAgent:
    def __init__(self, spec, speed):
        self.spec = spec
        self.line = geo.Polyline(spec.path)
        self.s = spec.start_s
        self.speed = speed
        self.v = 0.0
        self.active = True

    @property
    def pose(self):
        p = self.line.point_at(self.s)
        return float(p[0]), float(p[1]), float(self.line.heading_at(self.s))

    def footprint(self):
        x, y, yaw = self.pose
        w = max(self.spec.width, 0.8)
        return geo.rect_polygon(x, y, yaw, self.spec.length, w)


class PedestrianAgent:
    def __init__(self, spec, trigger_time):
        self.spec = spec
        self.trigger_time = trigger_time
        self.pos = spec.start.copy()
        self.walking = False
        self.done = False


class World:
    """Mutable per-episode world: agents, signal clock and the episode time."""

    def __init__(self, cfg, seed=0):
        self.cfg = cfg
        self.seed = int(seed)
        rng = Rng(self.seed)
        self.time = 0.0
        self.signal_offset = {s.id: s.offset + rng.uniform(0.0, s.offset_jitter) if s.offset_jitter else s.offset
                              for s in cfg.signals}
        self.vehicles = []
        for v in cfg.vehicles:
            f = 1.0 + (rng.uniform(-v.speed_jitter, v.speed_jitter) if v.speed_jitter else 0.0)
            self.vehicles.append(VehicleAgent(v, v.speed * f))
        self.cleared = set()
        self.stop_wait = {ss.id: 0.0 for ss in cfg.stop_signs}
        self.pedestrians = []
        for p in cfg.pedestrians:
            j = rng.uniform(-p.time_jitter, p.time_jitter) if p.time_jitter else 0.0
            self.pedestrians.append(PedestrianAgent(p, p.trigger_time + j))

    def signal_state(self, sig):
        return sig.state_at(self.time, self.signal_offset[sig.id])

    def signal_remaining(self, sig):
        return sig.remaining_at(self.time, self.signal_offset[sig.id])

    def advance(self, ego, dt):
        """Move every agent by one step given the ego pose at the start of the step."""
        for ss in self.cfg.stop_signs:
            if ss.id in self.cleared or ego.v >= STOP_CLEAR_SPEED:
                continue
            p = np.array([[ego.x, ego.y]])
            near = geo.points_in_polygon(p, ss.trigger)[0] or \
                geo.polyline_distance(p, np.vstack([ss.trigger, ss.trigger[:1]]))[0] <= self.cfg.stop_clear_distance
            if near:
                self.stop_wait[ss.id] += dt
                if self.stop_wait[ss.id] >= self.cfg.stop_hold - 1e-9:
                    self.cleared.add(ss.id)
        blockers = [(ego.x, ego.y)] + [tuple(p.pos) for p in self.pedestrians] + \
                   [a.pose[:2] for a in self.vehicles if a.active]
        for a in self.vehicles:
            if not a.active:
                continue
            if self.time < a.spec.start_time:
                a.v = 0.0
                continue
            x, y, yaw = a.pose
            local = geo.to_local(np.array(blockers), x, y, yaw)
            reach = a.spec.length / 2 + 2.5 + 4.0 + 0.8 * a.speed
            ahead = (local[:, 0] > 0.5) & (local[:, 0] < reach) & (np.abs(local[:, 1]) < 2.0)
            a.v = 0.0 if ahead.any() else a.speed
            a.s += a.v * dt
            if a.s >= a.line.length:
                a.active = False
        for p in self.pedestrians:
            if p.done:
                continue
            if not p.walking:
                near = p.spec.trigger_distance > 0 and math.hypot(ego.x - p.spec.start[0],
                                                                  ego.y - p.spec.start[1]) <= p.spec.trigger_distance
                if self.time >= p.trigger_time or near:
                    p.walking = True
            if p.walking:
                d = p.spec.end - p.pos
                n = float(np.hypot(*d))
                step = p.spec.speed * dt
                if n <= step:
                    p.pos = p.spec.end.copy()
                    p.walking, p.done = False, True
                else:
                    p.pos = p.pos + d / n * step
        self.time += dt

    def snapshot(self):
        return {
            "vehicles": [(a.spec.id, a.spec.kind, *a.pose, a.spec.length, a.spec.width)
                         for a in self.vehicles if a.active],
            "pedestrians": [(p.spec.id, float(p.pos[0]), float(p.pos[1]), p.spec.radius) for p in self.pedestrians],
            "signals": {s.id: self.signal_state(s) for s in self.cfg.signals},
            "cleared": sorted(self.cleared),
        }
