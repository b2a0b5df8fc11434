"""Infraction detection over an ego trace.

:class:`InfractionMonitor` is fed one step at a time during an episode;
:func:`detect_infractions` replays a recorded trace through a fresh monitor,
so the online and offline results are the same by construction.
"""

from dataclasses import dataclass

import numpy as np

from . import geometry as geo
from .dynamics import VehicleParams

KINDS = ("collision_pedestrian", "collision_vehicle", "collision_layout", "red_light", "stop_sign",
         "off_road", "route_deviation", "route_timeout", "agent_blocked")
TERMINAL = ("route_deviation", "route_timeout", "agent_blocked")

STOP_SPEED = 0.1
BLOCKED_TIME = 90.0
DEVIATION = 5.0


@dataclass(frozen=True)
class InfractionEvent:
    kind: str
    time: float
    position: tuple

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown infraction kind {self.kind!r}")

    def to_dict(self):
        return {"kind": self.kind, "time": self.time, "x": self.position[0], "y": self.position[1]}


@dataclass(frozen=True)
class TraceStep:
    """Everything the detector needs about one simulation step (state after the step)."""

    time: float
    x: float
    y: float
    yaw: float
    v: float
    lateral: float
    snapshot: dict


def _side(p, line):
    (x0, y0), (x1, y1) = line
    return (x1 - x0) * (p[1] - y0) - (y1 - y0) * (p[0] - x0)


def _crosses(a, b, line):
    """Ego path a->b crosses the segment; a start exactly on the line does not count again."""
    sa, sb = _side(a, line), _side(b, line)
    if sa == 0 or sa * sb > 0:
        return False
    return geo.segments_intersect(a, b, line[0], line[1])


class InfractionMonitor:
    def __init__(self, cfg, params=VehicleParams()):
        self.cfg = cfg
        self.params = params
        self.events = []
        self.terminated = False
        self.prev = None
        self.touching = set()
        self.inside_stop = {}
        self.off_road = False
        self.slow_since = None

    def _emit(self, kind, step):
        ev = InfractionEvent(kind, float(step.time), (float(step.x), float(step.y)))
        self.events.append(ev)
        if kind in TERMINAL:
            self.terminated = True
        return ev

    def _contacts(self, step):
        ego = geo.rect_polygon(step.x, step.y, step.yaw, self.params.length, self.params.width)
        box = geo.bbox(ego)
        hits = set()
        for vid, _, x, y, yaw, length, width in step.snapshot.get("vehicles", ()):
            poly = geo.rect_polygon(x, y, yaw, length, width)
            if geo.bbox_overlap(box, geo.bbox(poly)) and geo.convex_overlap(ego, poly):
                hits.add(("collision_vehicle", vid))
        for pid, x, y, r in step.snapshot.get("pedestrians", ()):
            if box[0] - r <= x <= box[2] + r and box[1] - r <= y <= box[3] + r:
                if geo.disc_polygon_overlap((x, y), r, ego):
                    hits.add(("collision_pedestrian", pid))
        for i, poly in enumerate(self.cfg.obstacles):
            if geo.bbox_overlap(box, geo.bbox(poly)) and geo.convex_overlap(ego, poly):
                hits.add(("collision_layout", i))
        return hits

    def update(self, step):
        """Consume one step; returns the events it produced."""
        if self.terminated:
            return []
        n0 = len(self.events)
        hits = self._contacts(step)
        for key in sorted(hits - self.touching, key=str):
            self._emit(key[0], step)
        self.touching = hits

        if self.prev is not None:
            a, b = (self.prev.x, self.prev.y), (step.x, step.y)
            for sig in self.cfg.signals:
                if step.snapshot["signals"].get(sig.id) == "red" and _crosses(a, b, sig.stop_line):
                    self._emit("red_light", step)
        for ss in self.cfg.stop_signs:
            inside = bool(geo.points_in_polygon(np.array([[step.x, step.y]]), ss.trigger)[0])
            if inside:
                best = self.inside_stop.get(ss.id, np.inf)
                self.inside_stop[ss.id] = min(best, step.v)
            elif ss.id in self.inside_stop:
                if self.inside_stop.pop(ss.id) >= STOP_SPEED:
                    self._emit("stop_sign", step)

        on_road = bool(self.cfg.drivable_mask([[step.x, step.y]])[0])
        if not on_road and not self.off_road:
            self._emit("off_road", step)
        self.off_road = not on_road

        if abs(step.lateral) > DEVIATION:
            self._emit("route_deviation", step)
        if step.v < STOP_SPEED:
            if self.slow_since is None:
                self.slow_since = step.time
            elif step.time - self.slow_since > BLOCKED_TIME:
                self._emit("agent_blocked", step)
        else:
            self.slow_since = None
        self.prev = step
        return self.events[n0:]

    def timeout(self, step):
        if not self.terminated:
            self._emit("route_timeout", step)


def detect_infractions(cfg, trace, completed=None, params=VehicleParams()):
    """Events produced by replaying ``trace`` (a sequence of :class:`TraceStep`).

    ``completed`` tells whether the route was finished; when it is False and
    the trace ran to the time limit a ``route_timeout`` is appended.
    """
    mon = InfractionMonitor(cfg, params)
    for step in trace:
        mon.update(step)
        if mon.terminated:
            break
    if completed is False and trace and not mon.terminated and trace[-1].time >= cfg.timeout - 1e-9:
        mon.timeout(trace[-1])
    return list(mon.events)
