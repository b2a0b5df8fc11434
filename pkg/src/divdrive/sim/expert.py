"""Privileged scripted expert: pure-pursuit steering and a hazard-aware speed plan.

The expert reads the world state directly (signal phases, agent poses), so
its decisions are exact.  Besides the action it emits the supervision
targets used in training: future waypoints, a target speed, a scalar value
and a small privileged feature vector.
"""

import math
from dataclasses import dataclass

import numpy as np

from ..controller import COMMANDS, ControlAction
from . import geometry as geo
from .dynamics import VehicleParams

N_FEATURES = 8


@dataclass(frozen=True)
class ExpertConfig:
    horizon: int = 4
    waypoint_dt: float = 0.5
    comfort_decel: float = 2.0
    lateral_accel: float = 2.0
    speed_gain: float = 2.0         # 1/s, speed-error to acceleration
    signal_margin: float = 3.0      # ego centre stops this far before a stop line
    lead_gap: float = 4.0
    ped_margin: float = 6.0
    corridor: float = 2.5
    ped_corridor: float = 2.0
    ped_watch: float = 5.0
    turn_angle: float = 0.5
    goal_distance: float = 20.0
    gamma: float = 0.9
    hazard_range: float = 15.0


@dataclass
class ExpertOutput:
    action: ControlAction
    waypoints: np.ndarray     # (T, 2) ego frame
    target_speed: float
    value: float
    features: np.ndarray      # (N_FEATURES,)
    command: str
    goal: np.ndarray          # (2,) ego frame


def navigation(cfg, ego, s, turn_angle=0.5, goal_distance=20.0):
    """High-level command from the route's heading change ahead, and the ego-frame goal point."""
    line = cfg.route_line
    h0 = float(line.heading_at(s + 0.5))
    dh = geo.wrap_angle(float(line.heading_at(s + goal_distance)) - h0)
    near_signal = any(0.0 <= cs - s <= goal_distance for cs in cfg.signal_s.values())
    if dh > turn_angle:
        command = "left"
    elif dh < -turn_angle:
        command = "right"
    elif near_signal:
        command = "straight"
    else:
        command = "follow"
    goal = geo.to_local(line.point_at(s + goal_distance), ego.x, ego.y, ego.yaw)
    return command, goal


def measurement_vector(speed, command, goal):
    onehot = np.zeros(len(COMMANDS))
    onehot[COMMANDS.index(command)] = 1.0
    return np.concatenate([[speed], onehot, goal]).astype(np.float64)


class Expert:
    """Per-episode expert; stop-sign progress lives in the world, so it is stateless."""

    def __init__(self, cfg, params=VehicleParams(), ecfg=ExpertConfig()):
        self.cfg = cfg
        self.params = params
        self.ecfg = ecfg

    def reset(self):
        pass

    # -- speed planning ---------------------------------------------------
    def _curve_limit(self, s, v_cruise):
        e = self.ecfg
        line = self.cfg.route_line
        limit = v_cruise
        for d in np.arange(0.0, 30.0, 2.0):
            dh = abs(geo.wrap_angle(float(line.heading_at(s + d + 4.0)) - float(line.heading_at(s + d))))
            kappa = dh / 4.0
            if kappa > 1e-6:
                v_here = math.sqrt(e.lateral_accel / kappa)
                limit = min(limit, math.sqrt(v_here ** 2 + 2.0 * e.comfort_decel * d))
        return limit, dh

    def _stop_points(self, world, ego, s, dt):
        """Distances along the route to every point the ego must stop at, with tags."""
        e, cfg = self.ecfg, self.cfg
        stops = []
        v = ego.v
        for sig in cfg.signals:
            cs = cfg.signal_s.get(sig.id)
            if cs is None or cs < s:
                continue
            state = world.signal_state(sig)
            d = cs - s - e.signal_margin
            if state == "red":
                stops.append((d, "red"))
            elif state == "yellow":
                line_d = cs - s
                clears = line_d < 0.5 or line_d / max(v, 0.1) < world.signal_remaining(sig) - 0.3
                needed = v * v / (2.0 * max(d, 0.1))
                if not clears and needed <= 0.8 * self.params.k_brake:
                    stops.append((d, "yellow"))
        for ss in cfg.stop_signs:
            span = cfg.stop_sign_span.get(ss.id)
            if span is None or ss.id in world.cleared or s > span[1]:
                continue
            mid = 0.5 * (span[0] + span[1])
            stops.append((max(mid - s, 0.0), "stop_sign"))
        half = self.params.length / 2
        for a in world.vehicles:
            if not a.active:
                continue
            x, y, _ = a.pose
            vs, lat, dist = cfg.route_line.project((x, y), s_hint=s + 15.0, window=40.0)
            if dist <= e.corridor and vs > s:
                d = vs - s - (a.spec.length / 2 + half + e.lead_gap) + a.v * a.v / (2.0 * e.comfort_decel)
                stops.append((d, "vehicle"))
        for p in world.pedestrians:
            ps, lat, dist = cfg.route_line.project(p.pos, s_hint=s + 15.0, window=40.0)
            if ps <= s - half or dist > e.ped_watch:
                continue
            if dist <= e.ped_corridor or (p.walking and self._approaching(p, ps)):
                stops.append((ps - s - e.ped_margin, "pedestrian"))
        return stops

    def _approaching(self, p, ps):
        line = self.cfg.route_line
        centre = line.point_at(ps)
        d = p.spec.end - p.pos
        return float(d @ (centre - p.pos)) > 0

    def act(self, world, ego, s, dt):
        e, cfg, prm = self.ecfg, self.cfg, self.params
        line = cfg.route_line
        v_cruise = cfg.cruise_speed
        v_curve, _ = self._curve_limit(s, v_cruise)
        stops = self._stop_points(world, ego, s, dt)
        d_stop = min([d for d, _ in stops], default=np.inf)
        v_stop = math.sqrt(2.0 * e.comfort_decel * d_stop) if d_stop > 0.3 else 0.0
        v_target = min(v_cruise, v_curve, v_stop)

        # pure pursuit on the route centreline
        look = min(10.0, max(4.0, 2.0 + 0.6 * ego.v))
        target = geo.to_local(line.point_at(s + look), ego.x, ego.y, ego.yaw)
        ld2 = max(float(target @ target), 1e-6)
        delta = math.atan(prm.wheelbase * 2.0 * float(target[1]) / ld2)
        steer = delta / prm.max_steer

        if v_target == 0.0 and ego.v < 0.3:
            accel = -1.0
        else:
            a_des = e.speed_gain * (v_target - ego.v) + prm.drag * ego.v
            if v_stop < ego.v and d_stop > 0.3:
                # exact constant deceleration to the stop point when tighter than the gain rule
                a_des = min(a_des, -ego.v * ego.v / (2.0 * d_stop))
            accel = a_des / prm.k_throttle if a_des >= 0 else a_des / prm.k_brake
        action = ControlAction.from_accel(steer, accel)

        ks = np.arange(1, e.horizon + 1)
        dk = np.minimum(ks * e.waypoint_dt * v_target, max(d_stop, 0.0))
        waypoints = geo.to_local(line.point_at(s + dk), ego.x, ego.y, ego.yaw)

        steps = np.diff(np.concatenate([[0.0], dk]))
        disc = e.gamma ** np.arange(e.horizon)
        progress = float((disc * steps).sum() / (disc.sum() * e.waypoint_dt * v_cruise))
        hazard = 1.0 if d_stop <= e.hazard_range else 0.0
        value = progress - 0.5 * hazard

        command, goal = navigation(cfg, ego, s, e.turn_angle, e.goal_distance)
        tags = {t for d, t in stops if d <= e.hazard_range}
        _, lat, _ = line.project((ego.x, ego.y), s_hint=s, window=5.0)
        lead = min([d for d, t in stops if t == "vehicle"], default=30.0)
        features = np.array([
            ego.v / v_cruise,
            v_target / v_cruise,
            min(d_stop, 30.0) / 30.0,
            1.0 if ("red" in tags or "yellow" in tags) else 0.0,
            min(max(lead, 0.0), 30.0) / 30.0,
            1.0 if "pedestrian" in tags else 0.0,
            1.0 if "stop_sign" in tags else 0.0,
            max(-1.0, min(1.0, lat / 2.0)),
        ])
        return ExpertOutput(action, waypoints, v_target, value, features, command, goal)
