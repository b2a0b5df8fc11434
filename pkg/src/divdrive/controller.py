"""Waypoint-to-actuator control and fusion of the two policy outputs.

Steering is positive to the left (counter-clockwise yaw), matching the
ego frame used everywhere: +x forward, +y left.
"""

import math
from collections import deque
from dataclasses import dataclass, field

import numpy as np

COMMANDS = ("follow", "left", "right", "straight")


@dataclass(frozen=True)
class ControlAction:
    steer: float = 0.0
    throttle: float = 0.0
    brake: float = 0.0

    @classmethod
    def clamped(cls, steer, throttle, brake):
        """Clamp to actuator ranges and make throttle and brake exclusive via their net."""
        steer = min(1.0, max(-1.0, float(steer)))
        net = min(1.0, max(0.0, float(throttle))) - min(1.0, max(0.0, float(brake)))
        return cls(steer, max(net, 0.0), max(-net, 0.0))

    @classmethod
    def from_accel(cls, steer, accel):
        return cls.clamped(steer, max(accel, 0.0), max(-accel, 0.0))

    @property
    def accel(self):
        return self.throttle - self.brake

    def as_tuple(self):
        return (self.steer, self.throttle, self.brake)


@dataclass
class PidState:
    """PID with a sliding-window integral; the window mean is clamped to +-windup."""

    kp: float = 1.0
    ki: float = 0.0
    kd: float = 0.0
    n: int = 20
    windup: float = 1.0
    buffer: deque = field(default=None, repr=False)
    window_sum: float = 0.0

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("PID window length must be >= 1")
        self.buffer = deque(maxlen=self.n)

    def reset(self):
        self.buffer.clear()
        self.window_sum = 0.0

    def integral(self):
        if not self.buffer:
            return 0.0
        return min(self.windup, max(-self.windup, self.window_sum / len(self.buffer)))

    def step(self, error):
        prev = self.buffer[-1] if self.buffer else error
        self.buffer.append(error)
        # exact sum, not a running total: keeps mirrored inputs exactly negated
        self.window_sum = math.fsum(self.buffer)
        return self.kp * error + self.ki * self.integral() + self.kd * (error - prev)


@dataclass(frozen=True)
class ControllerConfig:
    lat_kp: float = 1.0
    lat_ki: float = 0.0
    lat_kd: float = 0.1
    lon_kp: float = 0.5
    lon_ki: float = 0.05
    lon_kd: float = 0.0
    window: int = 20
    windup: float = 1.0
    waypoint_dt: float = 0.5
    deadband: float = 0.02
    w_turn: float = 0.7
    w_straight: float = 0.3
    turn_steer: float = 0.1

    def lateral_pid(self):
        return PidState(self.lat_kp, self.lat_ki, self.lat_kd, self.window, self.windup)

    def longitudinal_pid(self):
        return PidState(self.lon_kp, self.lon_ki, self.lon_kd, self.window, self.windup)


def lateral_control(waypoints, pid):
    """Steer toward the midpoint of the first two waypoints."""
    w = np.asarray(waypoints, dtype=np.float64)
    if w.shape[0] < 1 or np.max(np.abs(w)) <= 1e-6:
        return 0.0
    aim = w[:2].mean(axis=0) if w.shape[0] >= 2 else w[0]
    heading_error = math.atan2(aim[1], aim[0])
    return min(1.0, max(-1.0, pid.step(heading_error)))


def target_speed(waypoints, waypoint_dt):
    w = np.asarray(waypoints, dtype=np.float64)
    pts = np.vstack([np.zeros((1, 2)), w])
    return float(np.linalg.norm(np.diff(pts, axis=0), axis=1).mean()) / waypoint_dt


def longitudinal_control(waypoints, current_speed, pid, waypoint_dt=0.5, deadband=0.0):
    if current_speed < 0:
        raise ValueError("speed must be non-negative")
    u = pid.step(target_speed(waypoints, waypoint_dt) - current_speed)
    if abs(u) < deadband:
        return 0.0, 0.0
    if u >= 0:
        return min(1.0, u), 0.0
    return 0.0, min(1.0, -u)


def extract_action(params):
    """Deterministic action from (D=2, 2) Beta parameters: the distribution means."""
    p = np.asarray(params, dtype=np.float64)
    steer = 2.0 * p[0, 0] / (p[0, 0] + p[0, 1]) - 1.0
    accel = 2.0 * p[1, 0] / (p[1, 0] + p[1, 1]) - 1.0
    return ControlAction.from_accel(steer, accel)


def is_turning(command, a_ctrl, steer_threshold=0.1):
    return command in ("left", "right") or abs(a_ctrl.steer) > steer_threshold


def fuse_actions(a_traj, a_ctrl, turning, w_turn=0.7, w_straight=0.3):
    """Per-field convex blend, leaning on the control head while turning."""
    w = w_turn if turning else w_straight
    steer = w * a_ctrl.steer + (1.0 - w) * a_traj.steer
    accel = w * a_ctrl.accel + (1.0 - w) * a_traj.accel
    return ControlAction.from_accel(steer, accel)


class TrajectoryController:
    """Per-episode pair of PIDs turning predicted waypoints into an action."""

    def __init__(self, cfg=None):
        self.cfg = cfg or ControllerConfig()
        self.lat = self.cfg.lateral_pid()
        self.lon = self.cfg.longitudinal_pid()

    def reset(self):
        self.lat.reset()
        self.lon.reset()

    def act(self, waypoints, speed):
        steer = lateral_control(waypoints, self.lat)
        throttle, brake = longitudinal_control(waypoints, speed, self.lon,
                                               self.cfg.waypoint_dt, self.cfg.deadband)
        return ControlAction.clamped(steer, throttle, brake)

    def fuse(self, a_traj, a_ctrl, command):
        turning = is_turning(command, a_ctrl, self.cfg.turn_steer)
        return fuse_actions(a_traj, a_ctrl, turning, self.cfg.w_turn, self.cfg.w_straight)
