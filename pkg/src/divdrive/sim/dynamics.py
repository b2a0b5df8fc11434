"""Kinematic bicycle model for the ego vehicle."""

import math
from dataclasses import dataclass


@dataclass(frozen=True)
class VehicleParams:
    wheelbase: float = 2.9
    max_steer: float = 0.6          # rad at steer = 1
    k_throttle: float = 3.0         # m/s^2 at full throttle
    k_brake: float = 8.0            # m/s^2 at full brake
    drag: float = 0.05              # 1/s
    v_max: float = 12.0
    length: float = 4.5
    width: float = 2.0


@dataclass(frozen=True)
class EgoState:
    x: float = 0.0
    y: float = 0.0
    yaw: float = 0.0
    v: float = 0.0

    def __post_init__(self):
        if self.v < 0:
            raise ValueError("speed must be non-negative")

    @property
    def position(self):
        return (self.x, self.y)


def step(state, action, dt, params=VehicleParams()):
    """Advance one explicit Euler step; position and yaw use the pre-step speed."""
    a = params.k_throttle * action.throttle - params.k_brake * action.brake - params.drag * state.v
    v = min(params.v_max, max(0.0, state.v + a * dt))
    yaw = state.yaw + (state.v / params.wheelbase) * math.tan(action.steer * params.max_steer) * dt
    x = state.x + state.v * math.cos(state.yaw) * dt
    y = state.y + state.v * math.sin(state.yaw) * dt
    return EgoState(x, y, yaw, v)
