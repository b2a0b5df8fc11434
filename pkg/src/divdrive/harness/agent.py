"""Closed-loop driving agent wrapping a trained policy and the PID controller."""


from .. import autodiff as ad
from ..controller import ControllerConfig, TrajectoryController, extract_action


class ModelAgent:
    """Runs the policy on each observation and fuses its two action estimates."""

    needs_observation = True

    def __init__(self, model, controller_cfg=None):
        self.model = model
        self.controller = TrajectoryController(controller_cfg or ControllerConfig())
        self.last = None

    def reset(self):
        self.controller.reset()
        self.last = None

    def act(self, ctx):
        with ad.no_grad():
            out = self.model(ctx.obs[None], ctx.meas[None])
        waypoints = out.waypoints.data[0]
        a_traj = self.controller.act(waypoints, ctx.ego.v)
        a_ctrl = extract_action(out.action_params.data[0, 0])
        action = self.controller.fuse(a_traj, a_ctrl, ctx.command)
        self.last = {"waypoints": waypoints, "a_traj": a_traj, "a_ctrl": a_ctrl, "action": action}
        return action


