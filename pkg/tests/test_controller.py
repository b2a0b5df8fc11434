import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from divdrive.controller import (ControlAction, ControllerConfig, PidState, TrajectoryController,
                                 extract_action, fuse_actions, is_turning, lateral_control,
                                 longitudinal_control, target_speed)

unit = st.floats(-1.0, 1.0, allow_nan=False)
wide = st.floats(-5.0, 5.0, allow_nan=False)


def straight(speed, dt=0.5, T=4):
    return np.array([[speed * dt * (k + 1), 0.0] for k in range(T)])


class TestControlAction:
    @given(wide, wide, wide)
    def test_ranges_and_exclusivity(self, s, t, b):
        a = ControlAction.clamped(s, t, b)
        assert -1 <= a.steer <= 1 and 0 <= a.throttle <= 1 and 0 <= a.brake <= 1
        assert a.throttle * a.brake == 0

    def test_from_accel(self):
        assert ControlAction.from_accel(0.1, -0.4) == ControlAction(0.1, 0.0, 0.4)
        assert ControlAction.from_accel(0.0, 2.0).throttle == 1.0


class TestPid:
    def test_zero_gains(self):
        pid = PidState(0.0, 0.0, 0.0)
        assert all(pid.step(e) == 0.0 for e in (0.3, -2.0, 5.0))

    def test_window_length(self):
        pid = PidState(0.0, 1.0, 0.0, n=5)
        for k in range(12):
            pid.step(float(k))
        assert len(pid.buffer) == 5
        assert pid.window_sum == sum(range(7, 12))

    @given(st.lists(st.floats(-50, 50, allow_nan=False), min_size=1, max_size=60))
    def test_integral_clamped(self, errors):
        pid = PidState(0.0, 1.0, 0.0, n=10, windup=1.0)
        for e in errors:
            pid.step(e)
            assert abs(pid.integral()) <= 1.0

    def test_derivative_first_step_zero(self):
        pid = PidState(0.0, 0.0, 1.0)
        assert pid.step(0.7) == 0.0
        assert pid.step(1.0) == pytest.approx(0.3)

    def test_reset(self):
        pid = PidState(1.0, 1.0, 1.0)
        pid.step(1.0)
        pid.reset()
        assert not pid.buffer and pid.window_sum == 0.0

    def test_bad_window(self):
        with pytest.raises(ValueError):
            PidState(n=0)


class TestLateral:
    def test_straight_ahead(self):
        assert lateral_control(straight(5.0), PidState(1.0, 0.0, 0.1)) == 0.0

    def test_degenerate(self):
        assert lateral_control(np.zeros((4, 2)), PidState()) == 0.0

    @given(st.lists(st.tuples(st.floats(0.5, 10), st.floats(-5, 5)), min_size=2, max_size=6))
    def test_mirror(self, pts):
        w = np.array(pts)
        m = w * [1.0, -1.0]
        left = lateral_control(w, PidState(1.0, 0.2, 0.1))
        right = lateral_control(m, PidState(1.0, 0.2, 0.1))
        assert left == -right

    def test_pure_p_constant_heading(self):
        # aim point (mean of the first two waypoints) at heading 0.2 rad
        aim = np.array([np.cos(0.2), np.sin(0.2)]) * 6.0
        w = np.array([aim * 0.5, aim * 1.5, aim * 2.0, aim * 2.5])
        pid = PidState(1.0, 0.0, 0.0)
        for _ in range(10):
            assert lateral_control(w, pid) == pytest.approx(0.2, abs=1e-12)

    def test_clamped(self):
        w = np.array([[0.1, 5.0], [0.2, 8.0]])
        assert lateral_control(w, PidState(10.0)) == 1.0


class TestLongitudinal:
    def test_target_speed(self):
        assert target_speed(straight(4.0), 0.5) == pytest.approx(4.0)

    def test_matched_speed(self):
        th, br = longitudinal_control(straight(4.0), 4.0, PidState(0.5), 0.5)
        assert th == 0.0 and br == 0.0

    def test_stationary_target_brakes(self):
        th, br = longitudinal_control(np.zeros((4, 2)), 5.0, PidState(0.5), 0.5)
        assert th == 0.0 and br > 0.0

    def test_pure_p_speed_error(self):
        th, br = longitudinal_control(straight(6.0), 4.0, PidState(0.5), 0.5)
        assert th == pytest.approx(1.0) and br == 0.0
        th, _ = longitudinal_control(straight(5.0), 4.0, PidState(0.5), 0.5)
        assert th == pytest.approx(0.5)

    def test_deadband(self):
        assert longitudinal_control(straight(4.02), 4.0, PidState(0.5), 0.5, deadband=0.02) == (0.0, 0.0)

    def test_negative_speed(self):
        with pytest.raises(ValueError):
            longitudinal_control(straight(1.0), -0.1, PidState())


class TestExtractAction:
    def test_symmetric(self):
        a = extract_action(np.array([[2.0, 2.0], [5.0, 5.0]]))
        assert (a.steer, a.throttle, a.brake) == (0.0, 0.0, 0.0)

    def test_throttle(self):
        a = extract_action(np.array([[1.0, 1.0], [3.0, 1.0]]))
        assert a.throttle == pytest.approx(0.5) and a.brake == 0.0

    def test_brake(self):
        a = extract_action(np.array([[1.0, 1.0], [1.0, 3.0]]))
        assert a.throttle == 0.0 and a.brake == pytest.approx(0.5)

    def test_steer(self):
        assert extract_action(np.array([[3.0, 1.0], [1.0, 1.0]])).steer == pytest.approx(0.5)


class TestFusion:
    @given(unit, st.floats(0, 1), st.floats(0, 1), st.booleans())
    def test_fixed_point(self, s, t, b, turning):
        a = ControlAction.clamped(s, t, b)
        f = fuse_actions(a, a, turning)
        assert f.steer == pytest.approx(a.steer, abs=1e-15)
        assert f.accel == pytest.approx(a.accel, abs=1e-15)

    def test_endpoint_weights(self):
        a, c = ControlAction(0.1, 0.5, 0.0), ControlAction(-0.4, 0.0, 0.3)
        assert fuse_actions(a, c, True, w_turn=1.0) == c
        assert fuse_actions(a, c, False, w_straight=0.0) == a

    def test_turn_blend(self):
        f = fuse_actions(ControlAction(0.2), ControlAction(0.6), True)
        assert f.steer == pytest.approx(0.7 * 0.6 + 0.3 * 0.2)
        assert f.steer == pytest.approx(0.48)

    def test_straight_blend(self):
        f = fuse_actions(ControlAction(0.2), ControlAction(0.6), False)
        assert f.steer == pytest.approx(0.32)

    @given(unit, unit, st.floats(0, 1), st.floats(0, 1))
    def test_monotone_in_weight(self, s1, s2, w1, w2):
        a, c = ControlAction(s1), ControlAction(s2)
        lo, hi = sorted((w1, w2))
        f_lo = fuse_actions(a, c, True, w_turn=lo).steer
        f_hi = fuse_actions(a, c, True, w_turn=hi).steer
        if s2 >= s1:
            assert f_hi >= f_lo - 1e-15
        else:
            assert f_hi <= f_lo + 1e-15

    @given(unit, st.floats(-1, 1), unit, st.floats(-1, 1), st.booleans())
    def test_output_valid(self, s1, a1, s2, a2, turning):
        f = fuse_actions(ControlAction.from_accel(s1, a1), ControlAction.from_accel(s2, a2), turning)
        assert -1 <= f.steer <= 1 and f.throttle * f.brake == 0

    def test_turning_predicate(self):
        assert is_turning("left", ControlAction())
        assert is_turning("follow", ControlAction(0.2))
        assert not is_turning("straight", ControlAction(0.05))


class TestTrajectoryController:
    def test_follows_straight_plan(self):
        ctl = TrajectoryController(ControllerConfig())
        a = ctl.act(straight(6.0), 3.0)
        assert a.steer == 0.0 and a.throttle > 0 and a.brake == 0

    def test_reset_clears_state(self):
        ctl = TrajectoryController()
        first = ctl.act(straight(6.0), 3.0)
        for _ in range(5):
            ctl.act(straight(6.0), 3.0)
        ctl.reset()
        assert ctl.act(straight(6.0), 3.0) == first

    @settings(max_examples=30)
    @given(st.floats(0.3, 0.9), st.floats(0.0, 0.5))
    def test_fusion_uses_config_weights(self, wt, ws):
        cfg = ControllerConfig(w_turn=wt, w_straight=ws)
        ctl = TrajectoryController(cfg)
        f = ctl.fuse(ControlAction(0.0), ControlAction(0.05), "right")
        assert f.steer == pytest.approx(wt * 0.05)
        f = ctl.fuse(ControlAction(0.0), ControlAction(0.05), "follow")
        assert f.steer == pytest.approx(ws * 0.05)
