"""Generator for the shipped desk benchmark routes.

Run ``python -m divdrive.sim.desk`` to rewrite the YAML files in
``divdrive/data/routes``.  Traffic drives on the right: the ego lane is
centred on the route and the road centreline (the lane divider) runs
``LANE`` metres to its left.
"""

import math
import sys
from pathlib import Path

import numpy as np

from . import geometry as geo
from .world import WorldConfig

LANE = 3.5
ROAD_WIDTH = 2 * LANE
ROUTES_DIR = Path(__file__).resolve().parent.parent / "data" / "routes"
DESK_ROUTES = ("straight_lead", "straight_stop", "turn_left", "turn_right", "signal_straight", "signal_turn")
PHASES = [["green", 8.0], ["yellow", 3.0], ["red", 8.0]]


def straight(p0, heading, length, step=5.0):
    n = max(1, int(round(length / step)))
    d = np.linspace(0.0, length, n + 1)
    return np.asarray(p0) + d[:, None] * [math.cos(heading), math.sin(heading)]


def arc(p0, heading, radius, angle, step_deg=7.5):
    """Circular arc starting at p0 with initial heading; angle > 0 turns left."""
    n = max(2, int(math.ceil(abs(math.degrees(angle)) / step_deg)))
    side = 1.0 if angle > 0 else -1.0
    cx = p0[0] - side * radius * math.sin(heading)
    cy = p0[1] + side * radius * math.cos(heading)
    phi0 = heading - side * math.pi / 2
    phis = phi0 + np.linspace(0.0, angle, n + 1)
    return np.stack([cx + radius * np.cos(phis), cy + radius * np.sin(phis)], axis=1)


def chain(*parts):
    pts = [parts[0]]
    for p in parts[1:]:
        pts.append(p[1:])
    return np.vstack(pts)


def end_heading(pts):
    d = pts[-1] - pts[-2]
    return math.atan2(d[1], d[0])


def lane_box(line, s0, s1, half=LANE / 2):
    """Polygon covering the ego lane between arc lengths s0 and s1 of a route polyline."""
    seg = line.window(s0, s1)
    left = geo.offset_polyline(seg, half)
    right = geo.offset_polyline(seg, -half)
    return np.vstack([right, left[::-1]])


def stop_line(line, s, half=LANE / 2):
    p = line.point_at(s)
    h = float(line.heading_at(s))
    n = np.array([-math.sin(h), math.cos(h)])
    return np.array([p - half * n, p + half * n])


def base(name, route, extra_roads=(), **kw):
    road = geo.offset_polyline(route, LANE / 2)
    roads = [{"centerline": road, "width": ROAD_WIDTH}]
    roads += [{"centerline": np.asarray(r), "width": ROAD_WIDTH} for r in extra_roads]
    d = {"name": name, "route": route, "roads": roads, "dt": 0.05, "timeout": 80.0, "cruise_speed": 6.0}
    d.update(kw)
    return d


def straight_lead():
    route = straight((0.0, 0.0), 0.0, 100.0)
    return base("straight_lead", route, vehicles=[
        {"id": "lead", "kind": "car", "path": straight((0.0, 0.0), 0.0, 180.0, 10.0), "speed": 4.0,
         "start_s": 22.0, "start_time": 2.0, "speed_jitter": 0.15},
        {"id": "oncoming", "kind": "car", "path": straight((130.0, LANE), math.pi, 150.0, 10.0), "speed": 6.0,
         "start_s": 0.0, "speed_jitter": 0.2},
    ])


def straight_stop():
    route = straight((0.0, 0.0), 0.0, 110.0)
    line = geo.Polyline(route)
    return base("straight_stop", route, stop_signs=[
        {"id": "painted", "trigger": lane_box(line, 38.0, 44.0), "visibility": "painted"},
        {"id": "upright", "trigger": lane_box(line, 78.0, 84.0), "visibility": "upright"},
    ], vehicles=[
        {"id": "oncoming", "kind": "car", "path": straight((140.0, LANE), math.pi, 160.0, 10.0), "speed": 5.0,
         "start_s": 0.0, "start_time": 4.0, "speed_jitter": 0.2},
    ])


def turn_left():
    a = straight((0.0, 0.0), 0.0, 40.0)
    b = arc(a[-1], 0.0, 15.0, math.pi / 2)
    c = straight(b[-1], end_heading(b), 45.0)
    route = chain(a, b, c)
    return base("turn_left", route, vehicles=[
        {"id": "cyclist", "kind": "cyclist", "path": chain(route, straight(route[-1], math.pi / 2, 60.0, 10.0)),
         "speed": 3.5, "start_s": 14.0, "start_time": 1.0, "speed_jitter": 0.1, "length": 1.8, "width": 0.6},
    ])


def turn_right():
    a = straight((0.0, 0.0), 0.0, 25.0)
    b = arc(a[-1], 0.0, 20.0, -math.pi / 3)
    c = straight(b[-1], end_heading(b), 15.0)
    d = arc(c[-1], end_heading(c), 20.0, math.pi / 3)
    e = straight(d[-1], end_heading(d), 30.0)
    route = chain(a, b, c, d, e)
    oncoming = geo.offset_polyline(route, LANE)[::-1]
    return base("turn_right", route, vehicles=[
        {"id": "oncoming", "kind": "car", "path": oncoming, "speed": 5.0, "start_s": 0.0, "start_time": 0.0,
         "speed_jitter": 0.2},
        {"id": "oncoming2", "kind": "car", "path": oncoming, "speed": 5.0, "start_s": 0.0, "start_time": 9.0,
         "speed_jitter": 0.2},
    ])


def signal_straight():
    route = straight((0.0, 0.0), 0.0, 120.0)
    line = geo.Polyline(route)
    cross = straight((58.0, -25.0), math.pi / 2, 50.0, 10.0)
    return base("signal_straight", route, extra_roads=[cross], signals=[
        {"id": "light", "stop_line": stop_line(line, 50.0), "zone": lane_box(line, 46.0, 50.0), "phases": PHASES,
         "offset": 0.0, "offset_jitter": 19.0},
    ], pedestrians=[
        {"id": "walker", "start": [85.0, -6.0], "end": [85.0, 9.0], "speed": 1.3, "trigger_distance": 22.0,
         "time_jitter": 0.0},
    ])


def signal_turn():
    a = straight((0.0, 0.0), 0.0, 50.0)
    b = arc(a[-1], 0.0, 12.0, math.pi / 2)
    c = straight(b[-1], end_heading(b), 50.0)
    route = chain(a, b, c)
    line = geo.Polyline(route)
    cross = straight((62.0 + LANE / 2, -30.0), math.pi / 2, 45.0, 10.0)
    x_c = float(route[-1][0])
    return base("signal_turn", route, extra_roads=[cross], signals=[
        {"id": "light", "stop_line": stop_line(line, 46.0), "zone": lane_box(line, 42.0, 46.0), "phases": PHASES,
         "offset": 5.0, "offset_jitter": 19.0},
    ], pedestrians=[
        {"id": "walker", "start": [x_c + 6.0, 40.0], "end": [x_c - 9.0, 40.0], "speed": 1.3,
         "trigger_time": 14.0, "trigger_distance": 20.0, "time_jitter": 3.0},
    ])


BUILDERS = {f.__name__: f for f in (straight_lead, straight_stop, turn_left, turn_right, signal_straight, signal_turn)}


def build(name):
    return WorldConfig.from_dict(BUILDERS[name]())


def route_path(name):
    return ROUTES_DIR / f"{name}.yaml"


def load_route(name_or_path):
    p = Path(name_or_path)
    if p.suffix in (".yaml", ".yml"):
        return WorldConfig.load(p)
    return WorldConfig.load(route_path(str(name_or_path)))


def write_all(directory=ROUTES_DIR):
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for name in DESK_ROUTES:
        build(name).save(directory / f"{name}.yaml")


if __name__ == "__main__":
    write_all(sys.argv[1] if len(sys.argv) > 1 else ROUTES_DIR)
