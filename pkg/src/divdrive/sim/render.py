"""Ego-frame rasterisation of the world into a multi-channel occupancy grid.

Row 0 is the farthest cell ahead of the ego; column 0 is the leftmost.
Cell values are sampled at cell centres.
"""

from dataclasses import dataclass

import numpy as np

from . import geometry as geo

CHANNELS = ("drivable", "route", "vehicles", "pedestrians", "signal")
CATEGORIES = ("pedestrians", "cyclists", "vehicles", "traffic_lights")
SEMANTIC_CLASSES = ("road", "roadline", "sidewalk")

SIGNAL_VALUE = {"red": 1.0, "yellow": 0.5}
STOP_SIGN_VALUE = 0.75
ROUTE_RADIUS = 1.0
ROUTE_HORIZON = 50.0
MIN_VEHICLE_WIDTH = 1.5
MIN_PED_RADIUS = 0.75
ROADLINE_RADIUS = 0.6


@dataclass(frozen=True)
class GridSpec:
    size: int = 32
    cell: float = 1.0
    x_min: float = -2.0

    def cell_centres(self):
        """Ego-frame (size*size, 2) cell centres in row-major order."""
        n, c = self.size, self.cell
        xs = self.x_min + (n - 0.5 - np.arange(n)) * c
        ys = (n / 2 - 0.5 - np.arange(n)) * c
        gx, gy = np.meshgrid(xs, ys, indexing="ij")
        return np.stack([gx.ravel(), gy.ravel()], axis=1)

    def cell_of(self, x, y):
        """(row, col) containing ego-frame point (x, y), or None outside the window."""
        n, c = self.size, self.cell
        row = int(np.floor((self.x_min + n * c - x) / c))
        col = int(np.floor((n * c / 2 - y) / c))
        if 0 <= row < n and 0 <= col < n:
            return row, col
        return None


def _world_cells(grid, ego):
    return geo.to_world(grid.cell_centres(), ego.x, ego.y, ego.yaw)


def _vehicle_mask(pts, snap, kinds):
    out = np.zeros(len(pts), dtype=bool)
    for _, kind, x, y, yaw, length, width in snap["vehicles"]:
        if kind in kinds:
            out |= geo.points_in_polygon(pts, geo.rect_polygon(x, y, yaw, length, max(width, MIN_VEHICLE_WIDTH)))
    return out


def _ped_mask(pts, snap):
    out = np.zeros(len(pts), dtype=bool)
    for _, x, y, r in snap["pedestrians"]:
        out |= np.hypot(pts[:, 0] - x, pts[:, 1] - y) <= max(r, MIN_PED_RADIUS)
    return out


def render_observation(world, ego, route_s=0.0, grid=GridSpec()):
    """(5, size, size) float grid with values in {0, 0.25, ..., 1}."""
    cfg = world.cfg
    pts = _world_cells(grid, ego)
    n = grid.size
    snap = world.snapshot()
    obs = np.zeros((len(CHANNELS), n * n))
    obs[0] = cfg.drivable_mask(pts)
    remaining = cfg.route_line.window(route_s, route_s + ROUTE_HORIZON)
    obs[1] = geo.polyline_distance(pts, remaining) <= ROUTE_RADIUS
    obs[2] = _vehicle_mask(pts, snap, ("car", "cyclist"))
    obs[3] = _ped_mask(pts, snap)
    sig = np.zeros(n * n)
    for s in cfg.signals:
        value = SIGNAL_VALUE.get(snap["signals"][s.id], 0.0)
        if value:
            sig = np.maximum(sig, value * geo.points_in_polygon(pts, s.zone))
    for ss in cfg.stop_signs:
        if ss.id in world.cleared:
            continue
        if ss.visibility == "painted":
            closed = np.vstack([ss.trigger, ss.trigger[:1]])
            if geo.polyline_distance([[ego.x, ego.y]], closed)[0] > cfg.near_distance:
                continue
        sig = np.maximum(sig, STOP_SIGN_VALUE * geo.points_in_polygon(pts, ss.trigger))
    obs[4] = sig
    return obs.reshape(len(CHANNELS), n, n)


def render_masks(world, ego, grid=GridSpec()):
    """Ground-truth boolean masks per object category and semantic class."""
    cfg = world.cfg
    pts = _world_cells(grid, ego)
    n = grid.size
    snap = world.snapshot()
    lights = np.zeros(len(pts), dtype=bool)
    for s in cfg.signals:
        lights |= geo.points_in_polygon(pts, s.zone)
    road = cfg.drivable_mask(pts)
    centre = np.full(len(pts), np.inf)
    edge = np.zeros(len(pts), dtype=bool)
    for r in cfg.roads:
        d = geo.polyline_distance(pts, r.centerline)
        np.minimum(centre, d, out=centre)
        edge |= d <= r.width / 2 + cfg.sidewalk_width
    masks = {
        "pedestrians": _ped_mask(pts, snap),
        "cyclists": _vehicle_mask(pts, snap, ("cyclist",)),
        "vehicles": _vehicle_mask(pts, snap, ("car",)),
        "traffic_lights": lights,
        "road": road,
        "roadline": road & (centre <= ROADLINE_RADIUS),
        "sidewalk": edge & ~road,
    }
    return {k: v.reshape(n, n) for k, v in masks.items()}
