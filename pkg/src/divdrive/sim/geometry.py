"""Planar geometry for polylines, polygons and footprints (metres, radians)."""

import math

import numpy as np

from .. import _kernels


def wrap_angle(a):
    return (a + math.pi) % (2.0 * math.pi) - math.pi


def to_local(points, x, y, yaw):
    """World points (N, 2) into the frame at (x, y) heading ``yaw``."""
    p = np.asarray(points, dtype=np.float64) - (x, y)
    c, s = math.cos(yaw), math.sin(yaw)
    return np.stack([c * p[..., 0] + s * p[..., 1], -s * p[..., 0] + c * p[..., 1]], axis=-1)


def to_world(points, x, y, yaw):
    p = np.asarray(points, dtype=np.float64)
    c, s = math.cos(yaw), math.sin(yaw)
    return np.stack([x + c * p[..., 0] - s * p[..., 1], y + s * p[..., 0] + c * p[..., 1]], axis=-1)


def rect_polygon(x, y, yaw, length, width):
    hl, hw = length / 2.0, width / 2.0
    corners = np.array([[hl, hw], [-hl, hw], [-hl, -hw], [hl, -hw]])
    return to_world(corners, x, y, yaw)


def offset_polyline(points, offset):
    """Shift a polyline sideways by ``offset`` (positive = left of travel)."""
    p = np.asarray(points, dtype=np.float64)
    d = np.gradient(p, axis=0)
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    normal = np.stack([-d[:, 1], d[:, 0]], axis=1)
    return p + offset * normal


def buffer_polyline(points, half_width):
    """Convex pieces whose union covers every point within ``half_width`` of the polyline.

    One rectangle per segment plus an octagon at each interior vertex to
    close the joins.
    """
    p = np.asarray(points, dtype=np.float64)
    pieces = []
    for a, b in zip(p[:-1], p[1:]):
        d = b - a
        n = np.linalg.norm(d)
        if n < 1e-9:
            continue
        u = d / n
        v = np.array([-u[1], u[0]]) * half_width
        pieces.append(np.array([a - v, b - v, b + v, a + v]))
    r = half_width / math.cos(math.pi / 8)
    ang = np.arange(8) * (math.pi / 4) + math.pi / 8
    ring = np.stack([np.cos(ang), np.sin(ang)], axis=1) * r
    for c in p[1:-1]:
        pieces.append(c + ring)
    return pieces


def points_in_polygon(points, poly):
    pts = np.asarray(points, dtype=np.float64)
    return _kernels.points_in_polygon(pts[..., 0], pts[..., 1], poly)


def bbox(poly):
    p = np.asarray(poly)
    return p[:, 0].min(), p[:, 1].min(), p[:, 0].max(), p[:, 1].max()


def bbox_overlap(a, b):
    return a[0] <= b[2] and b[0] <= a[2] and a[1] <= b[3] and b[1] <= a[3]


def point_segment_distance(points, a, b):
    """Distance from each point (N, 2) to segment ab."""
    p = np.asarray(points, dtype=np.float64)
    d = b - a
    dd = float(d @ d)
    t = np.zeros(len(p)) if dd == 0 else np.clip(((p - a) @ d) / dd, 0.0, 1.0)
    proj = a + t[:, None] * d
    return np.linalg.norm(p - proj, axis=1)


def polyline_distance(points, line):
    p = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    line = np.asarray(line, dtype=np.float64)
    if len(line) == 1:
        return np.linalg.norm(p - line[0], axis=1)
    best = np.full(len(p), np.inf)
    for a, b in zip(line[:-1], line[1:]):
        np.minimum(best, point_segment_distance(p, a, b), out=best)
    return best


def segments_intersect(p1, p2, q1, q2):
    """Proper or touching intersection of segments p1p2 and q1q2."""
    def orient(a, b, c):
        return (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])

    d1, d2 = orient(q1, q2, p1), orient(q1, q2, p2)
    d3, d4 = orient(p1, p2, q1), orient(p1, p2, q2)
    return (d1 * d2 <= 0) and (d3 * d4 <= 0) and not (d1 == d2 == 0)


def convex_overlap(a, b):
    """Separating-axis test for two convex polygons."""
    for poly in (a, b):
        n = len(poly)
        for i in range(n):
            e = poly[(i + 1) % n] - poly[i]
            axis = np.array([-e[1], e[0]])
            pa, pb = a @ axis, b @ axis
            if pa.max() < pb.min() or pb.max() < pa.min():
                return False
    return True


def disc_polygon_overlap(center, radius, poly):
    c = np.asarray(center, dtype=np.float64)
    if points_in_polygon(c[None], poly)[0]:
        return True
    closed = np.vstack([poly, poly[:1]])
    return float(polyline_distance(c[None], closed)[0]) <= radius


class Polyline:
    """Polyline with arc-length parametrisation."""

    def __init__(self, points):
        self.points = np.asarray(points, dtype=np.float64)
        if self.points.ndim != 2 or len(self.points) < 2:
            raise ValueError("polyline needs at least two points")
        seg = np.diff(self.points, axis=0)
        self.seg_len = np.linalg.norm(seg, axis=1)
        self.s = np.concatenate([[0.0], np.cumsum(self.seg_len)])
        self.length = float(self.s[-1])
        if self.length <= 0:
            raise ValueError("polyline has zero length")
        self.heading = np.arctan2(seg[:, 1], seg[:, 0])

    def point_at(self, s):
        s = np.clip(np.asarray(s, dtype=np.float64), 0.0, self.length)
        i = np.clip(np.searchsorted(self.s, s, side="right") - 1, 0, len(self.seg_len) - 1)
        t = (s - self.s[i]) / np.where(self.seg_len[i] > 0, self.seg_len[i], 1.0)
        return self.points[i] + t[..., None] * (self.points[i + 1] - self.points[i])

    def heading_at(self, s):
        s = np.clip(np.asarray(s, dtype=np.float64), 0.0, self.length)
        i = np.clip(np.searchsorted(self.s, s, side="right") - 1, 0, len(self.seg_len) - 1)
        return self.heading[i]

    def project(self, point, s_hint=None, window=30.0):
        """Arc length, signed lateral offset (left positive) and distance of the nearest point."""
        p = np.asarray(point, dtype=np.float64)
        a = self.points[:-1]
        d = self.points[1:] - a
        dd = np.where(self.seg_len > 0, self.seg_len ** 2, 1.0)
        t = np.clip(((p - a) * d).sum(axis=1) / dd, 0.0, 1.0)
        proj = a + t[:, None] * d
        dist = np.linalg.norm(proj - p, axis=1)
        if s_hint is not None:
            seg_s = self.s[:-1] + t * self.seg_len
            dist = np.where(np.abs(seg_s - s_hint) <= window, dist, np.inf)
        i = int(np.argmin(dist))
        s = float(self.s[i] + t[i] * self.seg_len[i])
        u = d[i] / max(self.seg_len[i], 1e-12)
        r = p - proj[i]
        lateral = float(u[0] * r[1] - u[1] * r[0])
        return s, lateral, float(dist[i])

    def window(self, s0, s1):
        """Sub-polyline between arc lengths s0 < s1."""
        s0, s1 = max(0.0, s0), min(self.length, s1)
        if s1 <= s0:
            return self.point_at(np.array([s0, s0]))
        inner = self.points[(self.s > s0) & (self.s < s1)]
        return np.vstack([self.point_at(s0)[None], inner, self.point_at(s1)[None]])

    def crossing_s(self, a, b):
        """Arc length where the polyline first crosses segment ab, or None."""
        a, b = np.asarray(a, float), np.asarray(b, float)
        for i in range(len(self.seg_len)):
            p, q = self.points[i], self.points[i + 1]
            if segments_intersect(p, q, a, b):
                r, e = q - p, b - a
                den = r[0] * e[1] - r[1] * e[0]
                if abs(den) < 1e-12:
                    return float(self.s[i])
                t = ((a[0] - p[0]) * e[1] - (a[1] - p[1]) * e[0]) / den
                return float(self.s[i] + t * self.seg_len[i])
        return None
