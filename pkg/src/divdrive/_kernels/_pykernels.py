"""Pure numpy implementations of the hot kernels.

These are the reference versions.  The compiled module must produce
bit-identical output, so the accumulation order in :func:`col2im` is part
of the contract: for every output pixel, contributions are added in
(channel, ki, kj) order, one kernel offset at a time.
"""

import numpy as np


def im2col(x, k, stride, pad):
    """Unfold ``x`` of shape (B, C, H, W) into (B, C*k*k, OH*OW) columns."""
    x = np.ascontiguousarray(x, dtype=np.float64)
    B, C, H, W = x.shape
    OH = (H + 2 * pad - k) // stride + 1
    OW = (W + 2 * pad - k) // stride + 1
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x
    cols = np.empty((B, C, k, k, OH, OW), dtype=np.float64)
    for ki in range(k):
        hi = ki + stride * OH
        for kj in range(k):
            wj = kj + stride * OW
            cols[:, :, ki, kj] = xp[:, :, ki:hi:stride, kj:wj:stride]
    return cols.reshape(B, C * k * k, OH * OW)


def col2im(cols, shape, k, stride, pad):
    """Adjoint of :func:`im2col`: scatter-add columns back to (B, C, H, W)."""
    B, C, H, W = shape
    OH = (H + 2 * pad - k) // stride + 1
    OW = (W + 2 * pad - k) // stride + 1
    cols = np.ascontiguousarray(cols, dtype=np.float64).reshape(B, C, k, k, OH, OW)
    xp = np.zeros((B, C, H + 2 * pad, W + 2 * pad), dtype=np.float64)
    for ki in range(k):
        hi = ki + stride * OH
        for kj in range(k):
            wj = kj + stride * OW
            xp[:, :, ki:hi:stride, kj:wj:stride] += cols[:, :, ki, kj]
    if pad:
        return np.ascontiguousarray(xp[:, :, pad:pad + H, pad:pad + W])
    return xp


def points_in_polygon(px, py, poly):
    """Even-odd rule test of points (px[i], py[i]) against a closed polygon.

    ``poly`` is an (N, 2) vertex array; the closing edge is implicit.
    Points exactly on an edge are classified by the half-open crossing rule.
    """
    px = np.asarray(px, dtype=np.float64)
    py = np.asarray(py, dtype=np.float64)
    poly = np.asarray(poly, dtype=np.float64)
    inside = np.zeros(px.shape, dtype=bool)
    n = len(poly)
    j = n - 1
    for i in range(n):
        xi, yi = poly[i]
        xj, yj = poly[j]
        straddle = (yi > py) != (yj > py)
        if np.any(straddle):
            # identical expression to the compiled kernel, keep in sync
            xcross = (xj - xi) * (py - yi) / np.where(straddle, yj - yi, 1.0) + xi
            inside ^= straddle & (px < xcross)
        j = i
    return inside
