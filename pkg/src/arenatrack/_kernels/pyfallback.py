"""Vectorized NumPy implementation of the hot kernels.

Mirrors arenatrack._kernels._core exactly; see that module for the
authoritative per-element formulas.
"""

import numpy as np

TWO_PI = 2.0 * np.pi


def region_match_counts(r, theta, phi, region_params):
    """Assign spherical samples to prior regions.

    Parameters
    ----------
    r, theta, phi : (n,) float64 arrays.
    region_params : (m, 4) float64 array of rows
        ``[theta_center, theta_halfwidth, r_min, r_max]`` in table order.

    Returns
    -------
    ids : (n,) int32; 0-based index of the first matching region,
        -1 when no region matches, -2 when phi < 0.
    counts : (n,) int16; number of matching regions (0 where phi < 0).

    Elevations above -1e-12 count as phi >= 0 (level-placement rounding).
    """
    r = np.ascontiguousarray(r, dtype=np.float64)
    theta = np.ascontiguousarray(theta, dtype=np.float64)
    phi = np.ascontiguousarray(phi, dtype=np.float64)
    n = r.shape[0]
    ids = np.full(n, -1, dtype=np.int32)
    counts = np.zeros(n, dtype=np.int16)
    ok = phi >= -1e-12
    # Descending region order so the final id written is the first match.
    for idx in range(region_params.shape[0] - 1, -1, -1):
        center, hw, r_min, r_max = region_params[idx]
        d = np.mod(theta - center + np.pi, TWO_PI) - np.pi
        m = ok & (d >= -hw) & (d < hw) & (r >= r_min) & (r < r_max)
        counts[m] += 1
        ids[m] = idx
    ids[~ok] = -2
    return ids, counts


def decode_boxes(raw6, n_rows, n_cols, n_anchors, stride, spread,
                 anchor_params, focal, ppx, ppy, hull):
    """Reprojected 2D boxes of every decoded grid slot.

    Parameters
    ----------
    raw6 : (n_slots, >=6) float64; channels [tx, ty, tr, tyaw, tpitch, troll]
        in slot order ``(row * n_cols + col) * n_anchors + anchor``.
    anchor_params : (n_anchors, 14) float64; rows are the anchor rotation
        matrix (row-major, 9), then r_min, r_max, yaw/pitch/roll halfwidths.
    focal, ppx, ppy : pinhole focal length and principal point, pixels.
    hull : (m, 3) float64 object-frame hull points.

    Returns
    -------
    boxes : (n_slots, 4) float64 [min_u, min_v, max_u, max_v].
    valid : (n_slots,) uint8; 0 where any hull point had non-positive depth
        (the box row is zeroed there).
    """
    raw6 = np.ascontiguousarray(raw6, dtype=np.float64)
    n = raw6.shape[0]
    with np.errstate(over="ignore"):  # exp(|t|) -> inf saturates the sigmoid to 0
        s = 1.0 / (1.0 + np.exp(-raw6[:, :6]))

    slot = np.arange(n)
    a_idx = slot % n_anchors
    cell = slot // n_anchors
    col = (cell % n_cols).astype(np.float64)
    row = (cell // n_cols).astype(np.float64)

    half = (spread - 1.0) / 2.0
    u = (col + s[:, 0] * spread - half) * stride
    v = (row + s[:, 1] * spread - half) * stride

    ap = anchor_params[a_idx]
    anchor_R = ap[:, :9].reshape(n, 3, 3)
    r_min, r_max = ap[:, 9], ap[:, 10]
    rho = r_min + (r_max - r_min) * s[:, 2]
    dyaw = ap[:, 11] * (2.0 * s[:, 3] - 1.0)
    dpitch = ap[:, 12] * (2.0 * s[:, 4] - 1.0)
    droll = ap[:, 13] * (2.0 * s[:, 5] - 1.0)

    cy, sy = np.cos(dyaw), np.sin(dyaw)
    cp, sp = np.cos(dpitch), np.sin(dpitch)
    cr, sr = np.cos(droll), np.sin(droll)
    off = np.empty((n, 3, 3))
    off[:, 0, 0] = cy * cp
    off[:, 0, 1] = cy * sp * sr - sy * cr
    off[:, 0, 2] = cy * sp * cr + sy * sr
    off[:, 1, 0] = sy * cp
    off[:, 1, 1] = sy * sp * sr + cy * cr
    off[:, 1, 2] = sy * sp * cr - cy * sr
    off[:, 2, 0] = -sp
    off[:, 2, 1] = cp * sr
    off[:, 2, 2] = cp * cr
    R = off @ anchor_R

    dx = (u - ppx) / focal
    dy = (v - ppy) / focal
    scale = rho / np.sqrt(dx * dx + dy * dy + 1.0)
    t = np.stack([dx * scale, dy * scale, scale], axis=1)

    pts = np.einsum("nij,mj->nmi", R, np.ascontiguousarray(hull, dtype=np.float64))
    pts += t[:, None, :]
    z = pts[:, :, 2]
    valid = np.all(z > 1e-9, axis=1)
    zs = np.where(z > 1e-9, z, 1.0)
    uu = ppx + focal * pts[:, :, 0] / zs
    vv = ppy + focal * pts[:, :, 1] / zs
    boxes = np.stack([uu.min(axis=1), vv.min(axis=1),
                      uu.max(axis=1), vv.max(axis=1)], axis=1)
    boxes[~valid] = 0.0
    return boxes, valid.astype(np.uint8)
