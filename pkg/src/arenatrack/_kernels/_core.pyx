# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled kernels: region assignment and per-slot box decoding.

These are the two inner loops that dominate runtime: the loss function
decodes and reprojects every grid slot on every evaluation, and prior
coverage sweeps assign millions of spherical samples.  The pure-Python
twin lives in pyfallback.py; keep the formulas in the two files aligned.
"""

import numpy as np

from libc.math cimport atan2, cos, exp, fmod, sin, sqrt

cdef double PI = 3.141592653589793
cdef double TWO_PI = 6.283185307179586


def region_match_counts(double[::1] r, double[::1] theta, double[::1] phi,
                        double[:, ::1] region_params):
    """See pyfallback.region_match_counts."""
    cdef Py_ssize_t n = r.shape[0]
    cdef Py_ssize_t m = region_params.shape[0]
    ids_arr = np.full(n, -1, dtype=np.int32)
    counts_arr = np.zeros(n, dtype=np.int16)
    cdef int[::1] ids = ids_arr
    cdef short[::1] counts = counts_arr
    cdef Py_ssize_t i, j
    cdef double d, center, hw, r_min, r_max
    cdef short c
    cdef int first
    for i in range(n):
        if phi[i] < -1e-12:
            ids[i] = -2
            continue
        c = 0
        first = -1
        for j in range(m):
            center = region_params[j, 0]
            hw = region_params[j, 1]
            r_min = region_params[j, 2]
            r_max = region_params[j, 3]
            d = fmod(theta[i] - center + PI, TWO_PI)
            if d < 0.0:
                d += TWO_PI
            d -= PI
            if d >= -hw and d < hw and r[i] >= r_min and r[i] < r_max:
                c += 1
                if first < 0:
                    first = <int> j
        counts[i] = c
        ids[i] = first
    return ids_arr, counts_arr


def decode_boxes(double[:, ::1] raw6, int n_rows, int n_cols, int n_anchors,
                 double stride, double spread, double[:, ::1] anchor_params,
                 double focal, double ppx, double ppy, double[:, ::1] hull):
    """See pyfallback.decode_boxes."""
    cdef Py_ssize_t n = raw6.shape[0]
    cdef Py_ssize_t n_hull = hull.shape[0]
    boxes_arr = np.zeros((n, 4), dtype=np.float64)
    valid_arr = np.zeros(n, dtype=np.uint8)
    cdef double[:, ::1] boxes = boxes_arr
    cdef unsigned char[::1] valid = valid_arr
    cdef Py_ssize_t i, h, a, k, l
    cdef Py_ssize_t cell, col, row
    cdef double half = (spread - 1.0) / 2.0
    cdef double su, sv, sr_, syaw, spitch, sroll
    cdef double u, v, rho, dyaw, dpitch, droll
    cdef double cy, sy, cp, sp, cr, sr
    cdef double off[3][3]
    cdef double R[3][3]
    cdef double tvec[3]
    cdef double dx, dy, scale
    cdef double px, py, pz, uu, vv
    cdef double min_u, min_v, max_u, max_v
    cdef double r_min, r_max, yaw_hw, pitch_hw, roll_hw
    cdef int ok

    for i in range(n):
        a = i % n_anchors
        cell = i // n_anchors
        col = cell % n_cols
        row = cell // n_cols

        su = 1.0 / (1.0 + exp(-raw6[i, 0]))
        sv = 1.0 / (1.0 + exp(-raw6[i, 1]))
        sr_ = 1.0 / (1.0 + exp(-raw6[i, 2]))
        syaw = 1.0 / (1.0 + exp(-raw6[i, 3]))
        spitch = 1.0 / (1.0 + exp(-raw6[i, 4]))
        sroll = 1.0 / (1.0 + exp(-raw6[i, 5]))

        u = (col + su * spread - half) * stride
        v = (row + sv * spread - half) * stride

        r_min = anchor_params[a, 9]
        r_max = anchor_params[a, 10]
        yaw_hw = anchor_params[a, 11]
        pitch_hw = anchor_params[a, 12]
        roll_hw = anchor_params[a, 13]

        rho = r_min + (r_max - r_min) * sr_
        dyaw = yaw_hw * (2.0 * syaw - 1.0)
        dpitch = pitch_hw * (2.0 * spitch - 1.0)
        droll = roll_hw * (2.0 * sroll - 1.0)

        cy = cos(dyaw); sy = sin(dyaw)
        cp = cos(dpitch); sp = sin(dpitch)
        cr = cos(droll); sr = sin(droll)
        off[0][0] = cy * cp
        off[0][1] = cy * sp * sr - sy * cr
        off[0][2] = cy * sp * cr + sy * sr
        off[1][0] = sy * cp
        off[1][1] = sy * sp * sr + cy * cr
        off[1][2] = sy * sp * cr - cy * sr
        off[2][0] = -sp
        off[2][1] = cp * sr
        off[2][2] = cp * cr

        for k in range(3):
            for l in range(3):
                R[k][l] = (off[k][0] * anchor_params[a, 0 * 3 + l]
                           + off[k][1] * anchor_params[a, 1 * 3 + l]
                           + off[k][2] * anchor_params[a, 2 * 3 + l])

        dx = (u - ppx) / focal
        dy = (v - ppy) / focal
        scale = rho / sqrt(dx * dx + dy * dy + 1.0)
        tvec[0] = dx * scale
        tvec[1] = dy * scale
        tvec[2] = scale

        ok = 1
        min_u = 0.0; min_v = 0.0; max_u = 0.0; max_v = 0.0
        for h in range(n_hull):
            px = R[0][0] * hull[h, 0] + R[0][1] * hull[h, 1] + R[0][2] * hull[h, 2] + tvec[0]
            py = R[1][0] * hull[h, 0] + R[1][1] * hull[h, 1] + R[1][2] * hull[h, 2] + tvec[1]
            pz = R[2][0] * hull[h, 0] + R[2][1] * hull[h, 1] + R[2][2] * hull[h, 2] + tvec[2]
            if pz <= 1e-9:
                ok = 0
                break
            uu = ppx + focal * px / pz
            vv = ppy + focal * py / pz
            if h == 0:
                min_u = uu; max_u = uu; min_v = vv; max_v = vv
            else:
                if uu < min_u: min_u = uu
                if uu > max_u: max_u = uu
                if vv < min_v: min_v = vv
                if vv > max_v: max_v = vv
        if ok:
            valid[i] = 1
            boxes[i, 0] = min_u
            boxes[i, 1] = min_v
            boxes[i, 2] = max_u
            boxes[i, 3] = max_v
    return boxes_arr, valid_arr
