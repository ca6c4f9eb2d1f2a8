"""Compiled inner loops for waypoint extraction and greedy token selection.

Quaternions are (w, x, y, z). The formulas mirror the numpy implementations in
:mod:`trajtok.geometry`; those stay the reference and the tests compare both.
"""
import math

import numba as nb
import numpy as np


@nb.njit(cache=True, nogil=True)
def _qmul(aw, ax, ay, az, bw, bx, by, bz):
    return (
        aw * bw - ax * bx - ay * by - az * bz,
        aw * bx + ax * bw + ay * bz - az * by,
        aw * by - ax * bz + ay * bw + az * bx,
        aw * bz + ax * by - ay * bx + az * bw,
    )


@nb.njit(cache=True, nogil=True)
def _angle(aw, ax, ay, az, bw, bx, by, bz):
    # geodesic angle between a and b via conj(a) * b
    w, x, y, z = _qmul(aw, -ax, -ay, -az, bw, bx, by, bz)
    return 2.0 * math.atan2(math.sqrt(x * x + y * y + z * z), abs(w))


@nb.njit(cache=True, nogil=True)
def _rot_segment_max(quat, c, i, j, rot_eps):
    """Max slerp-interpolation angle error on channel c over frames in (i, j); -1 if above rot_eps."""
    qi = quat[i, c]
    qj = quat[j, c]
    rw, rx, ry, rz = _qmul(qi[0], -qi[1], -qi[2], -qi[3], qj[0], qj[1], qj[2], qj[3])
    if rw < 0:
        rw, rx, ry, rz = -rw, -rx, -ry, -rz
    s = math.sqrt(rx * rx + ry * ry + rz * rz)
    theta = 2.0 * math.atan2(s, rw)
    if s > 0:
        rx, ry, rz = rx / s, ry / s, rz / s
    span = j - i
    worst = 0.0
    for k in range(i + 1, j):
        h = 0.5 * theta * (k - i) / span
        sh = math.sin(h)
        mw, mx, my, mz = _qmul(qi[0], qi[1], qi[2], qi[3], math.cos(h), rx * sh, ry * sh, rz * sh)
        qk = quat[k, c]
        e = _angle(mw, mx, my, mz, qk[0], qk[1], qk[2], qk[3])
        if e > rot_eps:
            return -1.0
        if e > worst:
            worst = e
    return worst


@nb.njit(cache=True, nogil=True)
def _line_dist(p, s, e):
    dx, dy, dz = e[0] - s[0], e[1] - s[1], e[2] - s[2]
    vx, vy, vz = p[0] - s[0], p[1] - s[1], p[2] - s[2]
    n = math.sqrt(dx * dx + dy * dy + dz * dz)
    if n < 1e-12:
        return math.sqrt(vx * vx + vy * vy + vz * vz)
    cx = vy * dz - vz * dy
    cy = vz * dx - vx * dz
    cz = vx * dy - vy * dx
    return math.sqrt(cx * cx + cy * cy + cz * cz) / n


@nb.njit(cache=True, nogil=True)
def segment_cost(pos, quat, grip, i, j, pos_eps, rot_eps, grip_eps):
    """Return (feasible, cost) for the segment i -> j over every channel.

    cost is the sum of per-channel maximum errors, each scaled by its threshold;
    it is only meaningful when the segment is feasible. Cheap position and
    gripper checks run first so most infeasible segments never reach slerp.
    """
    n_ch = pos.shape[1]
    n_g = grip.shape[1]
    span = j - i
    cost = 0.0
    for c in range(n_ch):
        pmax = 0.0
        for k in range(i + 1, j):
            pe = _line_dist(pos[k, c], pos[i, c], pos[j, c])
            if pe > pos_eps:
                return False, 0.0
            if pe > pmax:
                pmax = pe
        cost += pmax / pos_eps
    for g in range(n_g):
        gmax = 0.0
        for k in range(i + 1, j):
            t = (k - i) / span
            ge = abs(grip[k, g] - ((1.0 - t) * grip[i, g] + t * grip[j, g]))
            if ge > grip_eps:
                return False, 0.0
            if ge > gmax:
                gmax = ge
        cost += gmax / grip_eps
    for c in range(n_ch):
        rmax = _rot_segment_max(quat, c, i, j, rot_eps)
        if rmax < 0:
            return False, 0.0
        cost += rmax / rot_eps
    return True, cost


@nb.njit(cache=True, nogil=True)
def waypoint_dp(pos, quat, grip, pos_eps, rot_eps, grip_eps):
    """Fewest-waypoint subsequence; ties broken by lowest summed segment cost."""
    n = pos.shape[0]
    big = n + 1
    count = np.full(n, big, dtype=np.int64)
    cost = np.zeros(n)
    prev = np.full(n, -1, dtype=np.int64)
    count[0] = 1
    for j in range(1, n):
        for i in range(j):
            nc = count[i] + 1
            if nc > count[j]:
                continue
            ok, c = segment_cost(pos, quat, grip, i, j, pos_eps, rot_eps, grip_eps)
            if not ok:
                continue
            total = cost[i] + c
            if nc < count[j] or total < cost[j]:
                count[j] = nc
                cost[j] = total
                prev[j] = i
    out = np.empty(count[n - 1], dtype=np.int64)
    k = n - 1
    m = count[n - 1] - 1
    while k >= 0:
        out[m] = k
        m -= 1
        k = prev[k]
    return out


@nb.njit(cache=True, nogil=True)
def _pick(d, rank):
    """Index of the rank-th smallest entry of d (0-based), ties to the lower index."""
    n = d.shape[0]
    taken = np.zeros(n, dtype=np.bool_)
    best = 0
    for _ in range(rank + 1):
        best = -1
        for m in range(n):
            if not taken[m] and (best < 0 or d[m] < d[best]):
                best = m
        taken[best] = True
    return best


@nb.njit(cache=True, nogil=True)
def greedy_tokens(wp_pos, wp_quat, start_pos, start_quat, tc, rc, ranks, update_state):
    """Token choice for each step and channel.

    wp_pos/wp_quat hold the waypoint states (row 0 = first waypoint). ranks
    (S, C, 2) selects which nearest centroid to take for translation/rotation
    (all zeros = greedy). Returns translation and rotation indices (S, C).
    """
    S = wp_pos.shape[0] - 1
    C = wp_pos.shape[1]
    kt = tc.shape[0]
    kr = rc.shape[0]
    ti = np.empty((S, C), dtype=np.int64)
    ri = np.empty((S, C), dtype=np.int64)
    pos = start_pos.copy()
    quat = start_quat.copy()
    dt = np.empty(kt)
    dr = np.empty(kr)
    for s in range(S):
        for c in range(C):
            if update_state:
                rp = pos[c]
                rq = quat[c]
            else:
                rp = wp_pos[s, c]
                rq = wp_quat[s, c]
            tp = wp_pos[s + 1, c]
            tq = wp_quat[s + 1, c]
            nx, ny, nz = tp[0] - rp[0], tp[1] - rp[1], tp[2] - rp[2]
            nw, qx, qy, qz = _qmul(tq[0], tq[1], tq[2], tq[3], rq[0], -rq[1], -rq[2], -rq[3])
            for m in range(kt):
                ex, ey, ez = tc[m, 0] - nx, tc[m, 1] - ny, tc[m, 2] - nz
                dt[m] = math.sqrt(ex * ex + ey * ey + ez * ez)
            for m in range(kr):
                dr[m] = _angle(rc[m, 0], rc[m, 1], rc[m, 2], rc[m, 3], nw, qx, qy, qz)
            a = _pick(dt, ranks[s, c, 0])
            b = _pick(dr, ranks[s, c, 1])
            ti[s, c] = a
            ri[s, c] = b
            pos[c, 0] += tc[a, 0]
            pos[c, 1] += tc[a, 1]
            pos[c, 2] += tc[a, 2]
            w, x, y, z = _qmul(rc[b, 0], rc[b, 1], rc[b, 2], rc[b, 3], quat[c, 0], quat[c, 1], quat[c, 2], quat[c, 3])
            if w < 0:
                w, x, y, z = -w, -x, -y, -z
            quat[c, 0] = w
            quat[c, 1] = x
            quat[c, 2] = y
            quat[c, 3] = z
    return ti, ri


@nb.njit(cache=True, nogil=True)
def lloyd_assign(X, C):
    """Nearest center (ties to the lower index), its squared distance, and per-cluster sums/counts."""
    n, d = X.shape
    k = C.shape[0]
    labels = np.empty(n, dtype=np.int64)
    best_d2 = np.empty(n)
    sums = np.zeros((k, d))
    counts = np.zeros(k, dtype=np.int64)
    for i in range(n):
        best = 0
        bd = np.inf
        for c in range(k):
            acc = 0.0
            for m in range(d):
                diff = X[i, m] - C[c, m]
                acc += diff * diff
            if acc < bd:
                bd = acc
                best = c
        labels[i] = best
        best_d2[i] = bd
        counts[best] += 1
        for m in range(d):
            sums[best, m] += X[i, m]
    return labels, best_d2, sums, counts
