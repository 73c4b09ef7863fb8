"""Numba-compiled kernel implementations.

Twin of ``_kernels_np``; same signatures and numerics, written as explicit
loops so nopython compilation succeeds.  Importing this module is only safe
when numba is installed; the dispatcher handles that.
"""

from __future__ import annotations

import numpy as np
from numba import njit

_PARALLEL_TOL = 1e-12
_COV_FLOOR = 1e-12


@njit(cache=True)
def _wrap(angle):
    # wrap to (-pi, pi]
    out = np.mod(angle + np.pi, 2.0 * np.pi)
    if out <= 0.0:
        out += 2.0 * np.pi
    return out - np.pi


@njit(cache=True)
def sweep_angles(pos, tan_tilt):
    n = pos.shape[0]
    alpha = np.empty(n)
    ok = np.empty(n, dtype=np.bool_)
    for i in range(n):
        x = pos[i, 0]
        y = pos[i, 1]
        z = pos[i, 2]
        r2 = x * x + y * y
        r = np.sqrt(r2)
        zt = z * tan_tilt
        if r > 0.0 and abs(zt) <= r:
            alpha[i] = _wrap(np.arctan2(y, x) + np.arcsin(zt / r))
            ok[i] = True
        else:
            alpha[i] = np.nan
            ok[i] = False
    return alpha, ok


@njit(cache=True)
def _closest_pair(o1, d1, o2, d2, p1, p2):
    w0x = o1[0] - o2[0]
    w0y = o1[1] - o2[1]
    w0z = o1[2] - o2[2]
    a = d1[0] * d1[0] + d1[1] * d1[1] + d1[2] * d1[2]
    b = d1[0] * d2[0] + d1[1] * d2[1] + d1[2] * d2[2]
    c = d2[0] * d2[0] + d2[1] * d2[1] + d2[2] * d2[2]
    d = d1[0] * w0x + d1[1] * w0y + d1[2] * w0z
    e = d2[0] * w0x + d2[1] * w0y + d2[2] * w0z
    denom = a * c - b * b
    if denom <= _PARALLEL_TOL:
        return False
    s = (b * e - c * d) / denom
    u = (a * e - b * d) / denom
    if s < 0.0:
        s = 0.0
        u = e / c
    if u < 0.0:
        u = 0.0
        s = -d / a
        if s < 0.0:
            s = 0.0
    for k in range(3):
        p1[k] = o1[k] + s * d1[k]
        p2[k] = o2[k] + u * d2[k]
    return True


@njit(cache=True)
def closest_points_batch(o1, d1, o2, d2):
    n = o1.shape[0]
    p1 = np.empty((n, 3))
    p2 = np.empty((n, 3))
    ok = np.empty(n, dtype=np.bool_)
    for i in range(n):
        ok[i] = _closest_pair(o1[i], d1[i], o2[i], d2[i], p1[i], p2[i])
        if not ok[i]:
            for k in range(3):
                p1[i, k] = np.nan
                p2[i, k] = np.nan
    return p1, p2, ok


@njit(cache=True)
def _ray_direction(a1, a2, tilt1, tilt2, r_d1, r_d2, r_b, out):
    # station-frame normals of the two sweep planes, rotated out of drum frame
    n1 = np.empty(3)
    n2 = np.empty(3)
    raw1 = np.empty(3)
    raw2 = np.empty(3)
    raw1[0] = -np.sin(a1) * np.cos(tilt1)
    raw1[1] = np.cos(a1) * np.cos(tilt1)
    raw1[2] = np.sin(tilt1)
    raw2[0] = -np.sin(a2) * np.cos(tilt2)
    raw2[1] = np.cos(a2) * np.cos(tilt2)
    raw2[2] = np.sin(tilt2)
    for k in range(3):
        n1[k] = r_d1[0, k] * raw1[0] + r_d1[1, k] * raw1[1] + r_d1[2, k] * raw1[2]
        n2[k] = r_d2[0, k] * raw2[0] + r_d2[1, k] * raw2[1] + r_d2[2, k] * raw2[2]
    dx = n1[1] * n2[2] - n1[2] * n2[1]
    dy = n1[2] * n2[0] - n1[0] * n2[2]
    dz = n1[0] * n2[1] - n1[1] * n2[0]
    norm = np.sqrt(dx * dx + dy * dy + dz * dz)
    if norm <= _PARALLEL_TOL:
        return False
    dx /= norm
    dy /= norm
    dz /= norm
    if dx < 0.0:
        dx = -dx
        dy = -dy
        dz = -dz
    for k in range(3):
        out[k] = r_b[k, 0] * dx + r_b[k, 1] * dy + r_b[k, 2] * dz
    return True


@njit(cache=True)
def solve_epochs(angles, r_b, t_b, tilts, r_d):
    e = angles.shape[0]
    positions = np.zeros((e, 3))
    delta_max = np.zeros(e)
    ok = np.zeros(e, dtype=np.uint8)
    d_global = np.empty(3)
    d_global2 = np.empty(3)
    p1 = np.empty(3)
    p2 = np.empty(3)
    for i in range(e):
        good = True
        dmax = 0.0
        acc = np.zeros(3)
        for sensor in range(4):
            ok1 = _ray_direction(
                angles[i, 0, 0, sensor], angles[i, 0, 1, sensor],
                tilts[0, 0], tilts[0, 1], r_d[0, 0], r_d[0, 1], r_b[0], d_global,
            )
            ok2 = _ray_direction(
                angles[i, 1, 0, sensor], angles[i, 1, 1, sensor],
                tilts[1, 0], tilts[1, 1], r_d[1, 0], r_d[1, 1], r_b[1], d_global2,
            )
            if not (ok1 and ok2):
                good = False
                break
            if not _closest_pair(t_b[0], d_global, t_b[1], d_global2, p1, p2):
                good = False
                break
            delta = 0.0
            for k in range(3):
                acc[k] += 0.5 * (p1[k] + p2[k])
                delta += (p1[k] - p2[k]) ** 2
            if delta > dmax:
                dmax = delta
        if good:
            for k in range(3):
                positions[i, k] = acc[k] / 4.0
            delta_max[i] = dmax
            ok[i] = 1
    return positions, delta_max, ok


@njit(cache=True)
def ekf_process(
    times,
    bs_idx,
    plane_idx,
    sensor_idx,
    angles,
    r_b,
    t_b,
    tilts,
    r_d,
    offsets,
    body_rot,
    x0,
    p0,
    sigma_alpha,
    process_noise,
    gate_sigma,
):
    n = len(times)
    x = x0.copy()
    p = p0.copy()
    positions = np.empty((n, 3))
    velocities = np.empty((n, 3))
    accepted = np.zeros(n, dtype=np.uint8)
    pos_var = np.empty(n)
    r_var = sigma_alpha * sigma_alpha
    t_prev = times[0] if n > 0 else 0.0
    h = np.zeros(6)
    for i in range(n):
        dt = times[i] - t_prev
        t_prev = times[i]
        if dt > 0.0:
            # x' = F x with F = [[I, dt I], [0, I]]
            for k in range(3):
                x[k] += dt * x[k + 3]
            # P' = F P F^T + Q, expanded blockwise
            qpp = process_noise * dt ** 3 / 3.0
            qpv = process_noise * dt ** 2 / 2.0
            qvv = process_noise * dt
            pnew = p.copy()
            for rr in range(3):
                for cc in range(3):
                    pnew[rr, cc] = (
                        p[rr, cc]
                        + dt * (p[rr + 3, cc] + p[rr, cc + 3])
                        + dt * dt * p[rr + 3, cc + 3]
                    )
                    pnew[rr, cc + 3] = p[rr, cc + 3] + dt * p[rr + 3, cc + 3]
                    pnew[rr + 3, cc] = p[rr + 3, cc] + dt * p[rr + 3, cc + 3]
            for k in range(3):
                pnew[k, k] += qpp
                pnew[k, k + 3] += qpv
                pnew[k + 3, k] += qpv
                pnew[k + 3, k + 3] += qvv
            p = pnew
        bs = bs_idx[i]
        pl = plane_idx[i] - 1
        sg = np.empty(3)
        off = offsets[sensor_idx[i]]
        for k in range(3):
            sg[k] = x[k] + (
                body_rot[i, k, 0] * off[0]
                + body_rot[i, k, 1] * off[1]
                + body_rot[i, k, 2] * off[2]
            )
        st = np.empty(3)
        for k in range(3):
            st[k] = (
                r_b[bs, 0, k] * (sg[0] - t_b[bs, 0])
                + r_b[bs, 1, k] * (sg[1] - t_b[bs, 1])
                + r_b[bs, 2, k] * (sg[2] - t_b[bs, 2])
            )
        v = np.empty(3)
        for k in range(3):
            v[k] = (
                r_d[bs, pl, k, 0] * st[0]
                + r_d[bs, pl, k, 1] * st[1]
                + r_d[bs, pl, k, 2] * st[2]
            )
        tan_t = np.tan(tilts[bs, pl])
        r2 = v[0] * v[0] + v[1] * v[1]
        under = r2 - (v[2] * tan_t) ** 2
        if r2 > 0.0 and under > 0.0:
            alpha_pred = _wrap(np.arctan2(v[1], v[0]) + np.arcsin(v[2] * tan_t / np.sqrt(r2)))
            q = tan_t / np.sqrt(under)
            gp = np.empty(3)
            gp[0] = (-v[1] - v[0] * v[2] * q) / r2
            gp[1] = (v[0] - v[1] * v[2] * q) / r2
            gp[2] = q
            # back through drum then station rotation: g = R_b R_d^T g_plane
            gst = np.empty(3)
            for k in range(3):
                gst[k] = (
                    r_d[bs, pl, 0, k] * gp[0]
                    + r_d[bs, pl, 1, k] * gp[1]
                    + r_d[bs, pl, 2, k] * gp[2]
                )
            for k in range(3):
                h[k] = (
                    r_b[bs, k, 0] * gst[0]
                    + r_b[bs, k, 1] * gst[1]
                    + r_b[bs, k, 2] * gst[2]
                )
            innovation = _wrap(angles[i] - alpha_pred)
            ph = np.zeros(6)
            for rr in range(6):
                acc = 0.0
                for cc in range(3):
                    acc += p[rr, cc] * h[cc]
                ph[rr] = acc
            s = h[0] * ph[0] + h[1] * ph[1] + h[2] * ph[2] + r_var
            if abs(innovation) <= gate_sigma * np.sqrt(s):
                k_gain = ph / s
                for rr in range(6):
                    x[rr] += k_gain[rr] * innovation
                ikh = np.eye(6)
                for rr in range(6):
                    for cc in range(3):
                        ikh[rr, cc] -= k_gain[rr] * h[cc]
                p = ikh @ p @ ikh.T
                for rr in range(6):
                    for cc in range(6):
                        p[rr, cc] += r_var * k_gain[rr] * k_gain[cc]
                p = 0.5 * (p + p.T)
                eigvals, eigvecs = np.linalg.eigh(p)
                if eigvals[0] < _COV_FLOOR:
                    for rr in range(6):
                        if eigvals[rr] < _COV_FLOOR:
                            eigvals[rr] = _COV_FLOOR
                    p = (eigvecs * eigvals) @ eigvecs.T
                    p = 0.5 * (p + p.T)
                accepted[i] = 1
        for k in range(3):
            positions[i, k] = x[k]
            velocities[i, k] = x[k + 3]
        pv = p[0, 0]
        if p[1, 1] > pv:
            pv = p[1, 1]
        if p[2, 2] > pv:
            pv = p[2, 2]
        pos_var[i] = pv
    return positions, velocities, accepted, pos_var, x, p


@njit(cache=True)
def align_cell(est_t, est_p, mc_t, mc_p, t_s_cf, span_cf, t_s_mc, t_f_mc, off_s, off_f):
    n = est_t.shape[0]
    m = mc_t.shape[0]
    ratio = ((t_f_mc + off_f) - (t_s_mc + off_s)) / span_cf
    mc_at = np.empty((n, 3))
    j = 0
    for i in range(n):
        q = (est_t[i] - t_s_cf) * ratio + t_s_mc + off_s
        while j < m and mc_t[j] < q:
            j += 1
        jj = j
        if jj < 1:
            jj = 1
        elif jj > m - 1:
            jj = m - 1
        w = (q - mc_t[jj - 1]) / (mc_t[jj] - mc_t[jj - 1])
        if w < 0.0:
            w = 0.0
        elif w > 1.0:
            w = 1.0
        for k in range(3):
            mc_at[i, k] = mc_p[jj - 1, k] + w * (mc_p[jj, k] - mc_p[jj - 1, k])
    ca = np.zeros(3)
    cb = np.zeros(3)
    for i in range(n):
        for k in range(3):
            ca[k] += est_p[i, k]
            cb[k] += mc_at[i, k]
    ca /= n
    cb /= n
    h = np.zeros((3, 3))
    for i in range(n):
        for rr in range(3):
            for cc in range(3):
                h[rr, cc] += (est_p[i, rr] - ca[rr]) * (mc_at[i, cc] - cb[cc])
    u, sv, vt = np.linalg.svd(h)
    degenerate = np.uint8(sv[1] < 1e-12)
    if degenerate:
        r = np.eye(3)
    else:
        v = vt.T
        d = np.sign(np.linalg.det(v @ u.T))
        dd = np.eye(3)
        dd[2, 2] = d
        r = v @ dd @ u.T
    t = np.empty(3)
    for k in range(3):
        t[k] = cb[k] - (r[k, 0] * ca[0] + r[k, 1] * ca[1] + r[k, 2] * ca[2])
    objective = 0.0
    for i in range(n):
        acc = 0.0
        for k in range(3):
            resid = (
                r[k, 0] * est_p[i, 0]
                + r[k, 1] * est_p[i, 1]
                + r[k, 2] * est_p[i, 2]
                + t[k]
                - mc_at[i, k]
            )
            acc += resid * resid
        objective += np.sqrt(acc)
    return objective, r, t, degenerate


@njit(cache=True)
def align_objective_grid(
    est_t, est_p, mc_t, mc_p, t_s_cf, span_cf, t_s_mc, t_f_mc, offsets_s, offsets_f
):
    out = np.empty((len(offsets_s), len(offsets_f)))
    for i in range(len(offsets_s)):
        for j in range(len(offsets_f)):
            obj, _, _, _ = align_cell(
                est_t, est_p, mc_t, mc_p, t_s_cf, span_cf, t_s_mc, t_f_mc,
                offsets_s[i], offsets_f[j],
            )
            out[i, j] = obj
    return out
