"""Pure-numpy kernel implementations.

Twin of ``_kernels_nb``; identical signatures, vectorized where the math
allows (the EKF recursion is inherently sequential and runs as a Python loop
over small matrix operations).
"""

from __future__ import annotations

import numpy as np

_PARALLEL_TOL = 1e-12
_COV_FLOOR = 1e-12


def sweep_angles(pos: np.ndarray, tan_tilt: float):
    """Forward sweep-angle model in the plane frame for (n, 3) positions."""
    x, y, z = pos[:, 0], pos[:, 1], pos[:, 2]
    r2 = x * x + y * y
    r = np.sqrt(r2)
    zt = z * tan_tilt
    ok = (r > 0.0) & (np.abs(zt) <= r)
    with np.errstate(invalid="ignore", divide="ignore"):
        alpha = np.arctan2(y, x) + np.arcsin(np.where(ok, zt / np.where(r > 0, r, 1.0), 0.0))
    alpha = np.mod(alpha + np.pi, 2.0 * np.pi)
    alpha = np.where(alpha <= 0.0, alpha + 2.0 * np.pi, alpha) - np.pi
    alpha = np.where(ok, alpha, np.nan)
    return alpha, ok


def closest_points_batch(o1, d1, o2, d2):
    """Closest points between ray pairs, clamped to forward half-lines."""
    w0 = o1 - o2
    a = np.einsum("ij,ij->i", d1, d1)
    b = np.einsum("ij,ij->i", d1, d2)
    c = np.einsum("ij,ij->i", d2, d2)
    d = np.einsum("ij,ij->i", d1, w0)
    e = np.einsum("ij,ij->i", d2, w0)
    denom = a * c - b * b
    ok = denom > _PARALLEL_TOL
    safe = np.where(ok, denom, 1.0)
    s = (b * e - c * d) / safe
    u = (a * e - b * d) / safe
    # clamp to s >= 0, then re-minimize over u; then the same the other way
    neg_s = s < 0.0
    s = np.where(neg_s, 0.0, s)
    u = np.where(neg_s, e / c, u)
    neg_u = u < 0.0
    u = np.where(neg_u, 0.0, u)
    s = np.where(neg_u, np.maximum(0.0, -d / a), s)
    p1 = o1 + s[:, None] * d1
    p2 = o2 + u[:, None] * d2
    return p1, p2, ok


def _rays_for_station(angles, tilts, r_d, r_b):
    """Global-frame ray directions for one station, angles shape (e, 2, 4)."""
    e = angles.shape[0]
    normals = []
    for plane in (0, 1):
        a = angles[:, plane, :].reshape(-1)
        ct = np.cos(tilts[plane])
        st = np.sin(tilts[plane])
        n_plane = np.stack(
            [-np.sin(a) * ct, np.cos(a) * ct, np.full_like(a, st)], axis=1
        )
        normals.append(n_plane @ r_d[plane])
    d = np.cross(normals[0], normals[1])
    norm = np.linalg.norm(d, axis=1)
    ok = norm > _PARALLEL_TOL
    d = d / np.where(ok, norm, 1.0)[:, None]
    d = np.where(d[:, :1] < 0.0, -d, d)
    return (d @ r_b.T).reshape(e, 4, 3), ok.reshape(e, 4)


def solve_epochs(angles, r_b, t_b, tilts, r_d):
    """Triangulate complete epochs.

    ``angles`` has shape (e, 2, 2, 4) indexed [epoch, station, plane, sensor].
    Returns (positions (e, 3), delta_max (e,), ok (e,)).
    """
    e = angles.shape[0]
    d1, ok1 = _rays_for_station(angles[:, 0], tilts[0], r_d[0], r_b[0])
    d2, ok2 = _rays_for_station(angles[:, 1], tilts[1], r_d[1], r_b[1])
    o1 = np.broadcast_to(t_b[0], (e * 4, 3))
    o2 = np.broadcast_to(t_b[1], (e * 4, 3))
    p1, p2, okc = closest_points_batch(
        o1, d1.reshape(-1, 3), o2, d2.reshape(-1, 3)
    )
    mid = 0.5 * (p1 + p2)
    delta = np.sum((p1 - p2) ** 2, axis=1)
    ok = (ok1 & ok2 & okc.reshape(e, 4)).all(axis=1)
    positions = mid.reshape(e, 4, 3).mean(axis=1)
    delta_max = delta.reshape(e, 4).max(axis=1)
    return positions, delta_max, ok.astype(np.uint8)


def _sweep_meas_scalar(v, tan_t):
    """Angle + plane-frame gradient at one plane-frame position."""
    x, y, z = v
    r2 = x * x + y * y
    under = r2 - (z * tan_t) ** 2
    if r2 <= 0.0 or under <= 0.0:
        return 0.0, np.zeros(3), False
    alpha = np.arctan2(y, x) + np.arcsin(z * tan_t / np.sqrt(r2))
    if alpha > np.pi:
        alpha -= 2.0 * np.pi
    elif alpha <= -np.pi:
        alpha += 2.0 * np.pi
    q = tan_t / np.sqrt(under)
    g = np.array([(-y - x * z * q) / r2, (x - y * z * q) / r2, q])
    return alpha, g, True


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
    """Sequential sweep-measurement filtering over a sorted event stream."""
    n = len(times)
    x = x0.copy()
    p = p0.copy()
    positions = np.empty((n, 3))
    velocities = np.empty((n, 3))
    accepted = np.zeros(n, dtype=np.uint8)
    pos_var = np.empty(n)
    r_var = sigma_alpha * sigma_alpha
    t_prev = times[0] if n else 0.0
    eye6 = np.eye(6)
    for i in range(n):
        dt = times[i] - t_prev
        t_prev = times[i]
        if dt > 0.0:
            f = eye6.copy()
            f[0:3, 3:6] = dt * np.eye(3)
            x = f @ x
            p = f @ p @ f.T
            qpp = process_noise * dt ** 3 / 3.0
            qpv = process_noise * dt ** 2 / 2.0
            qvv = process_noise * dt
            for axis in range(3):
                p[axis, axis] += qpp
                p[axis, axis + 3] += qpv
                p[axis + 3, axis] += qpv
                p[axis + 3, axis + 3] += qvv
        bs = bs_idx[i]
        pl = plane_idx[i] - 1
        sensor_global = x[0:3] + body_rot[i] @ offsets[sensor_idx[i]]
        v = r_d[bs, pl] @ (r_b[bs].T @ (sensor_global - t_b[bs]))
        alpha_pred, g_plane, ok = _sweep_meas_scalar(v, np.tan(tilts[bs, pl]))
        if ok:
            g = r_b[bs] @ r_d[bs, pl].T @ g_plane
            innovation = angles[i] - alpha_pred
            innovation = np.mod(innovation + np.pi, 2.0 * np.pi)
            if innovation <= 0.0:
                innovation += 2.0 * np.pi
            innovation -= np.pi
            h = np.zeros(6)
            h[0:3] = g
            ph = p @ h
            s = float(h @ ph + r_var)
            if abs(innovation) <= gate_sigma * np.sqrt(s):
                k = ph / s
                x = x + k * innovation
                ikh = eye6 - np.outer(k, h)
                p = ikh @ p @ ikh.T + r_var * np.outer(k, k)
                p = 0.5 * (p + p.T)
                eigvals, eigvecs = np.linalg.eigh(p)
                if eigvals[0] < _COV_FLOOR:
                    eigvals = np.maximum(eigvals, _COV_FLOOR)
                    p = (eigvecs * eigvals) @ eigvecs.T
                    p = 0.5 * (p + p.T)
                accepted[i] = 1
        positions[i] = x[0:3]
        velocities[i] = x[3:6]
        pos_var[i] = max(p[0, 0], p[1, 1], p[2, 2])
    return positions, velocities, accepted, pos_var, x, p


def _interp_sorted(queries, mc_t, mc_p):
    """Linear interpolation of sorted queries against a sorted sample grid."""
    j = np.searchsorted(mc_t, queries, side="left")
    j = np.clip(j, 1, len(mc_t) - 1)
    t0 = mc_t[j - 1]
    t1 = mc_t[j]
    w = (queries - t0) / (t1 - t0)
    w = np.clip(w, 0.0, 1.0)
    return mc_p[j - 1] + w[:, None] * (mc_p[j] - mc_p[j - 1])


def align_cell(est_t, est_p, mc_t, mc_p, t_s_cf, span_cf, t_s_mc, t_f_mc, off_s, off_f):
    """Rescale, interpolate, fit, and score one offset cell.

    Returns (objective: sum of Euclidean errors, rotation, translation,
    degenerate flag).  Degenerate point sets fall back to translation-only.
    """
    ratio = ((t_f_mc + off_f) - (t_s_mc + off_s)) / span_cf
    queries = (est_t - t_s_cf) * ratio + t_s_mc + off_s
    mc_at = _interp_sorted(queries, mc_t, mc_p)
    ca = est_p.mean(axis=0)
    cb = mc_at.mean(axis=0)
    h = (est_p - ca).T @ (mc_at - cb)
    u, sv, vt = np.linalg.svd(h)
    degenerate = sv[1] < 1e-12
    if degenerate:
        r = np.eye(3)
    else:
        v = vt.T
        d = np.sign(np.linalg.det(v @ u.T))
        r = v @ np.diag([1.0, 1.0, d]) @ u.T
    t = cb - r @ ca
    residuals = est_p @ r.T + t - mc_at
    objective = float(np.sqrt(np.sum(residuals ** 2, axis=1)).sum())
    return objective, r, t, np.uint8(degenerate)


def align_objective_grid(
    est_t, est_p, mc_t, mc_p, t_s_cf, span_cf, t_s_mc, t_f_mc, offsets_s, offsets_f
):
    """Objective matrix over the (start offset, end offset) grid."""
    out = np.empty((len(offsets_s), len(offsets_f)))
    for i in range(len(offsets_s)):
        for j in range(len(offsets_f)):
            out[i, j] = align_cell(
                est_t, est_p, mc_t, mc_p, t_s_cf, span_cf, t_s_mc, t_f_mc,
                offsets_s[i], offsets_f[j],
            )[0]
    return out
