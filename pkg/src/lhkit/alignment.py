"""Spatiotemporal alignment of estimate and mocap streams.

The estimate stream lives on the onboard clock, the mocap stream on the
reference clock.  Alignment anchors the two via the LED sync markers,
rescales the onboard clock onto the mocap span, then searches a grid of
start/end offsets; each cell interpolates mocap at the rescaled times, fits
a rigid transform by SVD, and scores the summed Euclidean error.  The cell
with the smallest score wins, ties broken toward the smallest offsets.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import DegenerateGeometry, InsufficientOverlap, InvalidAnchors
from .session import MocapSeries, SessionBundle

_ORTHO_TOL = 1e-9
_DEGENERATE_SV = 1e-12


@dataclass(frozen=True)
class RigidTransform:
    """Proper rigid transform p -> R p + t."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        r = np.ascontiguousarray(self.rotation, dtype=float).reshape(3, 3)
        t = np.ascontiguousarray(self.translation, dtype=float).reshape(3)
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", t)
        if np.abs(r @ r.T - np.eye(3)).max() > _ORTHO_TOL or abs(np.linalg.det(r) - 1.0) > _ORTHO_TOL:
            raise ValueError("rotation must be orthonormal with determinant +1")

    def apply(self, points: np.ndarray) -> np.ndarray:
        points = np.asarray(points, dtype=float)
        return points @ self.rotation.T + self.translation

    @staticmethod
    def identity() -> "RigidTransform":
        return RigidTransform(np.eye(3), np.zeros(3))


@dataclass(frozen=True)
class AlignedDataset:
    """Per-record aligned streams plus the recovered alignment parameters.

    ``times`` are on the mocap clock (rescaled event times with the winning
    start offset applied).  ``cf_positions`` already carry the transform;
    ``mocap_positions`` rows are NaN where interpolation was not possible.
    ``residual`` is the mean Euclidean error over the rows that entered the
    fit.
    """

    times: np.ndarray
    cf_positions: np.ndarray
    mocap_positions: np.ndarray
    transform: RigidTransform
    offsets: tuple[float, float]
    residual: float

    def valid_mask(self) -> np.ndarray:
        return ~np.isnan(self.mocap_positions).any(axis=1)

    def __len__(self):
        return len(self.times)


def rescale_clock(times_s, t_s_cf: float, t_f_cf: float,
                  t_s_mc: float, t_f_mc: float) -> np.ndarray:
    """Map onboard seconds onto the mocap span (0 at the start anchor)."""
    span_cf = t_f_cf - t_s_cf
    span_mc = t_f_mc - t_s_mc
    if not span_cf > 0:
        raise InvalidAnchors("onboard anchor span must be positive")
    if not span_mc > 0:
        raise InvalidAnchors("mocap anchor span must be positive")
    return (np.asarray(times_s, dtype=float) - t_s_cf) * (span_mc / span_cf)


def interpolate_mocap(queries_s, series: MocapSeries) -> np.ndarray:
    """Linear interpolation of the mocap stream at absolute query times.

    Returns NaN rows where no bracketing pair exists, a bracket sample is
    NaN, or the bracketing gap exceeds twice the nominal period.  A query
    exactly at a sample returns that sample.
    """
    queries = np.atleast_1d(np.asarray(queries_s, dtype=float))
    t = series.timestamps
    p = series.positions
    out = np.full((len(queries), 3), np.nan)
    if len(t) == 0:
        return out
    j = np.searchsorted(t, queries, side="left")
    exact = (j < len(t)) & (t[np.minimum(j, len(t) - 1)] == queries)
    out[exact] = p[np.minimum(j, len(t) - 1)[exact]]
    interp = ~exact & (j >= 1) & (j <= len(t) - 1)
    if interp.any():
        lo = j[interp] - 1
        hi = j[interp]
        gap = t[hi] - t[lo]
        ok = gap <= 2.0 / series.rate
        w = (queries[interp] - t[lo]) / gap
        values = p[lo] + w[:, None] * (p[hi] - p[lo])
        values[~ok] = np.nan
        out[interp] = values
    return out


def fit_rigid_transform(cf_points, mc_points) -> RigidTransform:
    """Least-squares rigid transform mapping cf points onto mocap points.

    SVD of the centered cross-covariance; a reflection is corrected by
    flipping the smallest singular direction.  Raises DegenerateGeometry if
    fewer than 3 pairs are given or the pairs are (numerically) collinear.
    """
    a = np.asarray(cf_points, dtype=float).reshape(-1, 3)
    b = np.asarray(mc_points, dtype=float).reshape(-1, 3)
    if len(a) != len(b):
        raise ValueError("point sets must have equal length")
    if len(a) < 3:
        raise DegenerateGeometry(f"need at least 3 pairs, got {len(a)}")
    if np.isnan(a).any() or np.isnan(b).any():
        raise ValueError("point pairs must not contain NaN")
    ca = a.mean(axis=0)
    cb = b.mean(axis=0)
    h = (a - ca).T @ (b - cb)
    u, sv, vt = np.linalg.svd(h)
    if sv[1] < _DEGENERATE_SV:
        raise DegenerateGeometry(
            "point pairs are collinear; the rotation is not identifiable"
        )
    v = vt.T
    d = np.sign(np.linalg.det(v @ u.T))
    r = v @ np.diag([1.0, 1.0, d]) @ u.T
    return RigidTransform(r, cb - r @ ca)


def _anchors(bundle: SessionBundle):
    """(t_s_cf, t_f_cf, t_s_mc, t_f_mc) in seconds from LED markers + mocap."""
    led = bundle.cf.led
    on_times = led.timestamps_us[led.on == 1]
    off_times = led.timestamps_us[led.on == 0]
    if len(on_times) == 0 or len(off_times) == 0:
        raise InvalidAnchors("session has no LED on/off sync markers")
    t_s_cf = float(on_times[0]) * 1e-6
    t_f_cf = float(off_times[-1]) * 1e-6
    valid = bundle.mocap.valid_mask()
    if valid.sum() < 2:
        raise InvalidAnchors("mocap stream has fewer than 2 valid samples")
    valid_times = bundle.mocap.timestamps[valid]
    return t_s_cf, t_f_cf, float(valid_times[0]), float(valid_times[-1])


def _estimate_events(bundle: SessionBundle):
    log = bundle.estimates
    if log is None or len(log.estimates) == 0:
        raise InvalidAnchors("session carries no position estimates to align")
    block = log.estimates
    return block.timestamps_us.astype(np.float64) * 1e-6, block.xyz


def _common_mask(est_t, est_p, series: MocapSeries, t_s_cf, span_cf,
                 t_s_mc, span_mc, reach: float) -> np.ndarray:
    """Rows whose interpolation stays valid across every offset cell.

    ``reach`` bounds |offset| over all cells ever evaluated; the query time
    of a record then stays within +/- reach * (|1-u| + |u|) of its zero-offset
    query, and the record is kept only when every mocap sample its brackets
    could touch is valid.  One shared mask keeps the grid objective comparable
    across cells.
    """
    u = (est_t - t_s_cf) / span_cf
    q0 = t_s_mc + u * span_mc
    margin = reach * (np.abs(1.0 - u) + np.abs(u))
    period = 1.0 / series.rate
    q_min = q0 - margin - period
    q_max = q0 + margin + period
    t = series.timestamps
    nan_prefix = np.concatenate([[0], np.cumsum(~series.valid_mask())])
    lo = np.searchsorted(t, q_min, side="left")
    hi = np.searchsorted(t, q_max, side="right")
    in_range = (q0 - margin >= t[0]) & (q0 + margin <= t[-1]) if len(t) else np.zeros(len(q0), bool)
    clean = (nan_prefix[hi] - nan_prefix[lo]) == 0
    finite = ~np.isnan(est_p).any(axis=1)
    return in_range & clean & finite


def _argmin_with_ties(objective: np.ndarray, offsets_s, offsets_f):
    """Grid argmin; exact ties go to the smallest |start| + |end| offsets."""
    best = objective.min()
    cand = np.argwhere(objective == best)
    cost = np.abs(offsets_s[cand[:, 0]]) + np.abs(offsets_f[cand[:, 1]])
    order = np.lexsort((cand[:, 1], cand[:, 0], cost))
    i, j = cand[order[0]]
    return int(i), int(j)


def align(bundle: SessionBundle, *, max_offset_s: float = 0.1,
          coarse_step_s: float = 0.005, fine_step_s: float = 0.001,
          min_pairs: int = 10) -> AlignedDataset:
    """Full alignment: rescale, offset search, rigid fit.

    The offset grid spans [-max_offset, +max_offset] at the coarse step for
    both the start and end offsets, then one refinement pass at the fine step
    around the best coarse cell.  Collinear or coincident point sets (a
    stationary session) fall back to a translation-only fit inside the search
    instead of failing, since the offsets and translation remain perfectly
    well-defined there.
    """
    est_t, est_p = _estimate_events(bundle)
    t_s_cf, t_f_cf, t_s_mc, t_f_mc = _anchors(bundle)
    span_cf = t_f_cf - t_s_cf
    span_mc = t_f_mc - t_s_mc
    if not span_cf > 0 or not span_mc > 0:
        raise InvalidAnchors("anchor spans must be positive")
    series = bundle.mocap
    n_coarse = int(round(2 * max_offset_s / coarse_step_s)) + 1
    coarse = np.linspace(-max_offset_s, max_offset_s, n_coarse)
    reach = max_offset_s + coarse_step_s
    mask = _common_mask(est_t, est_p, series, t_s_cf, span_cf, t_s_mc, span_mc, reach)
    if int(mask.sum()) < min_pairs:
        raise InsufficientOverlap(
            f"only {int(mask.sum())} valid pairs, need at least {min_pairs}"
        )
    sel_t = np.ascontiguousarray(est_t[mask])
    sel_p = np.ascontiguousarray(est_p[mask])
    mc_t = np.ascontiguousarray(series.timestamps)
    mc_p = np.ascontiguousarray(series.positions)

    objective = kernels.align_objective_grid(
        sel_t, sel_p, mc_t, mc_p, t_s_cf, span_cf, t_s_mc, t_f_mc, coarse, coarse)
    ci, cj = _argmin_with_ties(objective, coarse, coarse)
    steps = np.arange(-4, 5, dtype=np.float64) * fine_step_s
    fine_s = coarse[ci] + steps
    fine_f = coarse[cj] + steps
    objective_fine = kernels.align_objective_grid(
        sel_t, sel_p, mc_t, mc_p, t_s_cf, span_cf, t_s_mc, t_f_mc, fine_s, fine_f)
    fi, fj = _argmin_with_ties(objective_fine, fine_s, fine_f)
    off_s, off_f = float(fine_s[fi]), float(fine_f[fj])

    _, rotation, translation, _ = kernels.align_cell(
        sel_t, sel_p, mc_t, mc_p, t_s_cf, span_cf, t_s_mc, t_f_mc, off_s, off_f)
    transform = RigidTransform(rotation, translation)

    ratio = ((t_f_mc + off_f) - (t_s_mc + off_s)) / span_cf
    times = (est_t - t_s_cf) * ratio + t_s_mc + off_s
    cf_aligned = transform.apply(est_p)
    mc_aligned = interpolate_mocap(times, series)
    fit_rows = mask & ~np.isnan(mc_aligned).any(axis=1)
    residual = float(np.linalg.norm(cf_aligned[fit_rows] - mc_aligned[fit_rows],
                                    axis=1).mean()) if fit_rows.any() else float("nan")
    return AlignedDataset(
        times=times,
        cf_positions=cf_aligned,
        mocap_positions=mc_aligned,
        transform=transform,
        offsets=(off_s, off_f),
        residual=residual,
    )
