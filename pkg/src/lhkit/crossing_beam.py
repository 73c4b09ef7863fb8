"""Triangulation of sensor positions from two stations' rays.

Each sensor yields one ray per station (the intersection line of that
station's two sweep planes).  The sensor position is the midpoint of the
closest points between the two rays; the squared gap between those points is
the quality measure used downstream for filtering.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import IncompleteEpoch, ParallelRays
from .geometry import BaseStation, Ray, SweepAngle, ray_from_sweep_pair

_PARALLEL_TOL = 1e-12

DEFAULT_EPOCH_WINDOW_US = 10_000


def closest_points(ray_1: Ray, ray_2: Ray) -> tuple[np.ndarray, np.ndarray]:
    """Closest point pair between two rays (forward half-lines).

    Solves the two-line least-squares problem in closed form, then clamps the
    line parameters at 0 so points never fall behind a station.  Raises
    ParallelRays for (anti)parallel directions.
    """
    s, u = _closest_parameters(
        ray_1.origin, ray_1.direction, ray_2.origin, ray_2.direction
    )
    return ray_1.origin + s * ray_1.direction, ray_2.origin + u * ray_2.direction


def _closest_parameters(o1, d1, o2, d2) -> tuple[float, float]:
    w0 = o1 - o2
    a = d1 @ d1
    b = d1 @ d2
    c = d2 @ d2
    d = d1 @ w0
    e = d2 @ w0
    denom = a * c - b * b
    if denom <= _PARALLEL_TOL:
        raise ParallelRays(f"ray directions are parallel (denominator {denom:.3e})")
    s = (b * e - c * d) / denom
    u = (a * e - b * d) / denom
    if s < 0.0:
        s = 0.0
        u = e / c
    if u < 0.0:
        u = 0.0
        s = max(0.0, -d / a)
    return s, u


@dataclass(frozen=True)
class CrossingBeamResult:
    """Deck-center estimate for one epoch with per-sensor diagnostics."""

    position: np.ndarray
    per_sensor_positions: np.ndarray  # (n_used, 3)
    per_sensor_delta: np.ndarray  # (n_used,), squared ray gap, m^2
    sensor_indices: np.ndarray  # which of the 4 sensors contributed
    timestamp_us: int

    @property
    def delta_max(self) -> float:
        return float(self.per_sensor_delta.max())


def solve(
    bs_1: BaseStation,
    bs_2: BaseStation,
    angles: list[SweepAngle],
    delta_gate: float | None = None,
) -> CrossingBeamResult:
    """Triangulate one epoch of sweep angles.

    Every sensor must carry all four angles (2 planes x 2 stations); the
    result position is the mean of per-sensor estimates.  When ``delta_gate``
    is given, sensors whose squared ray gap exceeds it are dropped before
    averaging (at least one sensor must survive).
    """
    table = {}
    for ang in angles:
        key = (ang.base_station_id, ang.sensor_index, ang.plane_index)
        if key not in table:
            table[key] = ang
    positions, deltas, used = [], [], []
    for sensor in range(4):
        rays = []
        for bs in (bs_1, bs_2):
            pair = []
            for plane_index in (1, 2):
                key = (bs.id, sensor, plane_index)
                if key not in table:
                    raise IncompleteEpoch(
                        f"sensor {sensor} is missing plane {plane_index} "
                        f"of station {bs.id}"
                    )
                pair.append(table[key].angle)
            rays.append(ray_from_sweep_pair(bs, pair[0], pair[1]))
        p1, p2 = closest_points(rays[0], rays[1])
        delta = float(np.sum((p1 - p2) ** 2))
        if delta_gate is not None and delta > delta_gate:
            continue
        positions.append((p1 + p2) / 2.0)
        deltas.append(delta)
        used.append(sensor)
    if not positions:
        raise IncompleteEpoch("no sensor passed the delta gate")
    timestamp = int(round(np.mean([a.timestamp_us for a in angles])))
    return CrossingBeamResult(
        position=np.mean(positions, axis=0),
        per_sensor_positions=np.array(positions),
        per_sensor_delta=np.array(deltas),
        sensor_indices=np.array(used),
        timestamp_us=timestamp,
    )


def assemble_epochs(
    angles: list[SweepAngle], window_us: int = DEFAULT_EPOCH_WINDOW_US
) -> list[list[SweepAngle]]:
    """Group time-sorted sweep angles into epochs by timestamp proximity.

    An epoch collects every angle within ``window_us`` of its first member.
    """
    ordered = sorted(angles, key=lambda a: a.timestamp_us)
    epochs: list[list[SweepAngle]] = []
    current: list[SweepAngle] = []
    for ang in ordered:
        if current and ang.timestamp_us - current[0].timestamp_us > window_us:
            epochs.append(current)
            current = []
        current.append(ang)
    if current:
        epochs.append(current)
    return epochs


def epoch_is_complete(epoch: list[SweepAngle], bs_ids: tuple[int, int]) -> bool:
    """True when all 16 (station, sensor, plane) combinations are present."""
    keys = {(a.base_station_id, a.sensor_index, a.plane_index) for a in epoch}
    return all(
        (bs, sensor, plane) in keys
        for bs in bs_ids
        for sensor in range(4)
        for plane in (1, 2)
    )


@dataclass(frozen=True)
class StreamEstimates:
    """Batch triangulation output over a whole sweep stream.

    One row per epoch that was complete and geometrically well posed;
    ``delta_sq`` is the maximum per-sensor squared ray gap of the epoch.
    ``n_epochs`` counts all assembled epochs, ``n_complete`` those with all
    16 angles.
    """

    timestamps_us: np.ndarray
    positions: np.ndarray
    delta_sq: np.ndarray
    n_epochs: int
    n_complete: int


def estimate_stream(
    sweep_block,
    stations: tuple[BaseStation, BaseStation],
    window_us: int = DEFAULT_EPOCH_WINDOW_US,
) -> StreamEstimates:
    """Assemble a sweep block into epochs and triangulate the complete ones.

    Array-based twin of assemble_epochs + solve for full-session streams;
    the heavy per-epoch math runs in the kernel backend.
    """
    from . import kernels
    from .ekf import pack_station_params

    stamps = np.asarray(sweep_block.timestamps_us, dtype=np.uint64)
    order = np.argsort(stamps, kind="stable")
    stamps = stamps[order]
    bs = np.asarray(sweep_block.bs, dtype=np.int64)[order]
    sensor = np.asarray(sweep_block.sensor, dtype=np.int64)[order]
    plane = np.asarray(sweep_block.plane, dtype=np.int64)[order]
    angle = np.asarray(sweep_block.angle, dtype=np.float64)[order]
    bs_ids = {station.id: i for i, station in enumerate(stations)}

    epoch_angles = []
    epoch_stamps = []
    n_epochs = 0
    i = 0
    n = len(stamps)
    while i < n:
        j = i
        first = stamps[i]
        while j < n and stamps[j] - first <= window_us:
            j += 1
        n_epochs += 1
        table = np.full((2, 2, 4), np.nan)
        for k in range(i, j):
            slot = bs_ids.get(int(bs[k]))
            if slot is None:
                continue
            cell = (slot, int(plane[k]) - 1, int(sensor[k]))
            if np.isnan(table[cell]):
                table[cell] = angle[k]
        if not np.isnan(table).any():
            epoch_angles.append(table)
            epoch_stamps.append(int(round(float(np.mean(stamps[i:j])))))
        i = j
    n_complete = len(epoch_angles)
    if n_complete == 0:
        empty = np.empty(0)
        return StreamEstimates(np.empty(0, np.uint64), empty.reshape(0, 3),
                               empty, n_epochs, 0)
    r_b, t_b, tilts, r_d = pack_station_params(stations)
    positions, delta_sq, ok = kernels.solve_epochs(
        np.ascontiguousarray(epoch_angles), r_b, t_b, tilts, r_d)
    ok = ok.astype(bool)
    return StreamEstimates(
        timestamps_us=np.asarray(epoch_stamps, dtype=np.uint64)[ok],
        positions=positions[ok],
        delta_sq=delta_sq[ok],
        n_epochs=n_epochs,
        n_complete=n_complete,
    )
