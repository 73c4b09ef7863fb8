"""Point-mass extended Kalman filter driven by individual sweep-plane angles.

State is position + velocity (6D) in the global frame.  Each sweep angle is a
scalar measurement; its model and Jacobian live in the plane's rotated station
frame and are mapped to global coordinates through the drum and station
rotations.  Attitude is not estimated: sensor offsets are rotated by a
supplied body orientation (ground truth in simulation).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError, MeasurementRejected
from .geometry import BaseStation, SweepAngle, sweep_angle_forward, wrap_angle

DEFAULT_SIGMA_ALPHA = 1e-3  # rad, measurement noise
DEFAULT_PROCESS_NOISE = 1.0  # m^2/s^3, sized for ~1 m/s^2 maneuvers
DEFAULT_GATE_SIGMA = 5.0
COVARIANCE_FLOOR = 1e-12
POSITION_STD_GATE = 0.05  # m, stream records above this are withheld


@dataclass(frozen=True)
class EkfState:
    """Gaussian state: position, velocity, and their 6x6 covariance."""

    position: np.ndarray
    velocity: np.ndarray
    covariance: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "position", np.asarray(self.position, float).reshape(3))
        object.__setattr__(self, "velocity", np.asarray(self.velocity, float).reshape(3))
        cov = np.asarray(self.covariance, dtype=float)
        if cov.shape != (6, 6):
            raise ValueError("covariance must be 6x6")
        object.__setattr__(self, "covariance", cov)


@dataclass(frozen=True)
class SweepMeasurement:
    """A sweep angle bound to its station and the emitting sensor's offset."""

    angle: SweepAngle
    base_station: BaseStation
    sensor_offset: np.ndarray
    body_rotation: np.ndarray = field(default_factory=lambda: np.eye(3))


def predict(
    state: EkfState,
    dt: float,
    accel: np.ndarray | None = None,
    process_noise: float = DEFAULT_PROCESS_NOISE,
) -> EkfState:
    """Constant-velocity propagation, optionally driven by an acceleration input.

    Process noise follows the white-acceleration model: the velocity block
    grows by ``process_noise * dt`` with the matching position coupling.
    """
    if dt < 0:
        raise ValueError("dt must be non-negative")
    pos = state.position + state.velocity * dt
    vel = state.velocity.copy()
    if accel is not None:
        a = np.asarray(accel, dtype=float).reshape(3)
        pos = pos + 0.5 * a * dt * dt
        vel = vel + a * dt
    f = np.eye(6)
    f[0:3, 3:6] = dt * np.eye(3)
    q = _process_noise_matrix(dt, process_noise)
    cov = f @ state.covariance @ f.T + q
    return EkfState(pos, vel, 0.5 * (cov + cov.T))


def _process_noise_matrix(dt: float, q: float) -> np.ndarray:
    block = np.zeros((6, 6))
    qpp = q * dt ** 3 / 3.0
    qpv = q * dt ** 2 / 2.0
    qvv = q * dt
    for axis in range(3):
        block[axis, axis] = qpp
        block[axis, axis + 3] = qpv
        block[axis + 3, axis] = qpv
        block[axis + 3, axis + 3] = qvv
    return block


def measurement_jacobian(
    sensor_pos_global: np.ndarray, bs: BaseStation, plane_index: int
) -> tuple[float, np.ndarray]:
    """Predicted sweep angle and its gradient w.r.t. the global sensor position.

    In the plane frame, with q = tan(tilt) / sqrt(r^2 - (z tan(tilt))^2):

        g = ((-y - x z q) / r^2, (x - y z q) / r^2, q)

    which is mapped to the global frame as R_b @ R_d.T @ g.
    """
    plane = bs.planes[plane_index - 1]
    v = bs.plane_frame(np.asarray(sensor_pos_global, dtype=float), plane_index)
    x, y, z = v
    r2 = x * x + y * y
    tan_t = np.tan(plane.tilt)
    under = r2 - (z * tan_t) ** 2
    if r2 <= 0.0 or under <= 0.0:
        raise DomainError("sensor position outside the Jacobian domain")
    alpha = sweep_angle_forward(v, plane)
    q = tan_t / np.sqrt(under)
    g_plane = np.array([(-y - x * z * q) / r2, (x - y * z * q) / r2, q])
    g_global = bs.rotation @ plane.drum_rotation.T @ g_plane
    return alpha, g_global


def update(
    state: EkfState,
    m: SweepMeasurement,
    sigma_alpha: float = DEFAULT_SIGMA_ALPHA,
    gate_sigma: float = DEFAULT_GATE_SIGMA,
) -> EkfState:
    """Scalar measurement update with innovation gating and Joseph-form covariance.

    Raises MeasurementRejected when the wrapped innovation exceeds
    ``gate_sigma`` standard deviations of the innovation covariance.
    """
    sensor_pos = state.position + m.body_rotation @ np.asarray(m.sensor_offset, float)
    alpha_pred, g = measurement_jacobian(sensor_pos, m.base_station, m.angle.plane_index)
    innovation = wrap_angle(m.angle.angle - alpha_pred)
    h = np.zeros(6)
    h[0:3] = g
    p = state.covariance
    s = float(h @ p @ h + sigma_alpha ** 2)
    if abs(innovation) > gate_sigma * np.sqrt(s):
        raise MeasurementRejected(
            f"innovation {innovation:.4f} rad exceeds {gate_sigma} sigma "
            f"({gate_sigma * np.sqrt(s):.4f} rad)"
        )
    k = (p @ h) / s
    delta = k * innovation
    ikh = np.eye(6) - np.outer(k, h)
    cov = ikh @ p @ ikh.T + (sigma_alpha ** 2) * np.outer(k, k)
    cov = _enforce_spd(cov)
    return EkfState(state.position + delta[0:3], state.velocity + delta[3:6], cov)


def _enforce_spd(cov: np.ndarray) -> np.ndarray:
    cov = 0.5 * (cov + cov.T)
    eigvals, eigvecs = np.linalg.eigh(cov)
    if eigvals[0] < COVARIANCE_FLOOR:
        eigvals = np.maximum(eigvals, COVARIANCE_FLOOR)
        cov = (eigvecs * eigvals) @ eigvecs.T
        cov = 0.5 * (cov + cov.T)
    return cov


def initial_state(
    position: np.ndarray,
    position_var: float = 1.0,
    velocity_var: float = 0.25,
) -> EkfState:
    """Diagonal-covariance starting state around an initial position guess."""
    cov = np.diag([position_var] * 3 + [velocity_var] * 3).astype(float)
    return EkfState(np.asarray(position, float), np.zeros(3), cov)


def run_filter(
    times_s: np.ndarray,
    bs_index: np.ndarray,
    plane_index: np.ndarray,
    sensor_index: np.ndarray,
    angles: np.ndarray,
    stations: tuple[BaseStation, BaseStation],
    sensor_offsets: np.ndarray,
    body_rotations: np.ndarray | None,
    state0: EkfState,
    sigma_alpha: float = DEFAULT_SIGMA_ALPHA,
    process_noise: float = DEFAULT_PROCESS_NOISE,
    gate_sigma: float = DEFAULT_GATE_SIGMA,
):
    """Process a time-sorted sweep stream through the filter.

    ``bs_index`` indexes into ``stations`` (0 or 1), ``plane_index`` is 1 or 2,
    and ``body_rotations`` is an optional (n, 3, 3) array of per-measurement
    body orientations.  Returns (positions, velocities, accepted mask, worst
    position variance per event, final state); rejected or out-of-domain
    measurements leave the state at its prediction for that timestamp.
    """
    from . import kernels

    n = len(times_s)
    if body_rotations is None:
        body_rotations = np.broadcast_to(np.eye(3), (n, 3, 3))
    params = pack_station_params(stations)
    positions, velocities, accepted, pos_var, x, p = kernels.ekf_process(
        np.asarray(times_s, float),
        np.asarray(bs_index, np.int64),
        np.asarray(plane_index, np.int64),
        np.asarray(sensor_index, np.int64),
        np.asarray(angles, float),
        *params,
        np.ascontiguousarray(sensor_offsets, dtype=float),
        np.ascontiguousarray(body_rotations, dtype=float),
        np.concatenate([state0.position, state0.velocity]),
        state0.covariance.copy(),
        float(sigma_alpha),
        float(process_noise),
        float(gate_sigma),
    )
    final = EkfState(x[0:3], x[3:6], p)
    return positions, velocities, accepted, pos_var, final


def pack_station_params(stations: tuple[BaseStation, BaseStation]):
    """Station geometry as plain arrays for the kernel backends."""
    r_b = np.stack([bs.rotation for bs in stations])
    t_b = np.stack([bs.translation for bs in stations])
    tilts = np.array([[pl.tilt for pl in bs.planes] for bs in stations])
    r_d = np.stack([np.stack([pl.drum_rotation for pl in bs.planes]) for bs in stations])
    return r_b, t_b, tilts, r_d


@dataclass(frozen=True)
class EkfStreamResult:
    """Health-gated filter output over a whole sweep stream.

    ``n_events`` counts all sweep measurements, ``n_accepted`` those inside
    the innovation gate; records whose worst position std exceeded the
    health gate are withheld from the emitted arrays.
    """

    timestamps_us: np.ndarray
    positions: np.ndarray
    n_events: int
    n_accepted: int
    final: EkfState


def estimate_stream(
    sweep_block,
    stations: tuple[BaseStation, BaseStation],
    state0: EkfState | None = None,
    sensor_offsets: np.ndarray | None = None,
    sigma_alpha: float = DEFAULT_SIGMA_ALPHA,
    process_noise: float = DEFAULT_PROCESS_NOISE,
    gate_sigma: float = DEFAULT_GATE_SIGMA,
    position_std_gate: float = POSITION_STD_GATE,
) -> EkfStreamResult:
    """Run the filter over a whole sweep block with sensor offsets by index.

    When no starting state is given, the first complete crossing-beam epoch
    seeds the position (a stand-in for what a deployed system gets from its
    own coarse solver); without one the volume center is used with a wide
    prior.  Body attitude is taken as identity, so the millimetre-scale
    offset rotation error is absorbed by the measurement noise.

    Emitted records are those accepted by the innovation gate whose worst
    position std stayed under ``position_std_gate``; during one-station
    visibility stretches the depth variance balloons and the stream goes
    quiet rather than reporting unobservable positions.
    """
    from .crossing_beam import estimate_stream as cb_stream
    from .geometry import DECK_SENSOR_OFFSETS

    if sensor_offsets is None:
        sensor_offsets = DECK_SENSOR_OFFSETS
    if state0 is None:
        seed = cb_stream(sweep_block, stations)
        if len(seed.positions):
            state0 = initial_state(seed.positions[0], position_var=0.04)
        else:
            state0 = initial_state(np.array([0.0, 0.0, 1.0]), position_var=4.0)
    stamps = np.asarray(sweep_block.timestamps_us, dtype=np.uint64)
    id_to_slot = {station.id: i for i, station in enumerate(stations)}
    bs_index = np.array([id_to_slot[int(b)] for b in sweep_block.bs], np.int64)
    positions, velocities, accepted, pos_var, final = run_filter(
        stamps.astype(np.float64) * 1e-6,
        bs_index,
        np.asarray(sweep_block.plane, np.int64),
        np.asarray(sweep_block.sensor, np.int64),
        np.asarray(sweep_block.angle, np.float64),
        stations,
        np.asarray(sensor_offsets, dtype=float),
        None,
        state0,
        sigma_alpha=sigma_alpha,
        process_noise=process_noise,
        gate_sigma=gate_sigma,
    )
    accepted = accepted.astype(bool)
    emitted = accepted & (pos_var <= position_std_gate ** 2)
    return EkfStreamResult(
        timestamps_us=stamps[emitted],
        positions=positions[emitted],
        n_events=len(stamps),
        n_accepted=int(accepted.sum()),
        final=final,
    )
