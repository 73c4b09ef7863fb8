"""Synthetic session generation.

Produces the same artifacts a hardware recording would: a Crazyflie event
log on a warped microsecond clock (sweep angles, IMU, LED sync markers), a
mocap series on the reference clock with latency and NaN occlusion gaps, and
a dense truth trajectory for oracle comparisons.

Trajectories are analytic, so sweep angles can be synthesized exactly at any
event time rather than interpolated.  All randomness derives from one seed
through fixed substreams; identical configs yield bit-identical bundles.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import geometry
from .config import ScenarioConfig
from .errors import ConfigError
from .geometry import DECK_SENSOR_OFFSETS, BaseStation
from .rotations import look_at_rotation, quat_to_matrix
from .session import (
    CfEventLog,
    ImuBlock,
    LedBlock,
    MocapSeries,
    SessionBundle,
    SweepBlock,
    TruthTrajectory,
)

GRAVITY = 9.81

# Within one epoch, deterministic event staggering: the second station fires
# 5 ms after the first, the second plane 2 ms after the first, and the four
# sensors report 50 us apart.  The whole 16-event epoch spans ~7.2 ms, well
# inside the 10 ms default grouping window and far from the next epoch.
STATION_STAGGER_S = 5e-3
PLANE_STAGGER_S = 2e-3
SENSOR_STAGGER_S = 50e-6

# led markers sort ahead of co-timed sweeps, sweeps ahead of imu
_PRIORITY_LED = 0
_PRIORITY_SWEEP = 1
_PRIORITY_IMU = 2


def _substreams(seed: int):
    """Fixed child streams: trajectory, angle noise, dropout, mocap gaps."""
    children = np.random.SeedSequence(seed).spawn(4)
    return [np.random.default_rng(c) for c in children]


class Motion:
    """Analytic rigid-body motion; all methods take (n,) times in seconds."""

    def position(self, t: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def velocity(self, t: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def acceleration(self, t: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def rotation(self, t: np.ndarray) -> np.ndarray:
        return np.broadcast_to(np.eye(3), (len(t), 3, 3)).copy()

    def quaternion(self, t: np.ndarray) -> np.ndarray:
        out = np.zeros((len(t), 4))
        out[:, 0] = 1.0
        return out

    def angular_rate_body(self, t: np.ndarray) -> np.ndarray:
        return np.zeros((len(t), 3))


class StationaryMotion(Motion):
    def __init__(self, point: np.ndarray):
        self.point = np.asarray(point, dtype=float)

    def position(self, t):
        return np.broadcast_to(self.point, (len(t), 3)).copy()

    def velocity(self, t):
        return np.zeros((len(t), 3))

    def acceleration(self, t):
        return np.zeros((len(t), 3))


class FlightMotion(Motion):
    """Piecewise smoothstep segments between random setpoints.

    The smoothstep s(u) = 3u^2 - 2u^3 peaks at slope 1.5, so a segment of
    length L over time T never exceeds 1.5 L / T; T is chosen to cap the
    speed at ``max_speed``.  Velocity is zero at every knot, so the motion
    is C1 and holds still outside the knot span.
    """

    def __init__(self, knot_times: np.ndarray, knot_points: np.ndarray):
        self.knot_times = np.asarray(knot_times, dtype=float)
        self.knot_points = np.asarray(knot_points, dtype=float)

    @staticmethod
    def sample(rng: np.random.Generator, config: ScenarioConfig) -> "FlightMotion":
        low = config.volume_center - config.volume_side_m / 2
        high = config.volume_center + config.volume_side_m / 2
        points = [rng.uniform(low, high)]
        times = [0.0]
        while times[-1] < config.duration_s + 1.0:
            nxt = rng.uniform(low, high)
            dist = float(np.linalg.norm(nxt - points[-1]))
            span = max(1.5 * dist / config.max_speed_mps, 0.5)
            times.append(times[-1] + span)
            points.append(nxt)
        return FlightMotion(np.array(times), np.array(points))

    def _segments(self, t):
        t = np.asarray(t, dtype=float)
        seg = np.searchsorted(self.knot_times, t, side="right") - 1
        seg = np.clip(seg, 0, len(self.knot_times) - 2)
        t0 = self.knot_times[seg]
        span = self.knot_times[seg + 1] - t0
        u = np.clip((t - t0) / span, 0.0, 1.0)
        p0 = self.knot_points[seg]
        dp = self.knot_points[seg + 1] - p0
        return u, span, p0, dp

    def position(self, t):
        u, _, p0, dp = self._segments(t)
        s = u * u * (3.0 - 2.0 * u)
        return p0 + s[:, None] * dp

    def velocity(self, t):
        u, span, _, dp = self._segments(t)
        ds = 6.0 * u * (1.0 - u)
        return (ds / span)[:, None] * dp

    def acceleration(self, t):
        u, span, _, dp = self._segments(t)
        dds = 6.0 - 12.0 * u
        # clipping u makes the motion constant outside segments
        dds = np.where((u <= 0.0) | (u >= 1.0), 0.0, dds)
        return (dds / span ** 2)[:, None] * dp


class SwayMotion(Motion):
    """Sinusoidal hand-sweep motion with small body tilts.

    Axis amplitudes deliberately overshoot the tracking volume so the deck
    periodically leaves the base stations' field of view.
    """

    def __init__(self, center, amp, omega, phase, tilt_amp, tilt_omega, tilt_phase):
        self.center = np.asarray(center, dtype=float)
        self.amp = np.asarray(amp, dtype=float)
        self.omega = np.asarray(omega, dtype=float)
        self.phase = np.asarray(phase, dtype=float)
        self.tilt_amp = np.asarray(tilt_amp, dtype=float)
        self.tilt_omega = np.asarray(tilt_omega, dtype=float)
        self.tilt_phase = np.asarray(tilt_phase, dtype=float)

    @staticmethod
    def sample(rng: np.random.Generator, config: ScenarioConfig) -> "SwayMotion":
        amp = np.array([
            rng.uniform(3.4, 3.8),
            rng.uniform(0.9, 1.4),
            rng.uniform(0.2, 0.4),
        ])
        peak_speed = np.array([
            rng.uniform(1.4, 1.9),
            rng.uniform(0.7, 1.2),
            rng.uniform(0.2, 0.4),
        ])
        omega = peak_speed / amp
        phase = rng.uniform(0.0, 2.0 * np.pi, size=3)
        tilt_amp = rng.uniform(0.05, 0.15, size=2)
        tilt_omega = rng.uniform(0.8, 1.6, size=2)
        tilt_phase = rng.uniform(0.0, 2.0 * np.pi, size=2)
        return SwayMotion(config.volume_center, amp, omega, phase,
                          tilt_amp, tilt_omega, tilt_phase)

    def position(self, t):
        t = np.asarray(t, dtype=float)
        return self.center + self.amp * np.sin(np.outer(t, self.omega) + self.phase)

    def velocity(self, t):
        t = np.asarray(t, dtype=float)
        return self.amp * self.omega * np.cos(np.outer(t, self.omega) + self.phase)

    def acceleration(self, t):
        t = np.asarray(t, dtype=float)
        return -self.amp * self.omega ** 2 * np.sin(np.outer(t, self.omega) + self.phase)

    def _tilts(self, t):
        t = np.asarray(t, dtype=float)
        args = np.outer(t, self.tilt_omega) + self.tilt_phase
        return self.tilt_amp * np.sin(args), self.tilt_amp * self.tilt_omega * np.cos(args)

    def rotation(self, t):
        tilts, _ = self._tilts(t)
        roll, pitch = tilts[:, 0], tilts[:, 1]
        cr, sr = np.cos(roll), np.sin(roll)
        cp, sp = np.cos(pitch), np.sin(pitch)
        out = np.empty((len(t), 3, 3))
        # R = Ry(pitch) @ Rx(roll)
        out[:, 0, 0] = cp
        out[:, 0, 1] = sp * sr
        out[:, 0, 2] = sp * cr
        out[:, 1, 0] = 0.0
        out[:, 1, 1] = cr
        out[:, 1, 2] = -sr
        out[:, 2, 0] = -sp
        out[:, 2, 1] = cp * sr
        out[:, 2, 2] = cp * cr
        return out

    def quaternion(self, t):
        tilts, _ = self._tilts(t)
        roll, pitch = tilts[:, 0], tilts[:, 1]
        # q = q_pitch(y) * q_roll(x)
        cr, sr = np.cos(roll / 2), np.sin(roll / 2)
        cp, sp = np.cos(pitch / 2), np.sin(pitch / 2)
        out = np.empty((len(t), 4))
        out[:, 0] = cp * cr
        out[:, 1] = cp * sr
        out[:, 2] = sp * cr
        out[:, 3] = -sp * sr
        return out

    def angular_rate_body(self, t):
        # small-tilt approximation: body rates ~ (roll', pitch', 0)
        _, rates = self._tilts(t)
        out = np.zeros((len(t), 3))
        out[:, 0] = rates[:, 0]
        out[:, 1] = rates[:, 1]
        return out


def build_motion(config: ScenarioConfig) -> Motion:
    """Deterministic analytic motion for the config's scenario and seed."""
    rng = _substreams(config.rng_seed)[0]
    if config.scenario == "stationary":
        low = config.volume_center - config.volume_side_m / 2
        high = config.volume_center + config.volume_side_m / 2
        return StationaryMotion(rng.uniform(low, high))
    if config.scenario == "flight":
        return FlightMotion.sample(rng, config)
    return SwayMotion.sample(rng, config)


def stations_from_config(config: ScenarioConfig) -> list[BaseStation]:
    """Two stations at the configured positions, aimed at the volume center."""
    out = []
    for bs_id, pos in ((0, config.bs1_position), (1, config.bs2_position)):
        out.append(BaseStation(
            id=bs_id,
            version=config.lh_version,
            rotation=look_at_rotation(pos, config.volume_center),
            translation=np.asarray(pos, dtype=float),
        ))
    return out


def mocap_transform(config: ScenarioConfig) -> tuple[np.ndarray, np.ndarray]:
    """Rotation and translation mapping global truth into the mocap frame."""
    return quat_to_matrix(config.mocap_rotation_quat), config.mocap_translation.copy()


def warp_to_cf_us(t_true, config: ScenarioConfig) -> np.ndarray:
    """True seconds to onboard microsecond stamps (offset, drift, rounding)."""
    scale = 1.0 + config.clock_drift_ppm * 1e-6
    seconds = config.clock_offset_s + np.asarray(t_true, dtype=float) * scale
    return np.rint(seconds * 1e6).astype(np.uint64)


def unwarp_from_cf_us(stamp_us, config: ScenarioConfig) -> np.ndarray:
    """Inverse of warp_to_cf_us up to the microsecond rounding."""
    scale = 1.0 + config.clock_drift_ppm * 1e-6
    seconds = np.asarray(stamp_us, dtype=np.float64) * 1e-6
    return (seconds - config.clock_offset_s) / scale


def visibility_window(config: ScenarioConfig) -> tuple[float, float]:
    """Mocap visibility span [t_on, t_off], snapped onto the sample grid.

    Snapping makes the LED markers coincide exactly with the first and last
    valid mocap samples in truth time, which is what the clock-anchor
    synchronization relies on.
    """
    rate = config.mocap_rate_hz
    k_on = math.ceil(config.visibility_margin_s * rate)
    k_off = math.floor((config.duration_s - config.visibility_margin_s) * rate)
    t_on = k_on / rate
    t_off = k_off / rate
    if not t_off > t_on:
        raise ConfigError("duration too short for the visibility margin")
    return t_on, t_off


def draw_gap_windows(config: ScenarioConfig) -> np.ndarray:
    """Occlusion windows (start, end) on the mocap clock, possibly overlapping."""
    rng = _substreams(config.rng_seed)[3]
    t_on, t_off = visibility_window(config)
    out = np.empty((config.mocap_gap_count, 2))
    for i in range(config.mocap_gap_count):
        start = rng.uniform(t_on, max(t_on, t_off - config.mocap_gap_duration_s))
        out[i] = (start, start + config.mocap_gap_duration_s)
    return out


def generate_trajectory(config: ScenarioConfig, motion: Motion | None = None) -> TruthTrajectory:
    """Dense truth samples on the mocap-rate grid over [0, duration)."""
    motion = motion if motion is not None else build_motion(config)
    count = math.ceil(config.duration_s * config.mocap_rate_hz)
    t = np.arange(count, dtype=np.float64) / config.mocap_rate_hz
    return TruthTrajectory(t, motion.position(t), motion.velocity(t),
                           motion.quaternion(t))


def _epoch_event_times(config: ScenarioConfig):
    """True times + identity of every scheduled sweep event.

    Returns arrays (t, epoch, bs, plane, sensor) before dropout/visibility.
    """
    n_epochs = int(math.floor(config.duration_s * config.epoch_rate_hz))
    epoch = np.arange(n_epochs)
    base = epoch / config.epoch_rate_hz
    bs = np.arange(2)
    plane = np.arange(1, 3)
    sensor = np.arange(4)
    e_g, b_g, p_g, s_g = np.meshgrid(epoch, bs, plane, sensor, indexing="ij")
    t = (base[e_g] + b_g * STATION_STAGGER_S
         + (p_g - 1) * PLANE_STAGGER_S + s_g * SENSOR_STAGGER_S)
    flat = np.argsort(t.reshape(-1), kind="stable")
    keep = t.reshape(-1)[flat] < config.duration_s
    flat = flat[keep]
    return (t.reshape(-1)[flat], e_g.reshape(-1)[flat], b_g.reshape(-1)[flat],
            p_g.reshape(-1)[flat], s_g.reshape(-1)[flat])


def _interference_mask(config: ScenarioConfig, epoch_times: np.ndarray) -> np.ndarray:
    """True where an epoch start falls inside a periodic interference window."""
    if config.lh_version != 2 or config.interference_period_s <= 0:
        return np.zeros(len(epoch_times), dtype=bool)
    phase = np.mod(epoch_times, config.interference_period_s)
    return phase < config.interference_window_s


def synthesize_session(config: ScenarioConfig, motion: Motion | None = None) -> SessionBundle:
    """Generate one full session bundle for the config.

    ``motion`` defaults to build_motion(config); passing a different motion
    keeps everything else (noise, dropout, clocks) identical.
    """
    rngs = _substreams(config.rng_seed)
    motion = motion if motion is not None else build_motion(config)
    rng_noise, rng_drop = rngs[1], rngs[2]
    stations = stations_from_config(config)
    t_on, t_off = visibility_window(config)

    # sweep schedule -> dropout -> interference -> field-of-view culling
    t_ev, epoch_ev, bs_ev, plane_ev, sensor_ev = _epoch_event_times(config)
    n_epochs = int(math.floor(config.duration_s * config.epoch_rate_hz))
    drop_draw = rng_drop.uniform(size=(n_epochs, 2))
    dropped = drop_draw[epoch_ev, bs_ev] < config.dropout_rate
    interference = _interference_mask(config, np.arange(n_epochs) / config.epoch_rate_hz)
    keep = ~dropped & ~interference[epoch_ev]
    t_ev, bs_ev, plane_ev, sensor_ev = (a[keep] for a in (t_ev, bs_ev, plane_ev, sensor_ev))
    pos_ev = motion.position(t_ev) + np.einsum(
        "nij,nj->ni", motion.rotation(t_ev), DECK_SENSOR_OFFSETS[sensor_ev]
    )
    visible = np.fromiter(
        (geometry.in_view(stations[b], p) for b, p in zip(bs_ev, pos_ev)),
        dtype=bool, count=len(bs_ev),
    )
    t_ev, bs_ev, plane_ev, sensor_ev = (a[visible] for a in (t_ev, bs_ev, plane_ev, sensor_ev))

    # IMU schedule and LED markers
    n_imu = int(math.floor(config.duration_s * config.imu_rate_hz))
    t_imu = np.arange(n_imu, dtype=np.float64) / config.imu_rate_hz
    t_led = np.array([t_on, t_off])
    led_on = np.array([1, 0], dtype=np.uint8)

    # one clock warp for everything, then enforce unique stamps
    stamps = np.concatenate([
        warp_to_cf_us(t_ev, config),
        warp_to_cf_us(t_imu, config),
        warp_to_cf_us(t_led, config),
    ])
    priority = np.concatenate([
        np.full(len(t_ev), _PRIORITY_SWEEP),
        np.full(len(t_imu), _PRIORITY_IMU),
        np.full(len(t_led), _PRIORITY_LED),
    ])
    seq = np.arange(len(stamps))
    order = np.lexsort((seq, priority, stamps))
    sorted_stamps = stamps[order].astype(np.int64)
    for i in range(1, len(sorted_stamps)):
        if sorted_stamps[i] <= sorted_stamps[i - 1]:
            sorted_stamps[i] = sorted_stamps[i - 1] + 1
    final = np.empty(len(stamps), dtype=np.uint64)
    final[order] = sorted_stamps.astype(np.uint64)
    stamp_ev = final[:len(t_ev)]
    stamp_imu = final[len(t_ev):len(t_ev) + len(t_imu)]
    stamp_led = final[len(t_ev) + len(t_imu):]

    # sweep angles evaluated at the actual (rounded, de-duplicated) stamps
    t_ev_final = unwarp_from_cf_us(stamp_ev, config)
    pos_final = motion.position(t_ev_final) + np.einsum(
        "nij,nj->ni", motion.rotation(t_ev_final), DECK_SENSOR_OFFSETS[sensor_ev]
    )
    angles = np.fromiter(
        (geometry.sweep_angle_global(p, stations[b], int(pl))
         for p, b, pl in zip(pos_final, bs_ev, plane_ev)),
        dtype=np.float64, count=len(t_ev_final),
    )
    if len(angles) and config.sigma_alpha_rad > 0:
        noise = config.sigma_alpha_rad * rng_noise.standard_normal(len(angles))
        angles = geometry.wrap_angle(angles + noise)

    # IMU content at the actual stamps: specific force in body + body rates
    t_imu_final = unwarp_from_cf_us(stamp_imu, config)
    accel_world = motion.acceleration(t_imu_final) + np.array([0.0, 0.0, GRAVITY])
    rot_imu = motion.rotation(t_imu_final)
    accel_body = np.einsum("nji,nj->ni", rot_imu, accel_world)
    imu_samples = np.concatenate(
        [accel_body, motion.angular_rate_body(t_imu_final)], axis=1
    ).astype(np.float32)

    # mocap: stamps on the reference grid, content delayed by the latency
    rate = config.mocap_rate_hz
    count = math.ceil(config.duration_s * rate)
    t_mc = np.arange(count, dtype=np.float64) / rate
    gaps = draw_gap_windows(config)
    valid = (t_mc >= t_on) & (t_mc <= t_off)
    for start, end in gaps:
        valid &= ~((t_mc >= start) & (t_mc < end))
    truth_at = motion.position(t_mc - config.mocap_latency_s)
    r_mc, tr_mc = mocap_transform(config)
    mocap_pos = truth_at @ r_mc.T + tr_mc
    mocap_pos[~valid] = np.nan

    sweeps = SweepBlock(stamp_ev, bs_ev.astype(np.uint8), sensor_ev.astype(np.uint8),
                        plane_ev.astype(np.uint8), angles)
    cf = CfEventLog(
        sweeps=sweeps,
        imu=ImuBlock(stamp_imu, imu_samples),
        led=LedBlock(stamp_led, led_on),
    )
    bundle = SessionBundle(
        cf=cf,
        mocap=MocapSeries(rate, 0.0, t_mc, mocap_pos),
        truth=generate_trajectory(config, motion),
    )
    bundle.cf.validate()
    return bundle
