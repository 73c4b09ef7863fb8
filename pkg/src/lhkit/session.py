"""In-memory containers for recorded sessions.

A session couples a Crazyflie event log (sweep angles, position estimates,
IMU samples, LED sync markers, all on the onboard microsecond clock) with a
motion-capture sample series on its own clock, plus an optional dense truth
trajectory that only synthetic sessions carry.

All float payloads are canonicalized on construction: every NaN is rewritten
to the quiet-NaN bit pattern so that container equality and file round-trips
can compare raw bits.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

CANONICAL_NAN_F64 = np.uint64(0x7FF8000000000000)
CANONICAL_NAN_F32 = np.uint32(0x7FC00000)

# Event tags in the Crazyflie log.
TAG_SWEEP = 0
TAG_ESTIMATE = 1
TAG_IMU = 2
TAG_LED = 3


def canonicalize_nans(values: np.ndarray) -> np.ndarray:
    """Copy of ``values`` with every NaN set to the canonical quiet NaN."""
    out = np.ascontiguousarray(values)
    if out.dtype == np.float64:
        out = out.copy()
        out.view(np.uint64)[np.isnan(out)] = CANONICAL_NAN_F64
    elif out.dtype == np.float32:
        out = out.copy()
        out.view(np.uint32)[np.isnan(out)] = CANONICAL_NAN_F32
    return out


def _as_1d(values, dtype) -> np.ndarray:
    out = np.ascontiguousarray(values, dtype=dtype)
    if out.ndim != 1:
        raise ValueError(f"expected 1-d array, got shape {out.shape}")
    return out


def _as_2d(values, dtype, width: int) -> np.ndarray:
    out = np.ascontiguousarray(values, dtype=dtype)
    out = out.reshape(-1, width) if out.size else out.reshape(0, width)
    if out.ndim != 2 or out.shape[1] != width:
        raise ValueError(f"expected (n, {width}) array, got shape {out.shape}")
    return out


@dataclass(frozen=True)
class SweepBlock:
    """Sweep-angle events: one record per (station, sensor, plane) hit."""

    timestamps_us: np.ndarray
    bs: np.ndarray
    sensor: np.ndarray
    plane: np.ndarray
    angle: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "timestamps_us", _as_1d(self.timestamps_us, np.uint64))
        object.__setattr__(self, "bs", _as_1d(self.bs, np.uint8))
        object.__setattr__(self, "sensor", _as_1d(self.sensor, np.uint8))
        object.__setattr__(self, "plane", _as_1d(self.plane, np.uint8))
        object.__setattr__(self, "angle", canonicalize_nans(_as_1d(self.angle, np.float64)))
        n = len(self.timestamps_us)
        for name in ("bs", "sensor", "plane", "angle"):
            if len(getattr(self, name)) != n:
                raise ValueError(f"sweep field {name} length mismatch")

    def __len__(self):
        return len(self.timestamps_us)

    def __eq__(self, other):
        return isinstance(other, SweepBlock) and _fields_equal(self, other)

    @staticmethod
    def empty() -> "SweepBlock":
        return SweepBlock(np.empty(0, np.uint64), np.empty(0, np.uint8),
                          np.empty(0, np.uint8), np.empty(0, np.uint8),
                          np.empty(0, np.float64))


@dataclass(frozen=True)
class EstimateBlock:
    """Position-estimate events, one xyz triple each."""

    timestamps_us: np.ndarray
    xyz: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "timestamps_us", _as_1d(self.timestamps_us, np.uint64))
        object.__setattr__(self, "xyz", canonicalize_nans(_as_2d(self.xyz, np.float64, 3)))
        if len(self.xyz) != len(self.timestamps_us):
            raise ValueError("estimate xyz length mismatch")

    def __len__(self):
        return len(self.timestamps_us)

    def __eq__(self, other):
        return isinstance(other, EstimateBlock) and _fields_equal(self, other)

    @staticmethod
    def empty() -> "EstimateBlock":
        return EstimateBlock(np.empty(0, np.uint64), np.empty((0, 3), np.float64))


@dataclass(frozen=True)
class ImuBlock:
    """IMU events: accel xyz then gyro xyz, single precision."""

    timestamps_us: np.ndarray
    samples: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "timestamps_us", _as_1d(self.timestamps_us, np.uint64))
        object.__setattr__(self, "samples", canonicalize_nans(_as_2d(self.samples, np.float32, 6)))
        if len(self.samples) != len(self.timestamps_us):
            raise ValueError("imu samples length mismatch")

    def __len__(self):
        return len(self.timestamps_us)

    def __eq__(self, other):
        return isinstance(other, ImuBlock) and _fields_equal(self, other)

    @staticmethod
    def empty() -> "ImuBlock":
        return ImuBlock(np.empty(0, np.uint64), np.empty((0, 6), np.float32))


@dataclass(frozen=True)
class LedBlock:
    """IR-LED sync markers; ``on`` is 1 at turn-on, 0 at turn-off."""

    timestamps_us: np.ndarray
    on: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "timestamps_us", _as_1d(self.timestamps_us, np.uint64))
        object.__setattr__(self, "on", _as_1d(self.on, np.uint8))
        if len(self.on) != len(self.timestamps_us):
            raise ValueError("led on length mismatch")

    def __len__(self):
        return len(self.timestamps_us)

    def __eq__(self, other):
        return isinstance(other, LedBlock) and _fields_equal(self, other)

    @staticmethod
    def empty() -> "LedBlock":
        return LedBlock(np.empty(0, np.uint64), np.empty(0, np.uint8))


@dataclass(frozen=True)
class CfEventLog:
    """All Crazyflie events of one session, grouped by record type.

    On disk the four groups interleave into one stream ordered by timestamp;
    timestamps must therefore be unique across the whole log.
    """

    sweeps: SweepBlock = field(default_factory=SweepBlock.empty)
    estimates: EstimateBlock = field(default_factory=EstimateBlock.empty)
    imu: ImuBlock = field(default_factory=ImuBlock.empty)
    led: LedBlock = field(default_factory=LedBlock.empty)

    def __len__(self):
        return len(self.sweeps) + len(self.estimates) + len(self.imu) + len(self.led)

    def merged_timestamps(self) -> np.ndarray:
        """All timestamps in file order (sorted ascending)."""
        merged = np.concatenate([
            self.sweeps.timestamps_us, self.estimates.timestamps_us,
            self.imu.timestamps_us, self.led.timestamps_us,
        ])
        return np.sort(merged, kind="stable")

    def validate(self):
        """Raise ValueError unless timestamps strictly increase in file order."""
        merged = self.merged_timestamps()
        if len(merged) > 1 and not (np.diff(merged.astype(np.int64)) > 0).all():
            raise ValueError("event timestamps are not strictly increasing")

    def __eq__(self, other):
        if not isinstance(other, CfEventLog):
            return NotImplemented
        return (self.sweeps == other.sweeps and self.estimates == other.estimates
                and self.imu == other.imu and self.led == other.led)


@dataclass(frozen=True)
class MocapSeries:
    """Motion-capture samples on the mocap clock; NaN rows mark occlusion."""

    rate: float
    start: float
    timestamps: np.ndarray
    positions: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "rate", float(self.rate))
        object.__setattr__(self, "start", float(self.start))
        object.__setattr__(self, "timestamps", _as_1d(self.timestamps, np.float64))
        object.__setattr__(self, "positions", canonicalize_nans(_as_2d(self.positions, np.float64, 3)))
        if len(self.positions) != len(self.timestamps):
            raise ValueError("mocap positions length mismatch")
        if self.rate <= 0:
            raise ValueError("mocap rate must be positive")

    def __len__(self):
        return len(self.timestamps)

    def validate(self, tol: float = 1e-9):
        """Raise ValueError unless timestamps sit on the header's rate grid."""
        grid = self.start + np.arange(len(self.timestamps)) / self.rate
        if len(self.timestamps) and np.abs(self.timestamps - grid).max() > tol:
            raise ValueError("mocap timestamps deviate from the rate grid")

    def valid_mask(self) -> np.ndarray:
        return ~np.isnan(self.positions).any(axis=1)

    def __eq__(self, other):
        if not isinstance(other, MocapSeries):
            return NotImplemented
        return (_bits(np.float64(self.rate)) == _bits(np.float64(other.rate))
                and _bits(np.float64(self.start)) == _bits(np.float64(other.start))
                and _fields_equal(self, other))

    @staticmethod
    def empty(rate: float = 300.0, start: float = 0.0) -> "MocapSeries":
        return MocapSeries(rate, start, np.empty(0, np.float64), np.empty((0, 3), np.float64))


@dataclass(frozen=True)
class TruthTrajectory:
    """Dense ground-truth samples (oracle use only, never an estimator input)."""

    timestamps: np.ndarray
    positions: np.ndarray
    velocities: np.ndarray
    quaternions: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "timestamps", _as_1d(self.timestamps, np.float64))
        object.__setattr__(self, "positions", canonicalize_nans(_as_2d(self.positions, np.float64, 3)))
        object.__setattr__(self, "velocities", canonicalize_nans(_as_2d(self.velocities, np.float64, 3)))
        object.__setattr__(self, "quaternions", canonicalize_nans(_as_2d(self.quaternions, np.float64, 4)))
        n = len(self.timestamps)
        for name in ("positions", "velocities", "quaternions"):
            if len(getattr(self, name)) != n:
                raise ValueError(f"truth field {name} length mismatch")

    def __len__(self):
        return len(self.timestamps)

    def __eq__(self, other):
        return isinstance(other, TruthTrajectory) and _fields_equal(self, other)

    @staticmethod
    def empty() -> "TruthTrajectory":
        return TruthTrajectory(np.empty(0, np.float64), np.empty((0, 3), np.float64),
                               np.empty((0, 3), np.float64), np.empty((0, 4), np.float64))


@dataclass(frozen=True)
class SessionBundle:
    """One recording session: CF log + mocap series (+ optional extras)."""

    cf: CfEventLog
    mocap: MocapSeries
    truth: TruthTrajectory | None = None
    estimates: CfEventLog | None = None

    def __eq__(self, other):
        if not isinstance(other, SessionBundle):
            return NotImplemented
        return (self.cf == other.cf and self.mocap == other.mocap
                and self.truth == other.truth and self.estimates == other.estimates)


def _bits(value) -> bytes:
    return np.asarray(value).tobytes()


def _fields_equal(a, b) -> bool:
    """Bitwise comparison of all ndarray fields of two dataclass instances."""
    for name, value in vars(a).items():
        if isinstance(value, np.ndarray):
            other = getattr(b, name)
            if value.shape != other.shape or value.tobytes() != other.tobytes():
                return False
    return True
