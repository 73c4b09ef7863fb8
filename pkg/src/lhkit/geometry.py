"""Base-station and sensor-deck geometry with the sweep-angle forward/inverse models.

Coordinate conventions
----------------------
A base station sits at ``t_b`` with orientation ``R_b`` (columns are the
station axes in the global frame); its forward axis is +x in its own frame.
Each of the two sweep planes carries a tilt angle and a drum rotation; a point
is expressed in a plane's frame as ``R_d @ R_b.T @ (p - t_b)``.

In the plane frame the sweep angle of a point (x, y, z) is

    alpha = atan2(y, x) + asin(z * tan(tilt) / hypot(x, y))

and the sweep plane at angle ``alpha`` is the plane through the origin with
unit normal ``R_z(alpha) @ (0, cos(tilt), sin(tilt))``.  The two
parameterizations are mutually consistent: the forward model's level set at
``alpha`` is exactly that plane.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateRay, DomainError

PLANE_FIRST = 1
PLANE_SECOND = 2

# Drum rotation of generation-1 hardware's second (vertical) sweep drum.
LH1_SECOND_DRUM = np.array([[1.0, 0.0, 0.0], [0.0, 0.0, 1.0], [0.0, -1.0, 0.0]])

LH2_TILT = np.pi / 6

# Receiver offsets on the 4-sensor deck, body frame, meters.  Mean is the
# deck's geometric center, which is the tracked point.
DECK_SENSOR_OFFSETS = np.array(
    [
        [0.015, 0.015, 0.0],
        [0.015, -0.015, 0.0],
        [-0.015, 0.015, 0.0],
        [-0.015, -0.015, 0.0],
    ]
)

# Sensors behind a station or outside this azimuth from its forward axis are
# out of view (half-angle of the usable horizontal field of view).
DEFAULT_ALPHA_MAX = 1.2

_ORTHO_TOL = 1e-9
_PARALLEL_TOL = 1e-12


def _check_rotation(r: np.ndarray, name: str) -> np.ndarray:
    r = np.asarray(r, dtype=float)
    if r.shape != (3, 3):
        raise ValueError(f"{name} must be 3x3")
    if np.linalg.norm(r.T @ r - np.eye(3)) >= _ORTHO_TOL:
        raise ValueError(f"{name} is not orthonormal")
    if np.linalg.det(r) < 0:
        raise ValueError(f"{name} has determinant -1")
    return r


@dataclass(frozen=True)
class SweepPlane:
    """One rotating light plane: tilt angle and drum rotation."""

    tilt: float
    drum_rotation: np.ndarray

    def __post_init__(self):
        object.__setattr__(
            self, "drum_rotation", _check_rotation(self.drum_rotation, "drum_rotation")
        )


@dataclass(frozen=True)
class BaseStation:
    """Pose and per-plane sweep geometry of one base station."""

    id: int
    version: int  # 1 or 2
    rotation: np.ndarray  # R_b, station axes in global frame
    translation: np.ndarray  # t_b, meters
    planes: tuple[SweepPlane, SweepPlane] = field(default=None)

    def __post_init__(self):
        if self.version not in (1, 2):
            raise ValueError("version must be 1 or 2")
        object.__setattr__(self, "rotation", _check_rotation(self.rotation, "rotation"))
        object.__setattr__(
            self, "translation", np.asarray(self.translation, dtype=float).reshape(3)
        )
        if self.planes is None:
            object.__setattr__(self, "planes", _default_planes(self.version))
        if len(self.planes) != 2:
            raise ValueError("a base station has exactly 2 sweep planes")

    def to_station_frame(self, p_global: np.ndarray) -> np.ndarray:
        """Express global points in this station's frame."""
        p = np.asarray(p_global, dtype=float)
        return (p - self.translation) @ self.rotation

    def plane_frame(self, p_global: np.ndarray, plane_index: int) -> np.ndarray:
        """Express global points in one sweep plane's rotated frame."""
        plane = self.planes[plane_index - 1]
        return self.to_station_frame(p_global) @ plane.drum_rotation.T


def _default_planes(version: int) -> tuple[SweepPlane, SweepPlane]:
    if version == 1:
        return (
            SweepPlane(0.0, np.eye(3)),
            SweepPlane(0.0, LH1_SECOND_DRUM),
        )
    return (
        SweepPlane(-LH2_TILT, np.eye(3)),
        SweepPlane(LH2_TILT, np.eye(3)),
    )


def make_base_station(
    station_id: int, version: int, rotation: np.ndarray, translation: np.ndarray
) -> BaseStation:
    """Base station of the given hardware generation with its standard planes."""
    return BaseStation(station_id, version, rotation, translation)


@dataclass(frozen=True)
class SensorDeck:
    """Receiver board: 4 sensor offsets in the body frame plus a body pose."""

    sensor_offsets: np.ndarray = field(
        default_factory=lambda: DECK_SENSOR_OFFSETS.copy()
    )
    body_rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    body_position: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        offsets = np.asarray(self.sensor_offsets, dtype=float)
        if offsets.shape != (4, 3):
            raise ValueError("deck must carry exactly 4 sensors")
        if np.linalg.norm(offsets.mean(axis=0)) >= 1e-9:
            raise ValueError("sensor offsets must be centered on the body origin")
        object.__setattr__(self, "sensor_offsets", offsets)
        object.__setattr__(
            self, "body_rotation", _check_rotation(self.body_rotation, "body_rotation")
        )
        object.__setattr__(
            self, "body_position", np.asarray(self.body_position, dtype=float).reshape(3)
        )

    def sensor_positions(self) -> np.ndarray:
        """Global positions of the 4 sensors, shape (4, 3)."""
        return self.body_position + self.sensor_offsets @ self.body_rotation.T


@dataclass(frozen=True)
class SweepAngle:
    """One measured sweep angle for (station, sensor, plane)."""

    base_station_id: int
    sensor_index: int
    plane_index: int
    angle: float
    timestamp_us: int

    def __post_init__(self):
        if self.sensor_index not in (0, 1, 2, 3):
            raise ValueError("sensor_index must be 0..3")
        if self.plane_index not in (PLANE_FIRST, PLANE_SECOND):
            raise ValueError("plane_index must be 1 or 2")
        if not (-np.pi < self.angle <= np.pi):
            raise ValueError("angle must lie in (-pi, pi]")


@dataclass(frozen=True)
class Ray:
    """Half-line in the global frame."""

    origin: np.ndarray
    direction: np.ndarray  # unit norm

    def point_distance(self, p: np.ndarray) -> float:
        w = np.asarray(p, dtype=float) - self.origin
        return float(np.linalg.norm(w - (w @ self.direction) * self.direction))


def wrap_angle(angle):
    """Wrap angle(s) to (-pi, pi]."""
    a = np.asarray(angle, dtype=float)
    wrapped = np.mod(a + np.pi, 2.0 * np.pi)
    wrapped = np.where(wrapped <= 0.0, wrapped + 2.0 * np.pi, wrapped) - np.pi
    if np.ndim(angle) == 0:
        return float(wrapped)
    return wrapped


def sweep_angle_forward(pos_plane_frame: np.ndarray, plane: SweepPlane) -> float:
    """Sweep angle of a point given in the plane's rotated station frame.

    Raises DomainError when the point lies on the drum axis or outside the
    asin domain (too steep for the plane's tilt to ever cross it).
    """
    alpha, ok = sweep_angles_batch(
        np.asarray(pos_plane_frame, dtype=float).reshape(1, 3), plane.tilt
    )
    if not ok[0]:
        raise DomainError(
            "point is outside the sweep model domain "
            f"(plane-frame position {np.asarray(pos_plane_frame, float)})"
        )
    return float(alpha[0])


def sweep_angles_batch(pos_plane_frame: np.ndarray, tilt: float):
    """Vectorized forward model.

    Returns (angles wrapped to (-pi, pi], validity mask).  Invalid entries
    (drum-axis or asin-domain violations) hold NaN.
    """
    p = np.asarray(pos_plane_frame, dtype=float).reshape(-1, 3)
    x, y, z = p[:, 0], p[:, 1], p[:, 2]
    r2 = x * x + y * y
    r = np.sqrt(r2)
    zt = z * np.tan(tilt)
    ok = (r > 0.0) & (np.abs(zt) <= r)
    with np.errstate(invalid="ignore", divide="ignore"):
        arg = np.where(ok, zt / np.where(r > 0.0, r, 1.0), 0.0)
        alpha = np.arctan2(y, x) + np.arcsin(arg)
    alpha = wrap_angle(alpha)
    alpha = np.where(ok, alpha, np.nan)
    return alpha, ok


def sweep_angle_global(p_global: np.ndarray, bs: BaseStation, plane_index: int) -> float:
    """Sweep angle of a global-frame point for one of a station's planes."""
    plane = bs.planes[plane_index - 1]
    return sweep_angle_forward(bs.plane_frame(p_global, plane_index), plane)


def plane_normal(plane: SweepPlane, alpha: float) -> np.ndarray:
    """Unit normal of the sweep plane at angle ``alpha``, in the station frame.

    The tilt-only normal (0, cos t, sin t) is rotated by ``alpha`` about the
    drum axis, then mapped back through the drum rotation.
    """
    ca, sa = np.cos(alpha), np.sin(alpha)
    ct, st = np.cos(plane.tilt), np.sin(plane.tilt)
    n_plane = np.array([-sa * ct, ca * ct, st])
    return plane.drum_rotation.T @ n_plane


def ray_from_sweep_pair(bs: BaseStation, alpha_1: float, alpha_2: float) -> Ray:
    """Ray through the station along the intersection of its two sweep planes.

    The direction sign is fixed so the station-frame forward component is
    positive.  Raises DegenerateRay when the plane normals are parallel.
    """
    n1 = plane_normal(bs.planes[0], alpha_1)
    n2 = plane_normal(bs.planes[1], alpha_2)
    d = np.cross(n1, n2)
    norm = np.linalg.norm(d)
    if norm <= _PARALLEL_TOL:
        raise DegenerateRay(
            f"sweep planes at angles ({alpha_1}, {alpha_2}) are parallel"
        )
    d = d / norm
    if d[0] < 0.0:
        d = -d
    return Ray(origin=bs.translation.copy(), direction=bs.rotation @ d)


def rays_from_sweep_pairs(bs: BaseStation, alpha_1: np.ndarray, alpha_2: np.ndarray):
    """Vectorized ray construction for one station.

    Returns (directions (n,3) in the global frame, validity mask).  The origin
    of every ray is the station translation.
    """
    a1 = np.asarray(alpha_1, dtype=float).reshape(-1)
    a2 = np.asarray(alpha_2, dtype=float).reshape(-1)
    p1, p2 = bs.planes
    n1 = np.stack(
        [
            -np.sin(a1) * np.cos(p1.tilt),
            np.cos(a1) * np.cos(p1.tilt),
            np.full_like(a1, np.sin(p1.tilt)),
        ],
        axis=1,
    ) @ p1.drum_rotation
    n2 = np.stack(
        [
            -np.sin(a2) * np.cos(p2.tilt),
            np.cos(a2) * np.cos(p2.tilt),
            np.full_like(a2, np.sin(p2.tilt)),
        ],
        axis=1,
    ) @ p2.drum_rotation
    d = np.cross(n1, n2)
    norm = np.linalg.norm(d, axis=1)
    ok = norm > _PARALLEL_TOL
    d = d / np.where(ok, norm, 1.0)[:, None]
    d = np.where(d[:, :1] < 0.0, -d, d)
    return d @ bs.rotation.T, ok


def in_view(bs: BaseStation, p_global: np.ndarray, alpha_max: float = DEFAULT_ALPHA_MAX):
    """Field-of-view predicate for global-frame point(s).

    A point is visible when it lies at least 0.1 m in front of the station and
    both planes' sweep angles exist and stay within ``alpha_max`` of the
    forward axis.
    """
    p = np.asarray(p_global, dtype=float).reshape(-1, 3)
    scalar = np.ndim(p_global) == 1
    visible = bs.to_station_frame(p)[:, 0] > 0.1
    for plane_index in (1, 2):
        plane = bs.planes[plane_index - 1]
        alpha, ok = sweep_angles_batch(
            bs.to_station_frame(p) @ plane.drum_rotation.T, plane.tilt
        )
        with np.errstate(invalid="ignore"):
            visible &= ok & (np.abs(alpha) <= alpha_max)
    return bool(visible[0]) if scalar else visible
