"""Scenario configuration: a flat key=value text format.

Lines are ``key = value``; ``#`` starts a comment; blank lines are ignored.
Vector values are comma-separated numbers.  Unknown keys are rejected so a
typo cannot silently fall back to a default.  The full key reference lives in
the README.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from .errors import ConfigError

SCENARIOS = ("stationary", "flight", "external_motion")


def _vec(value, width):
    out = np.asarray(value, dtype=float).reshape(-1)
    if len(out) != width:
        raise ConfigError(f"expected {width} comma-separated numbers, got {len(out)}")
    return out


@dataclass
class ScenarioConfig:
    """Everything the simulator needs to produce one session."""

    scenario: str
    duration_s: float
    rng_seed: int
    lh_version: int = 2
    mocap_rate_hz: float = 300.0
    epoch_rate_hz: float = 30.0
    imu_rate_hz: float = 100.0
    sigma_alpha_rad: float = 0.0
    dropout_rate: float = 0.0
    interference_period_s: float = 0.0
    interference_window_s: float = 0.1
    clock_offset_s: float = 0.0
    clock_drift_ppm: float = 0.0
    mocap_latency_s: float = 0.0
    volume_center: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.0, 1.0]))
    volume_side_m: float = 1.5
    bs1_position: np.ndarray = field(default_factory=lambda: np.array([-2.5, -2.0, 2.2]))
    bs2_position: np.ndarray = field(default_factory=lambda: np.array([2.5, 2.0, 2.4]))
    mocap_rotation_quat: np.ndarray = field(default_factory=lambda: np.array([1.0, 0.0, 0.0, 0.0]))
    mocap_translation: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.0, 0.0]))
    mocap_gap_count: int = 0
    mocap_gap_duration_s: float = 0.2
    visibility_margin_s: float = 0.5
    max_speed_mps: float = 0.5

    def __post_init__(self):
        self.scenario = str(self.scenario).strip().lower()
        self.volume_center = _vec(self.volume_center, 3)
        self.bs1_position = _vec(self.bs1_position, 3)
        self.bs2_position = _vec(self.bs2_position, 3)
        self.mocap_rotation_quat = _vec(self.mocap_rotation_quat, 4)
        self.mocap_translation = _vec(self.mocap_translation, 3)
        self.validate()

    def validate(self):
        if self.scenario not in SCENARIOS:
            raise ConfigError(
                f"scenario must be one of {SCENARIOS}, got {self.scenario!r}"
            )
        if not self.duration_s > 0:
            raise ConfigError("duration_s must be positive")
        if self.lh_version not in (1, 2):
            raise ConfigError("lh_version must be 1 or 2")
        for key in ("mocap_rate_hz", "epoch_rate_hz", "imu_rate_hz"):
            if not getattr(self, key) > 0:
                raise ConfigError(f"{key} must be positive")
        if not 0.0 <= self.dropout_rate <= 1.0:
            raise ConfigError("dropout_rate must lie in [0, 1]")
        if abs(self.clock_drift_ppm) > 5000:
            raise ConfigError("clock_drift_ppm must lie within +/-5000")
        if self.clock_offset_s < 0:
            raise ConfigError("clock_offset_s must be non-negative")
        if self.interference_period_s < 0 or self.interference_window_s < 0:
            raise ConfigError("interference settings must be non-negative")
        if self.mocap_gap_count < 0 or self.mocap_gap_duration_s < 0:
            raise ConfigError("mocap gap settings must be non-negative")
        if self.volume_side_m <= 0:
            raise ConfigError("volume_side_m must be positive")
        if not self.max_speed_mps > 0:
            raise ConfigError("max_speed_mps must be positive")
        if abs(np.linalg.norm(self.mocap_rotation_quat) - 1.0) > 1e-6:
            raise ConfigError("mocap_rotation_quat must be unit length")
        if self.duration_s <= 2 * self.visibility_margin_s + 0.1:
            raise ConfigError(
                "duration_s must exceed twice visibility_margin_s plus 0.1 s"
            )

    def to_text(self) -> str:
        lines = []
        for f in fields(self):
            value = getattr(self, f.name)
            if isinstance(value, np.ndarray):
                rendered = ",".join(repr(float(v)) for v in value)
            elif isinstance(value, float):
                rendered = repr(value)
            else:
                rendered = str(value)
            lines.append(f"{f.name} = {rendered}")
        return "\n".join(lines) + "\n"


_REQUIRED = ("scenario", "duration_s", "rng_seed")

_INT_KEYS = {"rng_seed", "lh_version", "mocap_gap_count"}
_STR_KEYS = {"scenario"}
_VEC_KEYS = {"volume_center", "bs1_position", "bs2_position",
             "mocap_rotation_quat", "mocap_translation"}
_ALL_KEYS = {f.name for f in fields(ScenarioConfig)}


def parse_config(text: str) -> ScenarioConfig:
    """Parse key=value text into a validated ScenarioConfig."""
    raw = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigError(f"line {lineno}: expected key = value, got {line!r}")
        key, _, value = stripped.partition("=")
        key = key.strip()
        value = value.strip()
        if key not in _ALL_KEYS:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        if key in raw:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        raw[key] = (lineno, value)
    for key in _REQUIRED:
        if key not in raw:
            raise ConfigError(f"missing required key {key!r}")
    kwargs = {}
    for key, (lineno, value) in raw.items():
        try:
            if key in _STR_KEYS:
                kwargs[key] = value
            elif key in _VEC_KEYS:
                kwargs[key] = [float(part) for part in value.split(",")]
            elif key in _INT_KEYS:
                kwargs[key] = int(value)
            else:
                kwargs[key] = float(value)
        except ValueError as exc:
            raise ConfigError(f"line {lineno}: bad value for {key!r}: {value!r}") from exc
    return ScenarioConfig(**kwargs)


def load_config(path) -> ScenarioConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    return parse_config(path.read_text())
