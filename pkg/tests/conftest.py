import numpy as np
import pytest

from lhkit import simulator
from lhkit.config import ScenarioConfig
from lhkit.geometry import BaseStation


@pytest.fixture(scope="session")
def stations_lh2():
    return simulator.stations_from_config(
        ScenarioConfig(scenario="stationary", duration_s=2.0, rng_seed=0))


@pytest.fixture(scope="session")
def stations_lh1():
    return simulator.stations_from_config(
        ScenarioConfig(scenario="stationary", duration_s=2.0, rng_seed=0,
                       lh_version=1))


@pytest.fixture(scope="session")
def still_session():
    """Noiseless stationary 10 s session plus its config."""
    cfg = ScenarioConfig(scenario="stationary", duration_s=10.0, rng_seed=7)
    return simulator.synthesize_session(cfg), cfg


@pytest.fixture(scope="session")
def sway_session():
    """External-motion session with clock offset, drift, and latency."""
    cfg = ScenarioConfig(
        scenario="external_motion", duration_s=30.0, rng_seed=11,
        sigma_alpha_rad=1e-4, clock_offset_s=3.2, clock_drift_ppm=80.0,
        mocap_latency_s=0.02,
        mocap_rotation_quat=(np.cos(0.4), 0.0, 0.0, np.sin(0.4)),
        mocap_translation=(0.3, -0.2, 0.05),
    )
    return simulator.synthesize_session(cfg), cfg


def random_in_view_points(rng, station: BaseStation, n: int) -> np.ndarray:
    """Global points inside the station's field of view at 1-4 m range."""
    azim = rng.uniform(-0.9, 0.9, n)
    elev = rng.uniform(-0.9, 0.9, n)
    r = rng.uniform(1.0, 4.0, n)
    local = np.stack([
        r * np.cos(azim) * np.cos(elev),
        r * np.sin(azim) * np.cos(elev),
        r * np.sin(elev),
    ], axis=1)
    return local @ station.rotation.T + station.translation
