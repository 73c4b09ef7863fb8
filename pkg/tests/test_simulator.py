import numpy as np
import pytest

from lhkit import geometry, simulator
from lhkit.config import ScenarioConfig
from lhkit.geometry import DECK_SENSOR_OFFSETS


def _cfg(**kw):
    base = dict(scenario="stationary", duration_s=5.0, rng_seed=3)
    base.update(kw)
    return ScenarioConfig(**base)


def test_determinism():
    a = simulator.synthesize_session(_cfg(sigma_alpha_rad=1e-3, dropout_rate=0.2))
    b = simulator.synthesize_session(_cfg(sigma_alpha_rad=1e-3, dropout_rate=0.2))
    np.testing.assert_array_equal(a.cf.sweeps.timestamps_us, b.cf.sweeps.timestamps_us)
    np.testing.assert_array_equal(a.cf.sweeps.angle, b.cf.sweeps.angle)
    np.testing.assert_array_equal(a.cf.imu.samples, b.cf.imu.samples)
    np.testing.assert_array_equal(a.mocap.positions, b.mocap.positions)
    np.testing.assert_array_equal(a.truth.positions, b.truth.positions)


def test_seed_changes_output():
    a = simulator.synthesize_session(_cfg(rng_seed=1))
    b = simulator.synthesize_session(_cfg(rng_seed=2))
    assert not np.array_equal(a.truth.positions, b.truth.positions)


def test_event_counts_full_visibility(still_session):
    bundle, cfg = still_session
    # 2 stations x 2 planes x 4 sensors per epoch, no dropout, all in view
    n_epochs = int(cfg.duration_s * cfg.epoch_rate_hz)
    assert len(bundle.cf.sweeps.timestamps_us) == n_epochs * 16
    assert len(bundle.cf.imu.timestamps_us) == int(cfg.duration_s * cfg.imu_rate_hz)
    assert len(bundle.mocap.timestamps) == int(cfg.duration_s * cfg.mocap_rate_hz)
    assert len(bundle.truth.timestamps) == len(bundle.mocap.timestamps)


def test_timestamps_strictly_increase(still_session):
    bundle, _ = still_session
    merged = bundle.cf.merged_timestamps()
    assert np.all(np.diff(merged.astype(np.int64)) > 0)


def test_noiseless_angles_are_exact(still_session):
    bundle, cfg = still_session
    motion = simulator.build_motion(cfg)
    stations = simulator.stations_from_config(cfg)
    block = bundle.cf.sweeps
    t_true = simulator.unwarp_from_cf_us(block.timestamps_us, cfg)
    pos = motion.position(t_true) + np.einsum(
        "nij,nj->ni", motion.rotation(t_true),
        DECK_SENSOR_OFFSETS[block.sensor])
    expected = np.array([
        geometry.sweep_angle_global(p, stations[b], int(pl))
        for p, b, pl in zip(pos, block.bs, block.plane)
    ])
    np.testing.assert_array_equal(block.angle, expected)


def test_noise_is_applied_and_bounded():
    noisy = simulator.synthesize_session(_cfg(sigma_alpha_rad=1e-3))
    clean = simulator.synthesize_session(_cfg())
    diff = noisy.cf.sweeps.angle - clean.cf.sweeps.angle
    assert np.abs(diff).max() < 1e-2
    assert diff.std() == pytest.approx(1e-3, rel=0.1)
    assert diff.mean() == pytest.approx(0.0, abs=1e-4)
    assert np.all(noisy.cf.sweeps.angle > -np.pi)
    assert np.all(noisy.cf.sweeps.angle <= np.pi)


def test_clock_warp_round_trip():
    cfg = _cfg(clock_offset_s=12.5, clock_drift_ppm=300.0)
    t = np.linspace(0.0, 5.0, 1001)
    stamps = simulator.warp_to_cf_us(t, cfg)
    assert stamps[0] == 12_500_000
    back = simulator.unwarp_from_cf_us(stamps, cfg)
    np.testing.assert_allclose(back, t, atol=1e-6)
    assert np.all(np.diff(stamps.astype(np.int64)) >= 0)


def test_flight_speed_cap():
    cfg = _cfg(scenario="flight", duration_s=20.0, max_speed_mps=0.8)
    bundle = simulator.synthesize_session(cfg)
    speeds = np.linalg.norm(bundle.truth.velocities, axis=1)
    assert speeds.max() <= 0.8 + 1e-9
    assert speeds.max() > 0.1  # it actually moves


def test_flight_stays_in_volume():
    cfg = _cfg(scenario="flight", duration_s=20.0)
    bundle = simulator.synthesize_session(cfg)
    low = cfg.volume_center - cfg.volume_side_m / 2 - 1e-9
    high = cfg.volume_center + cfg.volume_side_m / 2 + 1e-9
    assert np.all(bundle.truth.positions >= low)
    assert np.all(bundle.truth.positions <= high)


def test_mocap_nan_structure():
    cfg = _cfg(duration_s=10.0, mocap_gap_count=2)
    bundle = simulator.synthesize_session(cfg)
    t_on, t_off = simulator.visibility_window(cfg)
    t = bundle.mocap.timestamps
    expected_valid = (t >= t_on) & (t <= t_off)
    for start, end in simulator.draw_gap_windows(cfg):
        expected_valid &= ~((t >= start) & (t < end))
    actual_valid = ~np.isnan(bundle.mocap.positions).any(axis=1)
    np.testing.assert_array_equal(actual_valid, expected_valid)
    assert not expected_valid.all() and expected_valid.any()


def test_mocap_transform_and_latency():
    cfg = _cfg(
        scenario="external_motion", duration_s=10.0, mocap_latency_s=0.05,
        mocap_rotation_quat=(np.cos(0.3), 0.0, np.sin(0.3), 0.0),
        mocap_translation=(1.0, -2.0, 0.5),
    )
    bundle = simulator.synthesize_session(cfg)
    motion = simulator.build_motion(cfg)
    r, tr = simulator.mocap_transform(cfg)
    t = bundle.mocap.timestamps
    valid = ~np.isnan(bundle.mocap.positions).any(axis=1)
    expected = motion.position(t[valid] - cfg.mocap_latency_s) @ r.T + tr
    np.testing.assert_allclose(bundle.mocap.positions[valid], expected,
                               atol=1e-12)


def test_dropout_removes_whole_station_epochs():
    cfg = _cfg(duration_s=10.0, dropout_rate=0.3)
    bundle = simulator.synthesize_session(cfg)
    n = len(bundle.cf.sweeps.timestamps_us)
    full = int(cfg.duration_s * cfg.epoch_rate_hz) * 16
    assert n < full
    assert n % 8 == 0  # a dropout removes one station's 8 events at once
    # binomial count: 300 epochs x 2 stations, p=0.7 kept
    kept_station_epochs = n // 8
    assert 0.6 * 600 < kept_station_epochs < 0.8 * 600


def test_interference_lh2_only():
    kw = dict(duration_s=10.0, interference_period_s=0.5,
              interference_window_s=0.1)
    lh2 = simulator.synthesize_session(_cfg(**kw))
    lh1 = simulator.synthesize_session(_cfg(lh_version=1, **kw))
    n_epochs = 300
    # LH1 ignores interference entirely
    assert len(lh1.cf.sweeps.timestamps_us) == n_epochs * 16
    # LH2 loses whole epochs whose start phase falls inside the window
    masked = np.mod(np.arange(n_epochs) / 30.0, 0.5) < 0.1
    assert len(lh2.cf.sweeps.timestamps_us) == (n_epochs - masked.sum()) * 16
    assert masked.sum() >= n_epochs / 5  # roughly a fifth of the epochs


def test_imu_stationary_reads_gravity(still_session):
    bundle, _ = still_session
    samples = bundle.cf.imu.samples
    # identical rows up to float32 rounding of the gravity constant
    np.testing.assert_allclose(
        samples[0], [0, 0, simulator.GRAVITY, 0, 0, 0], atol=1e-5)
    assert np.abs(samples - samples[0]).max() == 0


def test_led_markers_anchor_visibility():
    cfg = _cfg(duration_s=10.0)
    bundle = simulator.synthesize_session(cfg)
    t_on, t_off = simulator.visibility_window(cfg)
    led = bundle.cf.led
    assert led.on.tolist() == [1, 0]
    np.testing.assert_array_equal(
        led.timestamps_us, simulator.warp_to_cf_us([t_on, t_off], cfg))
    # anchors coincide with the first and last valid mocap samples
    valid = ~np.isnan(bundle.mocap.positions).any(axis=1)
    ts = bundle.mocap.timestamps[valid]
    assert ts[0] == pytest.approx(t_on, abs=1e-12)
    assert ts[-1] == pytest.approx(t_off, abs=1e-12)


def test_stations_from_config_aim_at_center():
    cfg = _cfg()
    stations = simulator.stations_from_config(cfg)
    assert [bs.id for bs in stations] == [0, 1]
    for bs, pos in zip(stations, (cfg.bs1_position, cfg.bs2_position)):
        np.testing.assert_array_equal(bs.translation, pos)
        r = bs.rotation
        np.testing.assert_allclose(r @ r.T, np.eye(3), atol=1e-12)
        assert np.linalg.det(r) == pytest.approx(1.0)
        local = bs.to_station_frame(cfg.volume_center)
        dist = np.linalg.norm(cfg.volume_center - pos)
        np.testing.assert_allclose(local, [dist, 0.0, 0.0], atol=1e-12)


def test_motion_is_deterministic_and_smooth():
    cfg = _cfg(scenario="external_motion", duration_s=10.0)
    m1 = simulator.build_motion(cfg)
    m2 = simulator.build_motion(cfg)
    t = np.linspace(0, 10, 501)
    np.testing.assert_array_equal(m1.position(t), m2.position(t))
    # finite-difference velocity agrees with the analytic one
    h = 1e-5
    fd = (m1.position(t + h) - m1.position(t - h)) / (2 * h)
    np.testing.assert_allclose(m1.velocity(t), fd, atol=1e-5)
