import numpy as np
import pytest

from lhkit import ekf, session
from lhkit.errors import DomainError, MeasurementRejected
from lhkit.geometry import DECK_SENSOR_OFFSETS, SweepAngle, sweep_angle_global

from conftest import random_in_view_points


def _fd_gradient(p, bs, plane_index, h=1e-6):
    g = np.zeros(3)
    for k in range(3):
        dp = np.zeros(3)
        dp[k] = h
        g[k] = (sweep_angle_global(p + dp, bs, plane_index)
                - sweep_angle_global(p - dp, bs, plane_index)) / (2 * h)
    return g


@pytest.mark.parametrize("fixture", ["stations_lh1", "stations_lh2"])
def test_jacobian_matches_finite_differences(fixture, request):
    stations = request.getfixturevalue(fixture)
    rng = np.random.default_rng(31)
    for bs in stations:
        points = random_in_view_points(rng, bs, 100)
        for plane_index in (1, 2):
            for p in points:
                alpha, g = ekf.measurement_jacobian(p, bs, plane_index)
                assert alpha == pytest.approx(
                    sweep_angle_global(p, bs, plane_index), abs=1e-12)
                fd = _fd_gradient(p, bs, plane_index)
                assert np.linalg.norm(g - fd) < 1e-5 * max(
                    1.0, np.linalg.norm(fd))


def test_jacobian_domain_error(stations_lh2):
    bs = stations_lh2[0]
    with pytest.raises(DomainError):
        ekf.measurement_jacobian(bs.translation, bs, 1)


def test_predict_moves_mean_and_propagates_covariance():
    s0 = ekf.initial_state([1.0, 2.0, 3.0])  # P = diag(1, 1, 1, .25, .25, .25)
    s0 = ekf.EkfState(s0.position, np.array([0.5, 0.0, -0.25]), s0.covariance)
    dt, q = 2.0, 0.1
    s1 = ekf.predict(s0, dt, process_noise=q)
    np.testing.assert_allclose(s1.position, [2.0, 2.0, 2.5], atol=1e-15)
    np.testing.assert_allclose(s1.velocity, s0.velocity, atol=1e-15)
    # closed form for a diagonal prior
    assert s1.covariance[0, 0] == pytest.approx(
        1.0 + dt ** 2 * 0.25 + q * dt ** 3 / 3)
    assert s1.covariance[0, 3] == pytest.approx(dt * 0.25 + q * dt ** 2 / 2)
    assert s1.covariance[3, 3] == pytest.approx(0.25 + q * dt)
    np.testing.assert_allclose(s1.covariance, s1.covariance.T, atol=0)
    with pytest.raises(ValueError):
        ekf.predict(s0, -0.1)


def test_predict_accel_input():
    s0 = ekf.initial_state([0.0, 0.0, 0.0])
    s1 = ekf.predict(s0, 2.0, accel=np.array([1.0, 0.0, 0.0]))
    np.testing.assert_allclose(s1.position, [2.0, 0.0, 0.0], atol=1e-15)
    np.testing.assert_allclose(s1.velocity, [2.0, 0.0, 0.0], atol=1e-15)


def test_process_noise_scaling():
    # zero prior: after predict the covariance equals the noise matrix itself
    zero = ekf.EkfState(np.zeros(3), np.zeros(3), np.zeros((6, 6)))
    dt, q = 0.2, 0.7
    cov = ekf.predict(zero, dt, process_noise=q).covariance
    assert cov[0, 0] == pytest.approx(q * dt ** 3 / 3)
    assert cov[0, 3] == pytest.approx(q * dt ** 2 / 2)
    assert cov[3, 3] == pytest.approx(q * dt)
    assert cov[0, 1] == 0.0 and cov[0, 4] == 0.0


def test_update_pulls_toward_truth(stations_lh2):
    bs = stations_lh2[0]
    truth = np.array([0.3, -0.2, 1.1])
    guess = truth + np.array([0.05, -0.04, 0.06])
    state = ekf.initial_state(guess, position_var=0.01)
    err0 = np.linalg.norm(state.position - truth)
    for plane_index in (1, 2):
        angle = SweepAngle(bs.id, 0, plane_index,
                           sweep_angle_global(truth, bs, plane_index), 0)
        m = ekf.SweepMeasurement(angle, bs, np.zeros(3))
        state = ekf.update(state, m, sigma_alpha=1e-4)
    assert np.linalg.norm(state.position - truth) < err0
    cov = state.covariance
    np.testing.assert_allclose(cov, cov.T, atol=1e-15)
    assert np.linalg.eigvalsh(cov)[0] > 0


def test_update_gate_rejects_outlier(stations_lh2):
    bs = stations_lh2[0]
    truth = np.array([0.0, 0.0, 1.0])
    state = ekf.initial_state(truth, position_var=1e-4)
    alpha = sweep_angle_global(truth, bs, 1)
    bad = SweepAngle(bs.id, 0, 1, float(ekf.wrap_angle(alpha + 0.5)), 0)
    with pytest.raises(MeasurementRejected):
        ekf.update(state, ekf.SweepMeasurement(bad, bs, np.zeros(3)),
                   sigma_alpha=1e-3, gate_sigma=5.0)


def test_update_wraps_innovation(stations_lh2):
    # predicted angle sits near +pi, measurement near -pi: the raw difference
    # is a full turn, the wrapped one is tiny
    bs = stations_lh2[0]
    behind = bs.translation + bs.rotation @ np.array([-2.0, 0.005, 0.0])
    state = ekf.initial_state(behind, position_var=1e-4)
    alpha = sweep_angle_global(behind, bs, 1)
    assert abs(alpha) > 3.1
    shifted = float(ekf.wrap_angle(alpha + 0.003))
    assert np.sign(shifted) != np.sign(alpha)
    meas = SweepAngle(bs.id, 0, 1, shifted, 0)
    updated = ekf.update(state, ekf.SweepMeasurement(meas, bs, np.zeros(3)))
    assert np.linalg.norm(updated.position - behind) < 0.05


def test_update_uses_sensor_offset(stations_lh2):
    bs = stations_lh2[0]
    center = np.array([0.2, 0.1, 1.0])
    offset = DECK_SENSOR_OFFSETS[3]
    alpha = sweep_angle_global(center + offset, bs, 2)
    state = ekf.initial_state(center, position_var=1e-6)
    m = ekf.SweepMeasurement(SweepAngle(bs.id, 3, 2, alpha, 0), bs, offset)
    updated = ekf.update(state, m, sigma_alpha=1e-5)
    # consistent measurement: the state barely moves
    assert np.linalg.norm(updated.position - center) < 1e-6


def test_initial_state_covariance():
    s = ekf.initial_state([1, 2, 3], position_var=0.5, velocity_var=0.1)
    np.testing.assert_allclose(
        s.covariance, np.diag([0.5] * 3 + [0.1] * 3), atol=0)
    np.testing.assert_allclose(s.velocity, np.zeros(3))


def _stationary_events(stations, truth, duration_s, rate_hz=30.0):
    """Round-robin noiseless sweep events over all planes and sensors."""
    times, bs_idx, planes, sensors, alphas = [], [], [], [], []
    slot_dt = 1.0 / (rate_hz * 4)
    t = 0.0
    k = 0
    while t < duration_s:
        slot = k % 4
        bs = stations[slot // 2]
        plane = slot % 2 + 1
        sensor = k % 4
        pos = truth + DECK_SENSOR_OFFSETS[sensor]
        times.append(t)
        bs_idx.append(slot // 2)
        planes.append(plane)
        sensors.append(sensor)
        alphas.append(sweep_angle_global(pos, bs, plane))
        k += 1
        t += slot_dt
    return (np.array(times), np.array(bs_idx), np.array(planes),
            np.array(sensors), np.array(alphas))


def test_run_filter_converges_two_stations(stations_lh2):
    truth = np.array([0.1, -0.3, 1.2])
    times, bs_idx, planes, sensors, alphas = _stationary_events(
        stations_lh2, truth, 4.0)
    state0 = ekf.initial_state(truth + [0.3, -0.2, 0.4], position_var=1.0)
    positions, velocities, accepted, pos_var, final = ekf.run_filter(
        times, bs_idx, planes, sensors, alphas, stations_lh2,
        DECK_SENSOR_OFFSETS, None, state0, sigma_alpha=1e-4)
    assert accepted.all()
    errs = np.linalg.norm(positions - truth, axis=1)
    assert errs[times > 2.0].max() < 1e-3
    assert np.linalg.norm(final.position - truth) < 1e-6
    assert np.linalg.norm(final.velocity) < 1e-3
    assert pos_var.shape == times.shape


def test_estimate_stream_noiseless(still_session, stations_lh2):
    bundle, cfg = still_session
    truth = bundle.truth.positions[0]
    result = ekf.estimate_stream(bundle.cf.sweeps, stations_lh2)
    assert result.n_events == len(bundle.cf.sweeps.timestamps_us)
    assert result.n_accepted == result.n_events
    assert len(result.positions) > 0.9 * result.n_events
    t = result.timestamps_us.astype(float) * 1e-6
    errs = np.linalg.norm(result.positions - truth, axis=1)
    assert errs[t > 2.0].max() < 1e-6


def test_estimate_stream_goes_quiet_without_depth(still_session, stations_lh2):
    bundle, cfg = still_session
    block = bundle.cf.sweeps
    cut_us = 5_000_000
    keep = (block.timestamps_us < cut_us) | (block.bs == block.bs[0])
    trimmed = session.SweepBlock(
        timestamps_us=block.timestamps_us[keep], bs=block.bs[keep],
        sensor=block.sensor[keep], plane=block.plane[keep],
        angle=block.angle[keep])
    result = ekf.estimate_stream(trimmed, stations_lh2)
    # one-station depth is unobservable, so emission must stop soon after
    last_emitted_s = result.timestamps_us.max() * 1e-6
    assert 5.0 <= last_emitted_s < 7.0
    assert result.n_events == int(keep.sum())


def test_estimate_stream_explicit_seed(still_session, stations_lh2):
    bundle, cfg = still_session
    truth = bundle.truth.positions[0]
    state0 = ekf.initial_state(truth, position_var=1e-4)
    result = ekf.estimate_stream(bundle.cf.sweeps, stations_lh2, state0=state0)
    errs = np.linalg.norm(result.positions - truth, axis=1)
    assert errs.max() < 1e-3
