import dataclasses

import numpy as np
import pytest

from lhkit import alignment, crossing_beam, session, simulator
from lhkit.alignment import RigidTransform
from lhkit.errors import (
    DegenerateGeometry,
    InsufficientOverlap,
    InvalidAnchors,
)
from lhkit.rotations import quat_to_matrix


def _with_estimates(bundle, stations):
    stream = crossing_beam.estimate_stream(bundle.cf.sweeps, stations)
    est = session.CfEventLog(estimates=session.EstimateBlock(
        timestamps_us=stream.timestamps_us, xyz=stream.positions))
    return dataclasses.replace(bundle, estimates=est)


def _random_rotation(rng):
    q = rng.normal(size=4)
    q /= np.linalg.norm(q)
    return quat_to_matrix(q)


def test_rescale_clock_linear():
    times = np.array([10.0, 12.5, 15.0])
    out = alignment.rescale_clock(times, 10.0, 15.0, 0.0, 10.0)
    np.testing.assert_allclose(out, [0.0, 5.0, 10.0], atol=1e-12)
    with pytest.raises(InvalidAnchors):
        alignment.rescale_clock(times, 5.0, 5.0, 0.0, 1.0)
    with pytest.raises(InvalidAnchors):
        alignment.rescale_clock(times, 5.0, 6.0, 1.0, 1.0)


def _series(t, p, rate=10.0):
    return session.MocapSeries(rate, 0.0, np.asarray(t, float),
                               np.asarray(p, float))


def test_interpolate_exact_and_linear():
    t = np.arange(5) / 10.0
    p = np.arange(15).reshape(5, 3).astype(float)
    s = _series(t, p)
    out = alignment.interpolate_mocap([0.2, 0.25], s)
    np.testing.assert_allclose(out[0], p[2], atol=0)
    np.testing.assert_allclose(out[1], (p[2] + p[3]) / 2, atol=1e-12)


def test_interpolate_out_of_range_and_nan_bracket():
    t = np.arange(5) / 10.0
    p = np.ones((5, 3))
    p[2] = np.nan
    s = _series(t, p)
    out = alignment.interpolate_mocap([-0.05, 0.45, 0.15, 0.35], s)
    assert np.isnan(out[0]).all()  # before first sample
    assert np.isnan(out[1]).all()  # after last sample
    assert np.isnan(out[2]).all()  # NaN bracket sample
    np.testing.assert_allclose(out[3], [1, 1, 1])


def test_interpolate_gap_too_wide():
    # missing samples stretch the bracket beyond twice the period
    t = np.array([0.0, 0.1, 0.5, 0.6])
    p = np.ones((4, 3))
    s = _series(t, p)
    out = alignment.interpolate_mocap([0.3, 0.05], s)
    assert np.isnan(out[0]).all()
    np.testing.assert_allclose(out[1], [1, 1, 1])


def test_fit_rigid_transform_recovers_pose():
    rng = np.random.default_rng(17)
    for _ in range(20):
        r = _random_rotation(rng)
        t = rng.normal(size=3)
        a = rng.normal(size=(30, 3))
        b = a @ r.T + t
        est = alignment.fit_rigid_transform(a, b)
        np.testing.assert_allclose(est.rotation, r, atol=1e-9)
        np.testing.assert_allclose(est.translation, t, atol=1e-9)


def test_fit_rigid_transform_rejects_reflection():
    rng = np.random.default_rng(18)
    a = rng.normal(size=(50, 3))
    b = a.copy()
    b[:, 2] *= -1.0  # mirrored target
    est = alignment.fit_rigid_transform(a, b)
    assert np.linalg.det(est.rotation) == pytest.approx(1.0)


def test_fit_rigid_transform_degenerate():
    line = np.outer(np.linspace(0, 1, 10), [1.0, 2.0, 3.0])
    with pytest.raises(DegenerateGeometry):
        alignment.fit_rigid_transform(line, line)
    with pytest.raises(DegenerateGeometry):
        alignment.fit_rigid_transform(np.zeros((2, 3)), np.zeros((2, 3)))
    with pytest.raises(ValueError):
        alignment.fit_rigid_transform(np.zeros((3, 3)), np.zeros((4, 3)))
    bad = np.zeros((4, 3))
    bad[0, 0] = np.nan
    with pytest.raises(ValueError):
        alignment.fit_rigid_transform(bad, np.zeros((4, 3)))


def test_rigid_transform_validation():
    with pytest.raises(ValueError):
        RigidTransform(np.eye(3) * 2.0, np.zeros(3))
    ident = RigidTransform.identity()
    p = np.arange(6, dtype=float).reshape(2, 3)
    np.testing.assert_array_equal(ident.apply(p), p)


def test_argmin_tie_break():
    objective = np.zeros((3, 3))
    offsets = np.array([-0.01, 0.0, 0.01])
    assert alignment._argmin_with_ties(objective, offsets, offsets) == (1, 1)
    objective = np.ones((3, 3))
    objective[1, 2] = objective[2, 1] = 0.0  # equal cost, row index decides
    assert alignment._argmin_with_ties(objective, offsets, offsets) == (1, 2)


def test_align_recovers_transform_and_latency(sway_session, stations_lh2):
    bundle, cfg = sway_session
    bundle = _with_estimates(bundle, stations_lh2)
    aligned = alignment.align(bundle)
    r_true, t_true = simulator.mocap_transform(cfg)
    r_err = aligned.transform.rotation @ r_true.T
    angle_err = np.arccos(np.clip((np.trace(r_err) - 1) / 2, -1, 1))
    assert angle_err < 2e-3
    assert np.linalg.norm(aligned.transform.translation - t_true) < 5e-3
    # both offsets absorb the mocap latency, up to the fine grid step
    assert aligned.offsets[0] == pytest.approx(cfg.mocap_latency_s, abs=1.5e-3)
    assert aligned.offsets[1] == pytest.approx(cfg.mocap_latency_s, abs=1.5e-3)
    assert aligned.residual < 6e-3
    assert len(aligned) == len(bundle.estimates.estimates)
    valid = aligned.valid_mask()
    assert valid.any() and not valid.all()  # occluded rows stay NaN
    errs = np.linalg.norm(
        aligned.cf_positions[valid] - aligned.mocap_positions[valid], axis=1)
    assert np.median(errs) < 6e-3


def test_align_stationary_translation_fallback(still_session, stations_lh2):
    bundle, cfg = still_session
    aligned = alignment.align(_with_estimates(bundle, stations_lh2))
    # coincident points cannot fix a rotation; the fit degrades to identity
    np.testing.assert_allclose(aligned.transform.rotation, np.eye(3), atol=0)
    assert np.linalg.norm(aligned.transform.translation) < 1e-6
    assert abs(aligned.offsets[0]) < 1.5e-3
    assert abs(aligned.offsets[1]) < 1.5e-3
    assert aligned.residual < 1e-6


def test_align_requires_estimates(still_session):
    bundle, _ = still_session
    assert bundle.estimates is None
    with pytest.raises(InvalidAnchors):
        alignment.align(bundle)


def test_align_requires_led_markers(still_session, stations_lh2):
    bundle, _ = still_session
    bundle = _with_estimates(bundle, stations_lh2)
    no_led = dataclasses.replace(
        bundle, cf=dataclasses.replace(bundle.cf, led=session.LedBlock.empty()))
    with pytest.raises(InvalidAnchors):
        alignment.align(no_led)


def test_align_insufficient_overlap(still_session, stations_lh2):
    bundle, _ = still_session
    bundle = _with_estimates(bundle, stations_lh2)
    block = bundle.estimates.estimates
    few = session.CfEventLog(estimates=session.EstimateBlock(
        timestamps_us=block.timestamps_us[:3], xyz=block.xyz[:3]))
    with pytest.raises(InsufficientOverlap):
        alignment.align(dataclasses.replace(bundle, estimates=few))
