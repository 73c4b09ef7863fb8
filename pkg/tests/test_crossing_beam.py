import numpy as np
import pytest

from lhkit import crossing_beam, session
from lhkit.errors import IncompleteEpoch, ParallelRays
from lhkit.geometry import Ray, SweepAngle, sweep_angle_global


def _oracle_closest(o1, d1, o2, d2, iters=5000):
    """Coordinate descent on the clamped two-ray problem.

    Alternately projects each point onto the other ray and clamps at the
    origin; the objective is convex so this converges to the global optimum.
    """
    s = u = 0.0
    for _ in range(iters):
        p2 = o2 + u * d2
        s = max(0.0, (p2 - o1) @ d1 / (d1 @ d1))
        p1 = o1 + s * d1
        u = max(0.0, (p1 - o2) @ d2 / (d2 @ d2))
    return o1 + s * d1, o2 + u * d2


def test_closest_points_analytic():
    r1 = Ray(np.zeros(3), np.array([1.0, 0.0, 0.0]))
    r2 = Ray(np.array([0.5, 1.0, 0.0]), np.array([0.0, 0.0, 1.0]))
    p1, p2 = crossing_beam.closest_points(r1, r2)
    np.testing.assert_allclose(p1, [0.5, 0.0, 0.0], atol=1e-15)
    np.testing.assert_allclose(p2, [0.5, 1.0, 0.0], atol=1e-15)


def test_closest_points_matches_projection_oracle():
    rng = np.random.default_rng(21)
    checked = 0
    while checked < 200:
        o1, o2 = rng.normal(size=(2, 3)) * 2
        d1, d2 = rng.normal(size=(2, 3))
        d1 /= np.linalg.norm(d1)
        d2 /= np.linalg.norm(d2)
        if abs(d1 @ d2) > 0.99:  # oracle converges too slowly near parallel
            continue
        p1, p2 = crossing_beam.closest_points(Ray(o1, d1), Ray(o2, d2))
        q1, q2 = _oracle_closest(o1, d1, o2, d2)
        assert np.linalg.norm(p1 - q1) < 1e-6
        assert np.linalg.norm(p2 - q2) < 1e-6
        checked += 1


def test_closest_points_clamps_behind_origin():
    # rays pointing away from each other: optimum sits at both origins
    r1 = Ray(np.zeros(3), np.array([1.0, 0.0, 0.0]))
    r2 = Ray(np.array([-2.0, 1.0, 0.0]), np.array([-1.0, 0.0, 0.0]))
    with pytest.raises(ParallelRays):
        crossing_beam.closest_points(r1, r2)
    r2 = Ray(np.array([-2.0, 1.0, 0.0]), np.array([-0.8, 0.0, 0.6]))
    p1, p2 = crossing_beam.closest_points(r1, r2)
    np.testing.assert_allclose(p1, r1.origin, atol=1e-15)
    np.testing.assert_allclose(p2, r2.origin, atol=1e-15)


def test_closest_points_parallel_raises():
    d = np.array([0.6, 0.8, 0.0])
    with pytest.raises(ParallelRays):
        crossing_beam.closest_points(
            Ray(np.zeros(3), d), Ray(np.array([0.0, 0.0, 1.0]), d))


def _epoch_angles(stations, deck_positions, t0_us=0):
    angles = []
    for bs in stations:
        for sensor, pos in enumerate(deck_positions):
            for plane in (1, 2):
                angles.append(SweepAngle(
                    bs.id, sensor, plane,
                    sweep_angle_global(pos, bs, plane), t0_us))
    return angles


def test_solve_recovers_deck_center(stations_lh2):
    from lhkit.geometry import SensorDeck

    deck = SensorDeck(body_position=np.array([0.4, -0.2, 1.1]))
    angles = _epoch_angles(stations_lh2, deck.sensor_positions(), t0_us=500)
    result = crossing_beam.solve(*stations_lh2, angles)
    np.testing.assert_allclose(result.position, deck.body_position, atol=1e-9)
    assert result.delta_max < 1e-18
    assert result.timestamp_us == 500
    assert result.sensor_indices.tolist() == [0, 1, 2, 3]


def test_solve_lh1(stations_lh1):
    from lhkit.geometry import SensorDeck

    deck = SensorDeck(body_position=np.array([-0.3, 0.25, 0.9]))
    angles = _epoch_angles(stations_lh1, deck.sensor_positions())
    result = crossing_beam.solve(*stations_lh1, angles)
    np.testing.assert_allclose(result.position, deck.body_position, atol=1e-9)


def test_solve_incomplete_raises(stations_lh2):
    from lhkit.geometry import SensorDeck

    deck = SensorDeck(body_position=np.array([0.0, 0.0, 1.0]))
    angles = _epoch_angles(stations_lh2, deck.sensor_positions())
    with pytest.raises(IncompleteEpoch):
        crossing_beam.solve(*stations_lh2, angles[:-1])


def test_solve_delta_gate(stations_lh2):
    from lhkit.geometry import SensorDeck

    deck = SensorDeck(body_position=np.array([0.0, 0.0, 1.0]))
    angles = _epoch_angles(stations_lh2, deck.sensor_positions())
    # corrupt one angle of sensor 2 so its rays no longer meet
    bad = [i for i, a in enumerate(angles) if a.sensor_index == 2][0]
    a = angles[bad]
    angles[bad] = SweepAngle(a.base_station_id, a.sensor_index, a.plane_index,
                             a.angle + 0.02, a.timestamp_us)
    gated = crossing_beam.solve(*stations_lh2, angles, delta_gate=1e-6)
    assert 2 not in gated.sensor_indices
    assert len(gated.sensor_indices) == 3
    # an impossible gate leaves no sensors at all
    with pytest.raises(IncompleteEpoch):
        crossing_beam.solve(*stations_lh2, angles, delta_gate=-1.0)


def test_solve_first_occurrence_wins(stations_lh2):
    from lhkit.geometry import SensorDeck

    deck = SensorDeck(body_position=np.array([0.1, 0.3, 1.2]))
    angles = _epoch_angles(stations_lh2, deck.sensor_positions())
    dup = angles[0]
    angles.append(SweepAngle(dup.base_station_id, dup.sensor_index,
                             dup.plane_index, dup.angle + 0.5,
                             dup.timestamp_us))
    result = crossing_beam.solve(*stations_lh2, angles)
    np.testing.assert_allclose(result.position, deck.body_position, atol=1e-9)


def test_assemble_epochs_window():
    def ang(t):
        return SweepAngle(0, 0, 1, 0.0, t)

    epochs = crossing_beam.assemble_epochs(
        [ang(30000), ang(0), ang(5000), ang(10000), ang(10001)],
        window_us=10_000)
    stamps = [[a.timestamp_us for a in e] for e in epochs]
    assert stamps == [[0, 5000, 10000], [10001], [30000]]


def test_epoch_is_complete(stations_lh2):
    from lhkit.geometry import SensorDeck

    deck = SensorDeck(body_position=np.array([0.0, 0.0, 1.0]))
    angles = _epoch_angles(stations_lh2, deck.sensor_positions())
    ids = (stations_lh2[0].id, stations_lh2[1].id)
    assert crossing_beam.epoch_is_complete(angles, ids)
    assert not crossing_beam.epoch_is_complete(angles[:-1], ids)


def _as_block(angles):
    return session.SweepBlock(
        timestamps_us=np.array([a.timestamp_us for a in angles], np.uint64),
        bs=np.array([a.base_station_id for a in angles], np.uint8),
        sensor=np.array([a.sensor_index for a in angles], np.uint8),
        plane=np.array([a.plane_index for a in angles], np.uint8),
        angle=np.array([a.angle for a in angles]),
    )


def test_estimate_stream_matches_solve(still_session, stations_lh2):
    bundle, cfg = still_session
    block = bundle.cf.sweeps
    stream = crossing_beam.estimate_stream(block, stations_lh2)
    assert stream.n_complete <= stream.n_epochs
    assert len(stream.positions) <= stream.n_complete

    angles = [
        SweepAngle(int(block.bs[i]), int(block.sensor[i]),
                   int(block.plane[i]), float(block.angle[i]),
                   int(block.timestamps_us[i]))
        for i in range(len(block.timestamps_us))
    ]
    ids = (stations_lh2[0].id, stations_lh2[1].id)
    epochs = crossing_beam.assemble_epochs(angles)
    assert len(epochs) == stream.n_epochs
    complete = [e for e in epochs if crossing_beam.epoch_is_complete(e, ids)]
    assert len(complete) == stream.n_complete

    for k in (0, 1, len(stream.positions) // 2, len(stream.positions) - 1):
        ref = crossing_beam.solve(*stations_lh2, complete[k])
        np.testing.assert_allclose(stream.positions[k], ref.position,
                                   atol=1e-12)
        assert stream.delta_sq[k] == pytest.approx(ref.delta_max, abs=1e-18)
        assert int(stream.timestamps_us[k]) == ref.timestamp_us


def test_estimate_stream_empty(stations_lh2):
    stream = crossing_beam.estimate_stream(_as_block([]), stations_lh2)
    assert stream.n_epochs == 0 and stream.n_complete == 0
    assert stream.positions.shape == (0, 3)


def test_estimate_stream_skips_incomplete(stations_lh2):
    from lhkit.geometry import SensorDeck

    deck = SensorDeck(body_position=np.array([0.0, 0.0, 1.0]))
    full = _epoch_angles(stations_lh2, deck.sensor_positions(), t0_us=1000)
    partial = [
        SweepAngle(a.base_station_id, a.sensor_index, a.plane_index, a.angle,
                   2_000_000)
        for a in full[:-1]
    ]
    stream = crossing_beam.estimate_stream(_as_block(full + partial),
                                           stations_lh2)
    assert stream.n_epochs == 2
    assert stream.n_complete == 1
    np.testing.assert_allclose(stream.positions[0], deck.body_position,
                               atol=1e-9)
