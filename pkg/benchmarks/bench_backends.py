#!/usr/bin/env python3
"""Time the numba kernels against their numpy twins on realistic workloads.

    python3 benchmarks/bench_backends.py [--repeat 5]

Each kernel gets one warm-up call per backend before timing, so numba's JIT
compilation stays out of the numbers.  Reported times are the best of the
repeats; speedup is numpy time over numba time.
"""

import argparse
import time

import numpy as np

from lhkit import _kernels_nb as nb
from lhkit import _kernels_np as npk
from lhkit import ekf, simulator
from lhkit.config import ScenarioConfig
from lhkit.geometry import DECK_SENSOR_OFFSETS, sweep_angles_batch


def _stations():
    cfg = ScenarioConfig(scenario="stationary", duration_s=2.0, rng_seed=0)
    return tuple(simulator.stations_from_config(cfg))


def _angle_tables(stations, targets):
    """Noiseless (n, 2, 2, 4) sweep-angle tables for the given targets."""
    n = len(targets)
    sensor_pos = (targets[:, None, :] + DECK_SENSOR_OFFSETS[None]).reshape(-1, 3)
    tables = np.empty((n, 2, 2, 4))
    for b, bs in enumerate(stations):
        for p, plane in enumerate(bs.planes):
            frame = (sensor_pos - bs.translation) @ bs.rotation @ plane.drum_rotation.T
            alpha, ok = sweep_angles_batch(frame, plane.tilt)
            assert ok.all()
            tables[:, b, p, :] = alpha.reshape(n, 4)
    return tables


def _workloads(rng):
    stations = _stations()
    params = ekf.pack_station_params(stations)
    center = np.array([0.0, 0.0, 1.0])

    positions = rng.normal(size=(500_000, 3)) * 2.0 + np.array([2.0, 0.0, 0.0])
    yield "sweep_angles", "500k points", (positions, np.tan(np.pi / 6))

    o1, o2 = rng.uniform(-3.0, 3.0, size=(2, 200_000, 3))
    d1, d2 = rng.normal(size=(2, 200_000, 3))
    d1 /= np.linalg.norm(d1, axis=1, keepdims=True)
    d2 /= np.linalg.norm(d2, axis=1, keepdims=True)
    yield "closest_points_batch", "200k pairs", (o1, d1, o2, d2)

    targets = center + rng.uniform(-0.4, 0.4, size=(9000, 3))
    yield "solve_epochs", "9k epochs", (_angle_tables(stations, targets), *params)

    n_epochs = 3000
    table = _angle_tables(stations, center[None])[0]
    combo = np.indices((2, 2, 4)).reshape(3, 16)
    times = (np.arange(n_epochs)[:, None] / 30.0 + np.arange(16) * 50e-6).ravel()
    bs_idx = np.tile(combo[0], n_epochs)
    plane_idx = np.tile(combo[1] + 1, n_epochs)
    sensor_idx = np.tile(combo[2], n_epochs)
    angles = np.tile(table[combo[0], combo[1], combo[2]], n_epochs)
    angles = angles + rng.normal(scale=1e-3, size=angles.size)
    body = np.ascontiguousarray(np.broadcast_to(np.eye(3), (len(times), 3, 3)))
    x0 = np.concatenate([center, np.zeros(3)])
    p0 = np.diag([1.0] * 3 + [0.25] * 3)
    yield "ekf_process", "48k events", (
        times, bs_idx, plane_idx, sensor_idx, angles, *params,
        np.ascontiguousarray(DECK_SENSOR_OFFSETS), body, x0, p0, 1e-3, 1.0, 5.0)

    duration = 300.0
    est_t = np.linspace(1.0, duration - 1.0, 9000)
    est_p = center + 0.3 * np.stack(
        [np.sin(est_t), np.cos(0.7 * est_t), np.sin(0.3 * est_t)], axis=1)
    mc_t = np.arange(int(duration * 300)) / 300.0
    mc_p = center + 0.3 * np.stack(
        [np.sin(mc_t), np.cos(0.7 * mc_t), np.sin(0.3 * mc_t)], axis=1)
    offs = np.linspace(-0.1, 0.1, 41)
    yield "align_objective_grid", "41x41 grid", (
        est_t, est_p, mc_t, mc_p, est_t[0], est_t[-1] - est_t[0],
        mc_t[0], mc_t[-1], offs, offs)


def _best_time(fn, args, repeat):
    fn(*args)  # warm-up (and JIT compile on the numba side)
    best = float("inf")
    for _ in range(repeat):
        start = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - start)
    return best


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=5,
                        help="timed runs per kernel and backend (default 5)")
    args = parser.parse_args(argv)

    rng = np.random.default_rng(7)
    print(f"{'kernel':<22} {'workload':<12} {'numpy':>10} {'numba':>10} {'speedup':>8}")
    for name, label, call_args in _workloads(rng):
        t_np = _best_time(getattr(npk, name), call_args, args.repeat)
        t_nb = _best_time(getattr(nb, name), call_args, args.repeat)
        print(f"{name:<22} {label:<12} {t_np * 1e3:>8.1f}ms {t_nb * 1e3:>8.1f}ms "
              f"{t_np / t_nb:>7.1f}x")


if __name__ == "__main__":
    main()
