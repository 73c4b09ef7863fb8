"""Command-line pipeline: simulate -> estimate -> align -> report.

Each subcommand stages its result as files in a session directory, so runs
are resumable and every stage is reproducible from its inputs alone.  A
manifest records the config, seed, estimator, and artifact names; rerunning
any stage with the same inputs writes byte-identical outputs.

Exit codes: 0 success, 2 usage error, 3 data error.
"""

from __future__ import annotations

import argparse
import json
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__, alignment, io, metrics, session, simulator
from . import crossing_beam, ekf
from .config import ScenarioConfig, load_config, parse_config
from .errors import EmptyDataset, LhkitError

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DATA = 3

ESTIMATOR_CROSSING_BEAM = "crossing_beam"
ESTIMATOR_EKF = "ekf"

REPORT_TEXT_NAME = "report.txt"
REPORT_TSV_NAME = "report.tsv"
ACCURACY_NAME = "accuracy.tsv"

_FLOAT_FMT = "%.17g"


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except LhkitError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="lhkit",
        description="Sweep-beam positioning pipeline over session directories.",
    )
    parser.add_argument("--version", action="version", version=f"lhkit {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="synthesize a session from a scenario config")
    p.add_argument("--config", required=True, help="scenario config file")
    p.add_argument("--out", required=True, help="session directory to create")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("estimate", help="run an estimator over the session's sweeps")
    p.add_argument("--session", required=True, help="session directory")
    p.add_argument("--estimator", required=True,
                   choices=[ESTIMATOR_CROSSING_BEAM, ESTIMATOR_EKF])
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("align", help="align estimates to the mocap stream")
    p.add_argument("--session", required=True, help="session directory")
    p.set_defaults(func=cmd_align)

    p = sub.add_parser("report", help="filter the aligned dataset and write metrics")
    p.add_argument("--session", required=True, help="session directory")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("batch", help="run the full pipeline for several configs")
    p.add_argument("--config", action="append", required=True, dest="configs",
                   help="scenario config file (repeatable)")
    p.add_argument("--estimator", required=True,
                   choices=[ESTIMATOR_CROSSING_BEAM, ESTIMATOR_EKF])
    p.add_argument("--out", required=True, help="parent directory for session dirs")
    p.add_argument("--jobs", type=int, default=None,
                   help="parallel workers (default: one per config)")
    p.set_defaults(func=cmd_batch)
    return parser


def cmd_simulate(args) -> int:
    cfg = load_config(args.config)
    out = Path(args.out)
    bundle = simulator.synthesize_session(cfg)
    io.write_session(out, bundle)
    manifest = {
        "tool_version": __version__,
        "config_path": str(args.config),
        "config": cfg.to_text(),
        "scenario": cfg.scenario,
        "seed": cfg.rng_seed,
        "estimator": None,
        "outputs": {
            "cf": io.CF_LOG_NAME,
            "mocap": io.MOCAP_NAME,
            "truth": io.TRUTH_NAME,
        },
    }
    _write_manifest(out, manifest)
    print(f"simulate: wrote {len(bundle.cf)} events, {len(bundle.mocap)} mocap samples "
          f"to {out}")
    return EXIT_OK


def cmd_estimate(args) -> int:
    directory = Path(args.session)
    _require(directory / io.CF_LOG_NAME, "simulate")
    bundle = io.read_session(directory)
    if len(bundle.cf.sweeps) == 0:
        print("error: session has no sweep events to estimate from", file=sys.stderr)
        return EXIT_DATA
    manifest = _read_manifest(directory)
    cfg = parse_config(manifest["config"])
    stations = simulator.stations_from_config(cfg)

    if args.estimator == ESTIMATOR_CROSSING_BEAM:
        res = crossing_beam.estimate_stream(bundle.cf.sweeps, stations)
        stamps, positions = res.timestamps_us, res.positions
        _write_deltas(directory / io.DELTAS_NAME, stamps, res.delta_sq)
        manifest["epochs_total"] = res.n_epochs
        manifest["epochs_complete"] = res.n_complete
    else:
        res = ekf.estimate_stream(bundle.cf.sweeps, stations)
        stamps, positions = res.timestamps_us, res.positions
        manifest["events_total"] = res.n_events
        manifest["events_accepted"] = res.n_accepted
    est_log = session.CfEventLog(
        estimates=session.EstimateBlock(timestamps_us=stamps, xyz=positions))
    io.write_cf_log(directory / io.ESTIMATES_NAME, est_log)
    manifest["estimator"] = args.estimator
    manifest["outputs"]["estimates"] = io.ESTIMATES_NAME
    if args.estimator == ESTIMATOR_CROSSING_BEAM:
        manifest["outputs"]["deltas"] = io.DELTAS_NAME
    _write_manifest(directory, manifest)
    print(f"estimate: {args.estimator} produced {len(stamps)} estimates")
    return EXIT_OK


def cmd_align(args) -> int:
    directory = Path(args.session)
    _require(directory / io.CF_LOG_NAME, "simulate")
    _require(directory / io.ESTIMATES_NAME, "estimate")
    bundle = io.read_session(directory)
    aligned = alignment.align(bundle)
    _write_aligned(directory / io.ALIGNED_NAME, aligned)
    manifest = _read_manifest(directory)
    manifest["outputs"]["aligned"] = io.ALIGNED_NAME
    _write_manifest(directory, manifest)
    print(f"align: offsets ({aligned.offsets[0]:.4f}, {aligned.offsets[1]:.4f}) s, "
          f"residual {aligned.residual:.6f} m over {len(aligned)} records")
    return EXIT_OK


def cmd_report(args) -> int:
    directory = Path(args.session)
    _require(directory / io.ESTIMATES_NAME, "estimate")
    _require(directory / io.ALIGNED_NAME, "align")
    manifest = _read_manifest(directory)
    estimator = manifest.get("estimator")
    aligned = _read_aligned(directory / io.ALIGNED_NAME)
    bundle = io.read_session(directory)
    est_times_s = bundle.estimates.estimates.timestamps_us.astype(np.float64) * 1e-6

    if estimator == ESTIMATOR_CROSSING_BEAM:
        _require(directory / io.DELTAS_NAME, "estimate")
        _, delta_sq = _read_deltas(directory / io.DELTAS_NAME)
        if len(delta_sq) != len(aligned):
            print("error: delta sidecar does not match the aligned dataset; "
                  "rerun the estimate and align stages", file=sys.stderr)
            return EXIT_DATA
        policy = metrics.FilterPolicy(require_full_epoch=True)
        info = metrics.EpochInfo(complete=np.ones(len(aligned), bool),
                                 delta_sq=delta_sq)
    elif estimator == ESTIMATOR_EKF:
        sweeps = bundle.cf.sweeps
        slots = _station_slots(sweeps.bs)
        visibility = metrics.ekf_visibility_mask(
            est_times_s, sweeps.timestamps_us.astype(np.float64) * 1e-6, slots)
        policy = metrics.FilterPolicy(ekf_min_visibility=True)
        info = metrics.EpochInfo(visibility_ok=visibility)
    else:
        print("error: manifest names no estimator; run the estimate stage first",
              file=sys.stderr)
        return EXIT_DATA

    result = metrics.apply_filters(aligned, policy, info)
    if result.used == 0:
        print("error: dataset is empty after filtering", file=sys.stderr)
        return EXIT_DATA
    try:
        report = metrics.summarize(result, est_times_s)
    except EmptyDataset:
        print("error: dataset is empty after filtering", file=sys.stderr)
        return EXIT_DATA
    (directory / REPORT_TEXT_NAME).write_text(report.to_text())
    (directory / REPORT_TSV_NAME).write_text(report.to_tsv())
    _write_accuracy(directory / ACCURACY_NAME, result.dataset)
    manifest["outputs"]["report"] = [REPORT_TEXT_NAME, REPORT_TSV_NAME, ACCURACY_NAME]
    _write_manifest(directory, manifest)
    sys.stdout.write(report.to_text())
    return EXIT_OK


def cmd_batch(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    jobs = []
    names = set()
    for config_path in args.configs:
        name = Path(config_path).stem
        if name in names:
            print(f"error: duplicate session name {name!r}", file=sys.stderr)
            return EXIT_USAGE
        names.add(name)
        jobs.append((config_path, str(out / name), args.estimator))
    workers = len(jobs) if args.jobs is None else args.jobs
    if workers < 1:
        print("error: --jobs must be at least 1", file=sys.stderr)
        return EXIT_USAGE
    if workers == 1:
        results = [_run_pipeline(*job) for job in jobs]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_pipeline_star, jobs))
    failed = 0
    for (config_path, session_dir, _), (code, message) in zip(jobs, results):
        status = "ok" if code == EXIT_OK else f"FAILED ({message})"
        print(f"batch: {config_path} -> {session_dir}: {status}")
        failed += code != EXIT_OK
    return EXIT_OK if failed == 0 else EXIT_DATA


def _run_pipeline(config_path: str, session_dir: str, estimator: str):
    """simulate + estimate + align + report in one isolated directory."""
    stages = (
        lambda: cmd_simulate(argparse.Namespace(config=config_path, out=session_dir)),
        lambda: cmd_estimate(argparse.Namespace(session=session_dir,
                                                estimator=estimator)),
        lambda: cmd_align(argparse.Namespace(session=session_dir)),
        lambda: cmd_report(argparse.Namespace(session=session_dir)),
    )
    try:
        for stage in stages:
            code = stage()
            if code != EXIT_OK:
                return code, "stage returned nonzero"
        return EXIT_OK, ""
    except (LhkitError, OSError) as exc:
        return EXIT_DATA, str(exc)


def _run_pipeline_star(job):
    return _run_pipeline(*job)


def _require(path: Path, stage: str) -> None:
    if not path.exists():
        raise FileNotFoundError(
            f"{path} is missing; run the {stage} stage first")


def _write_manifest(directory: Path, manifest: dict) -> None:
    text = json.dumps(manifest, indent=2, sort_keys=True) + "\n"
    (directory / io.MANIFEST_NAME).write_text(text)


def _read_manifest(directory: Path) -> dict:
    path = directory / io.MANIFEST_NAME
    _require(path, "simulate")
    return json.loads(path.read_text())


def _station_slots(bs_ids: np.ndarray) -> np.ndarray:
    ids = np.unique(bs_ids)
    slots = np.zeros(len(bs_ids), dtype=np.int64)
    for slot, bs_id in enumerate(ids[:2]):
        slots[bs_ids == bs_id] = slot
    return slots


def _write_deltas(path: Path, stamps: np.ndarray, delta_sq: np.ndarray) -> None:
    lines = ["timestamp_us\tdelta_sq_m2"]
    lines += [f"{int(t)}\t{_FLOAT_FMT % d}" for t, d in zip(stamps, delta_sq)]
    path.write_text("\n".join(lines) + "\n")


def _read_deltas(path: Path):
    rows = [line.split("\t") for line in path.read_text().splitlines()[1:]]
    stamps = np.array([int(r[0]) for r in rows], dtype=np.uint64)
    delta_sq = np.array([float(r[1]) for r in rows])
    return stamps, delta_sq


def _write_aligned(path: Path, aligned: alignment.AlignedDataset) -> None:
    r = aligned.transform.rotation.reshape(-1)
    t = aligned.transform.translation
    head = [
        "# lhkit aligned dataset",
        "# rotation\t" + " ".join(_FLOAT_FMT % v for v in r),
        "# translation\t" + " ".join(_FLOAT_FMT % v for v in t),
        f"# offsets\t{_FLOAT_FMT % aligned.offsets[0]} {_FLOAT_FMT % aligned.offsets[1]}",
        f"# residual\t{_FLOAT_FMT % aligned.residual}",
        "time_s\tcf_x\tcf_y\tcf_z\tmc_x\tmc_y\tmc_z",
    ]
    rows = np.hstack([aligned.times[:, None], aligned.cf_positions,
                      aligned.mocap_positions])
    lines = head + ["\t".join(_FLOAT_FMT % v for v in row) for row in rows]
    path.write_text("\n".join(lines) + "\n")


def _read_aligned(path: Path) -> alignment.AlignedDataset:
    meta = {}
    data = []
    for line in path.read_text().splitlines():
        if line.startswith("# ") and "\t" in line:
            key, value = line[2:].split("\t", 1)
            meta[key] = value
        elif line and not line.startswith("#") and not line.startswith("time_s"):
            data.append([float(v) for v in line.split("\t")])
    table = np.asarray(data, dtype=float).reshape(len(data), 7)
    transform = alignment.RigidTransform(
        np.array([float(v) for v in meta["rotation"].split()]).reshape(3, 3),
        np.array([float(v) for v in meta["translation"].split()]),
    )
    off_s, off_f = (float(v) for v in meta["offsets"].split())
    return alignment.AlignedDataset(
        times=table[:, 0],
        cf_positions=table[:, 1:4],
        mocap_positions=table[:, 4:7],
        transform=transform,
        offsets=(off_s, off_f),
        residual=float(meta["residual"]),
    )


def _write_accuracy(path: Path, dataset: alignment.AlignedDataset) -> None:
    errors, _ = metrics.accuracy(dataset)
    lines = ["time_s\terror_m"]
    lines += [f"{_FLOAT_FMT % t}\t{_FLOAT_FMT % e}"
              for t, e in zip(dataset.times, errors)]
    path.write_text("\n".join(lines) + "\n")


if __name__ == "__main__":
    sys.exit(main())
