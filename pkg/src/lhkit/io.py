"""Binary session persistence.

Every file starts with an 8-byte prefix (magic ``LHK1``, format version u16,
type-specific header length u16), followed by the type header and the packed
records.  All multi-byte fields are little-endian with no padding; NaN floats
are stored with the canonical quiet-NaN bit pattern.  See FORMAT.md for the
byte-level layouts.

The file's role (event log, mocap series, truth trajectory) is carried by its
name inside the session directory; each reader validates the header length it
expects, so passing the wrong file raises FormatError rather than garbage.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .errors import FormatError, VersionError
from .session import (
    TAG_ESTIMATE,
    TAG_IMU,
    TAG_LED,
    TAG_SWEEP,
    CfEventLog,
    EstimateBlock,
    ImuBlock,
    LedBlock,
    MocapSeries,
    SessionBundle,
    SweepBlock,
    TruthTrajectory,
)

MAGIC = b"LHK1"
FORMAT_VERSION = 1

CF_LOG_NAME = "cf.lhk"
MOCAP_NAME = "mocap.lhk"
TRUTH_NAME = "truth.lhk"
ESTIMATES_NAME = "estimates.lhk"
DELTAS_NAME = "deltas.tsv"
ALIGNED_NAME = "aligned.tsv"
MANIFEST_NAME = "manifest.json"

_PREFIX = struct.Struct("<4sHH")

# Per-tag record layouts, timestamp included, tag byte excluded.
_SWEEP_DTYPE = np.dtype([("tag", "u1"), ("t", "<u8"), ("bs", "u1"),
                         ("sensor", "u1"), ("plane", "u1"), ("angle", "<f8")])
_ESTIMATE_DTYPE = np.dtype([("tag", "u1"), ("t", "<u8"), ("xyz", "<f8", (3,))])
_IMU_DTYPE = np.dtype([("tag", "u1"), ("t", "<u8"), ("samples", "<f4", (6,))])
_LED_DTYPE = np.dtype([("tag", "u1"), ("t", "<u8"), ("on", "u1")])

_TAG_DTYPES = {
    TAG_SWEEP: _SWEEP_DTYPE,
    TAG_ESTIMATE: _ESTIMATE_DTYPE,
    TAG_IMU: _IMU_DTYPE,
    TAG_LED: _LED_DTYPE,
}

_MOCAP_DTYPE = np.dtype([("t", "<f8"), ("xyz", "<f8", (3,))])
_TRUTH_DTYPE = np.dtype([("t", "<f8"), ("pos", "<f8", (3,)),
                         ("vel", "<f8", (3,)), ("quat", "<f8", (4,))])


def _write_prefix(header: bytes) -> bytes:
    return _PREFIX.pack(MAGIC, FORMAT_VERSION, len(header)) + header


def _read_prefix(buf: bytes, path, expected_header_len: int):
    """Validate magic/version and return the type header bytes."""
    if len(buf) < _PREFIX.size:
        raise FormatError(f"{path}: file shorter than the 8-byte prefix", offset=0)
    magic, version, header_len = _PREFIX.unpack_from(buf, 0)
    if magic != MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}", offset=0)
    if version != FORMAT_VERSION:
        raise VersionError(f"{path}: unsupported format version {version}")
    if header_len != expected_header_len:
        raise FormatError(
            f"{path}: header length {header_len}, expected {expected_header_len}",
            offset=4,
        )
    end = _PREFIX.size + header_len
    if len(buf) < end:
        raise FormatError(f"{path}: truncated header", offset=len(buf))
    return buf[_PREFIX.size:end], end


def _records_from_rows(rows: np.ndarray, order: np.ndarray) -> bytes:
    """Serialize pre-packed per-type rows in the given merge order."""
    sizes = np.array([r.dtype.itemsize for r in rows], dtype=np.int64)
    raw = [r.tobytes() for r in rows]
    parts = []
    cursors = np.zeros(len(rows), dtype=np.int64)
    for which in order:
        size = sizes[which]
        start = cursors[which]
        parts.append(raw[which][start:start + size])
        cursors[which] = start + size
    return b"".join(parts)


def write_cf_log(path, log: CfEventLog) -> None:
    """Write an event log; records interleave sorted by timestamp."""
    log.validate()
    blocks = [
        (TAG_SWEEP, log.sweeps, _SWEEP_DTYPE),
        (TAG_ESTIMATE, log.estimates, _ESTIMATE_DTYPE),
        (TAG_IMU, log.imu, _IMU_DTYPE),
        (TAG_LED, log.led, _LED_DTYPE),
    ]
    rows = []
    for tag, block, dtype in blocks:
        packed = np.zeros(len(block), dtype=dtype)
        packed["tag"] = tag
        packed["t"] = block.timestamps_us
        if tag == TAG_SWEEP:
            packed["bs"] = block.bs
            packed["sensor"] = block.sensor
            packed["plane"] = block.plane
            packed["angle"] = block.angle
        elif tag == TAG_ESTIMATE:
            packed["xyz"] = block.xyz
        elif tag == TAG_IMU:
            packed["samples"] = block.samples
        else:
            packed["on"] = block.on
        rows.append(packed)
    merged_t = np.concatenate([r["t"] for r in rows])
    which = np.concatenate([np.full(len(r), i, dtype=np.int64) for i, r in enumerate(rows)])
    order = which[np.argsort(merged_t, kind="stable")]
    header = struct.pack("<Q", len(merged_t))
    Path(path).write_bytes(_write_prefix(header) + _records_from_rows(rows, order))


def read_cf_log(path) -> CfEventLog:
    """Parse an event log file back into per-type blocks."""
    path = Path(path)
    buf = path.read_bytes()
    header, offset = _read_prefix(buf, path, 8)
    (count,) = struct.unpack("<Q", header)
    tags = np.empty(count, dtype=np.uint8)
    offsets = np.empty(count, dtype=np.int64)
    n = len(buf)
    for i in range(count):
        if offset >= n:
            raise FormatError(f"{path}: expected {count} records, file ends after {i}",
                              offset=offset)
        tag = buf[offset]
        dtype = _TAG_DTYPES.get(tag)
        if dtype is None:
            raise FormatError(f"{path}: unknown record tag {tag}", offset=offset)
        if offset + dtype.itemsize > n:
            raise FormatError(f"{path}: record {i} extends past end of file",
                              offset=offset)
        tags[i] = tag
        offsets[i] = offset
        offset += dtype.itemsize
    if offset != n:
        raise FormatError(f"{path}: {n - offset} trailing bytes after {count} records",
                          offset=offset)
    flat = np.frombuffer(buf, dtype=np.uint8)
    timestamps = np.zeros(count, dtype=np.uint64)

    def gather(tag):
        dtype = _TAG_DTYPES[tag]
        idx = np.flatnonzero(tags == tag)
        span = offsets[idx, None] + np.arange(dtype.itemsize)[None, :]
        packed = flat[span].view(dtype).reshape(-1) if len(idx) else np.empty(0, dtype)
        timestamps[idx] = packed["t"]
        return packed

    sweeps = gather(TAG_SWEEP)
    estimates = gather(TAG_ESTIMATE)
    imu = gather(TAG_IMU)
    led = gather(TAG_LED)
    if count > 1:
        bad = np.flatnonzero(np.diff(timestamps.astype(np.int64)) <= 0)
        if len(bad):
            raise FormatError(
                f"{path}: timestamps not strictly increasing at record {bad[0] + 1}",
                offset=int(offsets[bad[0] + 1]),
            )
    return CfEventLog(
        sweeps=SweepBlock(sweeps["t"], sweeps["bs"], sweeps["sensor"],
                          sweeps["plane"], sweeps["angle"]),
        estimates=EstimateBlock(estimates["t"], estimates["xyz"]),
        imu=ImuBlock(imu["t"], imu["samples"]),
        led=LedBlock(led["t"], led["on"]),
    )


def write_mocap(path, series: MocapSeries) -> None:
    series.validate()
    header = struct.pack("<ddQ", series.rate, series.start, len(series))
    packed = np.zeros(len(series), dtype=_MOCAP_DTYPE)
    packed["t"] = series.timestamps
    packed["xyz"] = series.positions
    Path(path).write_bytes(_write_prefix(header) + packed.tobytes())


def read_mocap(path) -> MocapSeries:
    path = Path(path)
    buf = path.read_bytes()
    header, offset = _read_prefix(buf, path, 24)
    rate, start, count = struct.unpack("<ddQ", header)
    expected = offset + count * _MOCAP_DTYPE.itemsize
    if len(buf) < expected:
        raise FormatError(f"{path}: expected {count} mocap records, file truncated",
                          offset=len(buf))
    if len(buf) > expected:
        raise FormatError(f"{path}: trailing bytes after mocap records", offset=expected)
    packed = np.frombuffer(buf, dtype=_MOCAP_DTYPE, count=count, offset=offset)
    series = MocapSeries(rate, start, packed["t"], packed["xyz"])
    try:
        series.validate()
    except ValueError as exc:
        raise FormatError(f"{path}: {exc}", offset=offset) from exc
    return series


def write_truth(path, truth: TruthTrajectory) -> None:
    header = struct.pack("<Q", len(truth))
    packed = np.zeros(len(truth), dtype=_TRUTH_DTYPE)
    packed["t"] = truth.timestamps
    packed["pos"] = truth.positions
    packed["vel"] = truth.velocities
    packed["quat"] = truth.quaternions
    Path(path).write_bytes(_write_prefix(header) + packed.tobytes())


def read_truth(path) -> TruthTrajectory:
    path = Path(path)
    buf = path.read_bytes()
    header, offset = _read_prefix(buf, path, 8)
    (count,) = struct.unpack("<Q", header)
    expected = offset + count * _TRUTH_DTYPE.itemsize
    if len(buf) < expected:
        raise FormatError(f"{path}: expected {count} truth records, file truncated",
                          offset=len(buf))
    if len(buf) > expected:
        raise FormatError(f"{path}: trailing bytes after truth records", offset=expected)
    packed = np.frombuffer(buf, dtype=_TRUTH_DTYPE, count=count, offset=offset)
    return TruthTrajectory(packed["t"], packed["pos"], packed["vel"], packed["quat"])


def write_session(directory, bundle: SessionBundle) -> None:
    """Write a bundle into a session directory (created if needed)."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    write_cf_log(directory / CF_LOG_NAME, bundle.cf)
    write_mocap(directory / MOCAP_NAME, bundle.mocap)
    if bundle.truth is not None:
        write_truth(directory / TRUTH_NAME, bundle.truth)
    if bundle.estimates is not None:
        write_cf_log(directory / ESTIMATES_NAME, bundle.estimates)


def read_session(directory) -> SessionBundle:
    """Read a session directory written by write_session (extras optional)."""
    directory = Path(directory)
    cf_path = directory / CF_LOG_NAME
    mocap_path = directory / MOCAP_NAME
    if not cf_path.exists():
        raise FormatError(f"{directory}: missing {CF_LOG_NAME}")
    if not mocap_path.exists():
        raise FormatError(f"{directory}: missing {MOCAP_NAME}")
    truth_path = directory / TRUTH_NAME
    estimates_path = directory / ESTIMATES_NAME
    return SessionBundle(
        cf=read_cf_log(cf_path),
        mocap=read_mocap(mocap_path),
        truth=read_truth(truth_path) if truth_path.exists() else None,
        estimates=read_cf_log(estimates_path) if estimates_path.exists() else None,
    )
