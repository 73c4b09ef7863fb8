"""Dataset filtering rules and precision/accuracy/frequency statistics.

Filtering removes rows without ground truth and, per estimator, rows whose
triangulation quality or plane visibility is too poor to evaluate fairly.
Precision (jitter) is the RMS of consecutive position differences on the
estimate stream alone; accuracy compares against interpolated mocap truth.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .alignment import AlignedDataset
from .errors import EmptyDataset, TooFewSamples

DEFAULT_DELTA_MAX = 0.1  # m, max ray gap sqrt(delta) per epoch
EKF_VISIBILITY_WINDOW_S = 0.1
FREQUENCY_BREAK_S = 1.0  # gaps at least this long are stream breaks, not samples

RULE_NO_GROUND_TRUTH = "no_ground_truth"
RULE_INCOMPLETE_EPOCH = "incomplete_epoch"
RULE_DELTA_EXCEEDED = "delta_exceeded"
RULE_LOW_VISIBILITY = "low_visibility"


@dataclass(frozen=True)
class FilterPolicy:
    """Which removal rules apply to an aligned dataset.

    ``require_full_epoch`` turns on the crossing-beam rules (epoch
    completeness and the delta gate); ``ekf_min_visibility`` turns on the
    EKF rule that both stations must have contributed a sweep within the
    preceding window.  Rows without ground truth are always dropped.
    """

    require_full_epoch: bool = False
    delta_max: float = DEFAULT_DELTA_MAX
    ekf_min_visibility: bool = False
    drop_nan_mocap: bool = True

    def __post_init__(self):
        if not self.delta_max > 0:
            raise ValueError("delta_max must be positive")


@dataclass(frozen=True)
class EpochInfo:
    """Per-record metadata consumed by the filter rules.

    ``complete`` and ``delta_sq`` describe the crossing-beam epoch behind
    each record; ``visibility_ok`` is the precomputed EKF visibility flag
    (see ekf_visibility_mask).  Arrays must match the dataset length.
    """

    complete: np.ndarray | None = None
    delta_sq: np.ndarray | None = None
    visibility_ok: np.ndarray | None = None

    def take(self, mask: np.ndarray) -> "EpochInfo":
        pick = lambda a: None if a is None else a[mask]
        return EpochInfo(pick(self.complete), pick(self.delta_sq),
                         pick(self.visibility_ok))


@dataclass(frozen=True)
class FilterResult:
    """Filtered dataset plus bookkeeping for the report counts."""

    dataset: AlignedDataset
    info: EpochInfo
    kept: np.ndarray
    removed_by_rule: dict[str, int]

    @property
    def total(self) -> int:
        return len(self.kept)

    @property
    def used(self) -> int:
        return int(self.kept.sum())

    @property
    def filtered(self) -> int:
        return self.total - self.used


def ekf_visibility_mask(
    record_times_s: np.ndarray,
    sweep_times_s: np.ndarray,
    sweep_station: np.ndarray,
    window_s: float = EKF_VISIBILITY_WINDOW_S,
) -> np.ndarray:
    """True where both stations contributed a sweep within the prior window.

    All times must share one clock.  ``sweep_station`` holds slot indices
    (0/1); a record at time t needs at least one sweep from each station in
    (t - window, t].
    """
    record_times_s = np.asarray(record_times_s, dtype=float)
    sweep_times_s = np.asarray(sweep_times_s, dtype=float)
    sweep_station = np.asarray(sweep_station)
    ok = np.ones(len(record_times_s), dtype=bool)
    for slot in (0, 1):
        t = np.sort(sweep_times_s[sweep_station == slot])
        lo = np.searchsorted(t, record_times_s - window_s, side="right")
        hi = np.searchsorted(t, record_times_s, side="right")
        ok &= hi > lo
    return ok


def apply_filters(
    dataset: AlignedDataset,
    policy: FilterPolicy,
    info: EpochInfo | None = None,
) -> FilterResult:
    """Apply the policy's rules in a fixed order and subset the dataset.

    Each removal is attributed to the first rule that rejects it, so the
    per-rule counts sum to the filtered total.  Applying the result's
    dataset and info again is a no-op.
    """
    if info is None:
        info = EpochInfo()
    n = len(dataset)
    for name, arr in (("complete", info.complete), ("delta_sq", info.delta_sq),
                      ("visibility_ok", info.visibility_ok)):
        if arr is not None and len(arr) != n:
            raise ValueError(f"EpochInfo.{name} length {len(arr)} != dataset length {n}")
    kept = np.ones(n, dtype=bool)
    removed: dict[str, int] = {}

    def drop(rule: str, bad: np.ndarray):
        hit = kept & bad
        removed[rule] = int(hit.sum())
        kept[hit] = False

    if policy.drop_nan_mocap:
        drop(RULE_NO_GROUND_TRUTH, ~dataset.valid_mask())
    if policy.require_full_epoch:
        if info.complete is None or info.delta_sq is None:
            raise ValueError("crossing-beam rules need EpochInfo.complete and delta_sq")
        drop(RULE_INCOMPLETE_EPOCH, ~np.asarray(info.complete, dtype=bool))
        drop(RULE_DELTA_EXCEEDED, np.sqrt(info.delta_sq) > policy.delta_max)
    if policy.ekf_min_visibility:
        if info.visibility_ok is None:
            raise ValueError("the EKF visibility rule needs EpochInfo.visibility_ok")
        drop(RULE_LOW_VISIBILITY, ~np.asarray(info.visibility_ok, dtype=bool))

    filtered = replace(
        dataset,
        times=dataset.times[kept],
        cf_positions=dataset.cf_positions[kept],
        mocap_positions=dataset.mocap_positions[kept],
    )
    return FilterResult(filtered, info.take(kept), kept, removed)


def precision(dataset) -> float:
    """RMS of consecutive estimate differences (jitter).

    P = sqrt( (1/n) * sum_{i<n} ||p_i - p_{i+1}||^2 ) with n the record
    count; the sum has n-1 terms but is normalized by n.
    """
    positions = _cf_positions(dataset)
    n = len(positions)
    if n < 2:
        raise TooFewSamples(f"precision needs at least 2 records, got {n}")
    steps = np.diff(positions, axis=0)
    return float(np.sqrt(np.einsum("ij,ij->", steps, steps) / n))


@dataclass(frozen=True)
class AccuracySummary:
    """Box-plot statistics of the per-record Euclidean errors.

    Whiskers follow the Tukey convention: the most extreme errors within
    1.5 IQR of the quartiles; everything beyond is an outlier.
    """

    mean: float
    maximum: float
    median: float
    q1: float
    q3: float
    whisker_low: float
    whisker_high: float
    outliers: np.ndarray


def accuracy(dataset) -> tuple[np.ndarray, AccuracySummary]:
    """Per-record errors ||cf_i - mocap_i|| and their box-plot summary."""
    if isinstance(dataset, AlignedDataset):
        cf, mc = dataset.cf_positions, dataset.mocap_positions
    else:
        cf, mc = dataset
    cf = np.asarray(cf, dtype=float)
    mc = np.asarray(mc, dtype=float)
    if len(cf) == 0:
        raise EmptyDataset("accuracy needs a non-empty dataset")
    errors = np.linalg.norm(cf - mc, axis=1)
    q1, med, q3 = np.percentile(errors, [25.0, 50.0, 75.0])
    iqr = q3 - q1
    inside = errors[(errors >= q1 - 1.5 * iqr) & (errors <= q3 + 1.5 * iqr)]
    whisker_low = float(inside.min()) if len(inside) else float(med)
    whisker_high = float(inside.max()) if len(inside) else float(med)
    outliers = np.sort(errors[(errors < whisker_low) | (errors > whisker_high)])
    summary = AccuracySummary(
        mean=float(errors.mean()),
        maximum=float(errors.max()),
        median=float(med),
        q1=float(q1),
        q3=float(q3),
        whisker_low=whisker_low,
        whisker_high=whisker_high,
        outliers=outliers,
    )
    return errors, summary


def sample_frequency(timestamps_s) -> tuple[float, float]:
    """Mean and std of instantaneous event frequency.

    Frequencies are reciprocals of consecutive gaps; gaps of a second or
    more count as stream breaks and contribute no sample.
    """
    t = np.asarray(timestamps_s, dtype=float)
    if len(t) < 3:
        raise TooFewSamples(f"sample_frequency needs at least 3 timestamps, got {len(t)}")
    gaps = np.diff(t)
    if (gaps <= 0).any():
        raise ValueError("timestamps must be strictly increasing")
    gaps = gaps[gaps < FREQUENCY_BREAK_S]
    if len(gaps) == 0:
        raise TooFewSamples("no consecutive gaps below the stream-break threshold")
    freqs = 1.0 / gaps
    return float(freqs.mean()), float(freqs.std())


@dataclass(frozen=True)
class MetricsReport:
    """Summary statistics of one filtered, aligned dataset."""

    precision_m: float
    accuracy: AccuracySummary
    freq_mean_hz: float
    freq_std_hz: float
    count_total: int
    count_filtered: int
    count_used: int
    removed_by_rule: dict[str, int]

    def __post_init__(self):
        if self.count_used + self.count_filtered != self.count_total:
            raise ValueError("used + filtered must equal total")

    def rows(self) -> list[tuple[str, str]]:
        """Flat (metric, value) pairs, the machine-readable serialization."""
        acc = self.accuracy
        rows = [
            ("precision_m", f"{self.precision_m:.9e}"),
            ("accuracy_mean_m", f"{acc.mean:.9e}"),
            ("accuracy_max_m", f"{acc.maximum:.9e}"),
            ("accuracy_median_m", f"{acc.median:.9e}"),
            ("accuracy_q1_m", f"{acc.q1:.9e}"),
            ("accuracy_q3_m", f"{acc.q3:.9e}"),
            ("whisker_low_m", f"{acc.whisker_low:.9e}"),
            ("whisker_high_m", f"{acc.whisker_high:.9e}"),
            ("outlier_count", str(len(acc.outliers))),
            ("freq_mean_hz", f"{self.freq_mean_hz:.6f}"),
            ("freq_std_hz", f"{self.freq_std_hz:.6f}"),
            ("count_total", str(self.count_total)),
            ("count_filtered", str(self.count_filtered)),
            ("count_used", str(self.count_used)),
        ]
        for rule in sorted(self.removed_by_rule):
            rows.append((f"removed_{rule}", str(self.removed_by_rule[rule])))
        return rows

    def to_tsv(self) -> str:
        lines = ["metric\tvalue"]
        lines += [f"{key}\t{value}" for key, value in self.rows()]
        return "\n".join(lines) + "\n"

    def to_text(self) -> str:
        acc = self.accuracy
        mm = 1e3
        lines = [
            "metrics report",
            "--------------",
            f"records        {self.count_used} used / {self.count_filtered} filtered"
            f" / {self.count_total} total",
        ]
        for rule in sorted(self.removed_by_rule):
            lines.append(f"  removed by {rule}: {self.removed_by_rule[rule]}")
        lines += [
            f"precision P    {self.precision_m * mm:.4f} mm",
            f"accuracy mean  {acc.mean * mm:.4f} mm",
            f"accuracy max   {acc.maximum * mm:.4f} mm",
            f"box plot       median {acc.median * mm:.4f} mm, "
            f"IQR [{acc.q1 * mm:.4f}, {acc.q3 * mm:.4f}] mm",
            f"whiskers       [{acc.whisker_low * mm:.4f}, {acc.whisker_high * mm:.4f}] mm, "
            f"{len(acc.outliers)} outliers",
            f"frequency      {self.freq_mean_hz:.2f} +/- {self.freq_std_hz:.2f} Hz",
        ]
        return "\n".join(lines) + "\n"


def summarize(
    filter_result: FilterResult,
    event_times_s: np.ndarray,
) -> MetricsReport:
    """Full report over a filtered dataset.

    ``event_times_s`` are the raw estimate event times used for the
    frequency statistics (the unfiltered stream cadence).
    """
    dataset = filter_result.dataset
    _, acc = accuracy(dataset)
    freq_mean, freq_std = sample_frequency(event_times_s)
    return MetricsReport(
        precision_m=precision(dataset),
        accuracy=acc,
        freq_mean_hz=freq_mean,
        freq_std_hz=freq_std,
        count_total=filter_result.total,
        count_filtered=filter_result.filtered,
        count_used=filter_result.used,
        removed_by_rule=dict(filter_result.removed_by_rule),
    )


def _cf_positions(dataset) -> np.ndarray:
    if isinstance(dataset, AlignedDataset):
        return dataset.cf_positions
    return np.asarray(dataset, dtype=float)
