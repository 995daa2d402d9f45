"""Day-level activity records, scaling, binning and windowing.

Raw minute samples are aggregated into person-days, low-coverage days are
blanked and imputed with per-individual means, each channel is min/max
scaled with corpus-wide bounds and quantized into evenly spaced bins, and
the resulting series are cut into fixed-length windows of bin indices.
"""

from __future__ import annotations

import csv
import json
import logging
import math
import struct
from collections import defaultdict
from dataclasses import dataclass, field
from datetime import date, datetime
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .exceptions import CSVFormatError, DegenerateCorpusError, ValidationError

logger = logging.getLogger(__name__)

CHANNELS = ("resting_hr", "sleep_minutes", "steps")
MINUTES_PER_DAY = 1440
COVERAGE_THRESHOLD = 0.8
WINDOW_LEN = 21
DEFAULT_NUM_BINS = 100

CSV_HEADER = ("individual_id", "day_index", "resting_hr", "sleep_minutes", "steps", "coverage")

WINDOW_MAGIC = b"AGWB"
WINDOW_FORMAT_VERSION = 1
_WINDOW_HEADER = struct.Struct("<4sIIII")


@dataclass(frozen=True)
class DayRecord:
    individual_id: str
    day_index: int
    resting_hr: float | None
    sleep_minutes: float | None
    steps: float | None
    coverage_fraction: float = 1.0

    def __post_init__(self):
        if not 0.0 <= self.coverage_fraction <= 1.0:
            raise ValidationError(f"coverage_fraction {self.coverage_fraction} outside [0, 1]")
        if self.resting_hr is not None and not self.resting_hr > 0:
            raise ValidationError(f"resting_hr must be positive, got {self.resting_hr}")
        if self.sleep_minutes is not None and not 0 <= self.sleep_minutes <= MINUTES_PER_DAY:
            raise ValidationError(f"sleep_minutes must lie in [0, 1440], got {self.sleep_minutes}")
        if self.steps is not None and not self.steps >= 0:
            raise ValidationError(f"steps must be non-negative, got {self.steps}")

    def values(self) -> tuple[float | None, float | None, float | None]:
        return (self.resting_hr, self.sleep_minutes, self.steps)


@dataclass
class IndividualSeries:
    individual_id: str
    days: list[DayRecord] = field(default_factory=list)

    def __post_init__(self):
        idx = [d.day_index for d in self.days]
        if any(b <= a for a, b in zip(idx, idx[1:])):
            raise ValidationError(
                f"day_index must be strictly increasing for individual {self.individual_id}"
            )

    def __len__(self):
        return len(self.days)

    def to_array(self) -> np.ndarray:
        """Channel values as a float array of shape (n_days, 3), NaN where missing."""
        out = np.full((len(self.days), len(CHANNELS)), np.nan)
        for i, d in enumerate(self.days):
            for c, v in enumerate(d.values()):
                if v is not None:
                    out[i, c] = v
        return out


@dataclass(frozen=True)
class ScalerBinSpec:
    """Per-channel min/max bounds plus the bin count of the quantization grid."""

    mins: tuple[float, float, float]
    maxs: tuple[float, float, float]
    num_bins: int = DEFAULT_NUM_BINS

    def __post_init__(self):
        if len(self.mins) != len(CHANNELS) or len(self.maxs) != len(CHANNELS):
            raise ValidationError("scaler bounds need one entry per channel")
        for name, lo, hi in zip(CHANNELS, self.mins, self.maxs):
            if not lo < hi:
                raise DegenerateCorpusError(f"channel {name}: min ({lo}) must be < max ({hi})")
        if self.num_bins < 1:
            raise ValidationError("num_bins must be positive")

    def bin_width(self, channel: int) -> float:
        return (self.maxs[channel] - self.mins[channel]) / self.num_bins

    def to_dict(self) -> dict:
        return {
            "channels": list(CHANNELS),
            "min": list(self.mins),
            "max": list(self.maxs),
            "num_bins": self.num_bins,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ScalerBinSpec":
        return cls(tuple(map(float, d["min"])), tuple(map(float, d["max"])), int(d["num_bins"]))


@dataclass
class WindowBatch:
    """Windows of bin indices, shape (batch, window_len, 3), with their origins.

    ``values`` optionally keeps the original-unit values the bins were
    computed from; it is not serialized to the binary window file.
    """

    windows: np.ndarray
    sources: list[tuple[str, int]] = field(default_factory=list)
    values: np.ndarray | None = None

    def __post_init__(self):
        self.windows = np.asarray(self.windows, dtype=np.int64)
        if self.windows.ndim != 3 or self.windows.shape[2] != len(CHANNELS):
            raise ValidationError(f"windows must have shape (batch, len, 3), got {self.windows.shape}")
        if self.sources and len(self.sources) != len(self.windows):
            raise ValidationError("one source entry per window required")

    def __len__(self):
        return len(self.windows)

    @classmethod
    def empty(cls, window_len: int = WINDOW_LEN) -> "WindowBatch":
        return cls(np.zeros((0, window_len, len(CHANNELS)), dtype=np.int64), [], None)

    @classmethod
    def concat(cls, batches: Sequence["WindowBatch"], window_len: int = WINDOW_LEN) -> "WindowBatch":
        batches = [b for b in batches if len(b)]
        if not batches:
            return cls.empty(window_len)
        vals = None
        if all(b.values is not None for b in batches):
            vals = np.concatenate([b.values for b in batches])
        return cls(
            np.concatenate([b.windows for b in batches]),
            [s for b in batches for s in b.sources],
            vals,
        )

    def subset(self, index) -> "WindowBatch":
        index = np.asarray(index, dtype=np.int64)
        return WindowBatch(
            self.windows[index],
            [self.sources[i] for i in index] if self.sources else [],
            None if self.values is None else self.values[index],
        )

    def individuals(self) -> list[str]:
        seen = dict.fromkeys(s[0] for s in self.sources)
        return list(seen)


# --------------------------------------------------------------------------
# minute-level aggregation


def _parse_timestamp(ts) -> datetime:
    if isinstance(ts, datetime):
        return ts
    if isinstance(ts, str):
        return datetime.fromisoformat(ts)
    raise TypeError(f"unsupported timestamp {ts!r}")


def aggregate_days(minute_records: Iterable, errors: list | None = None) -> list[DayRecord]:
    """Aggregate per-minute samples into one :class:`DayRecord` per person-day.

    Each minute record is a mapping or tuple of
    ``(individual_id, timestamp, heart_rate, asleep, steps)``; any of the three
    signals may be ``None``. Sleep minutes and steps are summed, heart rate is
    averaged over the minutes that carry it, and coverage is the number of
    distinct recorded minutes over 1440. ``day_index`` counts calendar days
    from each individual's first observed date.

    Records whose timestamp cannot be parsed are skipped; if ``errors`` is a
    list, ``(record, reason)`` pairs are appended to it.
    """
    acc: dict[tuple[str, date], dict] = {}
    for rec in minute_records:
        if isinstance(rec, dict):
            iid, ts, hr, asleep, steps = (
                rec.get("individual_id"), rec.get("timestamp"), rec.get("heart_rate"),
                rec.get("asleep"), rec.get("steps"),
            )
        else:
            iid, ts, hr, asleep, steps = rec
        try:
            t = _parse_timestamp(ts)
        except (TypeError, ValueError) as exc:
            if errors is not None:
                errors.append((rec, str(exc)))
            continue
        day = acc.setdefault(
            (str(iid), t.date()),
            {"minutes": set(), "hr_sum": 0.0, "hr_n": 0, "sleep": 0.0, "steps": 0.0,
             "has_sleep": False, "has_steps": False},
        )
        day["minutes"].add((t.hour, t.minute))
        if hr is not None:
            day["hr_sum"] += float(hr)
            day["hr_n"] += 1
        if asleep is not None:
            day["has_sleep"] = True
            day["sleep"] += 1.0 if asleep else 0.0
        if steps is not None:
            day["has_steps"] = True
            day["steps"] += float(steps)

    first_day: dict[str, date] = {}
    for iid, d in acc:
        if iid not in first_day or d < first_day[iid]:
            first_day[iid] = d

    out = []
    for (iid, d), day in sorted(acc.items()):
        out.append(
            DayRecord(
                individual_id=iid,
                day_index=(d - first_day[iid]).days,
                resting_hr=day["hr_sum"] / day["hr_n"] if day["hr_n"] else None,
                sleep_minutes=day["sleep"] if day["has_sleep"] else None,
                steps=day["steps"] if day["has_steps"] else None,
                coverage_fraction=min(len(day["minutes"]) / MINUTES_PER_DAY, 1.0),
            )
        )
    return out


def group_by_individual(days: Iterable[DayRecord]) -> list[IndividualSeries]:
    grouped: dict[str, list[DayRecord]] = defaultdict(list)
    for d in days:
        grouped[d.individual_id].append(d)
    return [
        IndividualSeries(iid, sorted(ds, key=lambda r: r.day_index)) for iid, ds in grouped.items()
    ]


# --------------------------------------------------------------------------
# coverage filter and imputation


class IndividualDropped(ValidationError):
    def __init__(self, individual_id, reason):
        self.individual_id = individual_id
        self.reason = reason
        super().__init__(f"individual {individual_id} dropped: {reason}")


def filter_and_impute(series: IndividualSeries,
                      threshold: float = COVERAGE_THRESHOLD) -> IndividualSeries:
    """Blank days with coverage <= ``threshold`` and mean-impute every gap.

    Gaps in ``day_index`` are filled with empty days first, so the output
    spans a contiguous day range. Raises :class:`IndividualDropped` when a
    channel has no usable value at all.
    """
    if not series.days:
        raise IndividualDropped(series.individual_id, "no days")
    by_index = {d.day_index: d for d in series.days}
    start, stop = series.days[0].day_index, series.days[-1].day_index + 1

    rows = []
    for i in range(start, stop):
        d = by_index.get(i)
        if d is None or d.coverage_fraction <= threshold:
            rows.append((i, [None, None, None], 0.0 if d is None else d.coverage_fraction))
        else:
            rows.append((i, list(d.values()), d.coverage_fraction))

    means = []
    for c, name in enumerate(CHANNELS):
        observed = [r[1][c] for r in rows if r[1][c] is not None]
        if not observed:
            raise IndividualDropped(series.individual_id, f"no valid {name} values")
        means.append(math.fsum(observed) / len(observed))

    days = [
        DayRecord(
            series.individual_id, i,
            *(means[c] if v is None else v for c, v in enumerate(vals)),
            coverage_fraction=cov,
        )
        for i, vals, cov in rows
    ]
    return IndividualSeries(series.individual_id, days)


def clean_cohort(all_series: Iterable[IndividualSeries],
                 threshold: float = COVERAGE_THRESHOLD) -> tuple[list[IndividualSeries], list[IndividualDropped]]:
    """Apply :func:`filter_and_impute` to a cohort, collecting dropped individuals."""
    kept, skipped = [], []
    for s in all_series:
        try:
            kept.append(filter_and_impute(s, threshold))
        except IndividualDropped as exc:
            logger.info("%s", exc)
            skipped.append(exc)
    return kept, skipped


# --------------------------------------------------------------------------
# scaling and quantization


def fit_scaler(all_series: Sequence[IndividualSeries], num_bins: int = DEFAULT_NUM_BINS) -> ScalerBinSpec:
    """Global per-channel extrema over a fully imputed corpus."""
    if not all_series:
        raise ValidationError("fit_scaler needs at least one individual")
    arr = np.concatenate([s.to_array() for s in all_series])
    if arr.size == 0:
        raise ValidationError("fit_scaler needs at least one day")
    if np.isnan(arr).any():
        raise ValidationError("fit_scaler expects imputed series without missing values")
    lo, hi = arr.min(axis=0), arr.max(axis=0)
    return ScalerBinSpec(tuple(float(v) for v in lo), tuple(float(v) for v in hi), int(num_bins))


def scale(value, channel: int, spec: ScalerBinSpec):
    lo, hi = spec.mins[channel], spec.maxs[channel]
    return np.clip((np.asarray(value, dtype=np.float64) - lo) / (hi - lo), 0.0, 1.0)


def quantize(value, channel: int, spec: ScalerBinSpec):
    """Map values in original units onto bin indices; out-of-range values clamp."""
    s = scale(value, channel, spec)
    b = np.minimum(np.floor(s * spec.num_bins), spec.num_bins - 1).astype(np.int64)
    return int(b) if b.ndim == 0 else b


def dequantize(bins, channel: int, spec: ScalerBinSpec):
    """Bin midpoints mapped back to original units."""
    b = np.asarray(bins)
    if np.any(b < 0) or np.any(b >= spec.num_bins):
        raise ValidationError(f"bin index outside [0, {spec.num_bins - 1}]")
    lo, hi = spec.mins[channel], spec.maxs[channel]
    v = lo + ((b + 0.5) / spec.num_bins) * (hi - lo)
    return float(v) if v.ndim == 0 else v


def quantize_array(values: np.ndarray, spec: ScalerBinSpec) -> np.ndarray:
    """Quantize an array whose last axis holds the three channels."""
    values = np.asarray(values, dtype=np.float64)
    out = np.empty(values.shape, dtype=np.int64)
    for c in range(len(CHANNELS)):
        out[..., c] = quantize(values[..., c], c, spec)
    return out


def dequantize_array(bins: np.ndarray, spec: ScalerBinSpec) -> np.ndarray:
    bins = np.asarray(bins)
    out = np.empty(bins.shape, dtype=np.float64)
    for c in range(len(CHANNELS)):
        out[..., c] = dequantize(bins[..., c], c, spec)
    return out


def scale_array(values: np.ndarray, spec: ScalerBinSpec) -> np.ndarray:
    values = np.asarray(values, dtype=np.float64)
    out = np.empty(values.shape, dtype=np.float64)
    for c in range(len(CHANNELS)):
        out[..., c] = scale(values[..., c], c, spec)
    return out


# --------------------------------------------------------------------------
# windowing


def make_windows(series: IndividualSeries, spec: ScalerBinSpec, stride: int = WINDOW_LEN,
                 window_len: int = WINDOW_LEN) -> WindowBatch:
    """Cut an imputed series into ``window_len``-day windows every ``stride`` days."""
    if stride < 1:
        raise ValidationError("stride must be positive")
    n = len(series)
    if n < window_len:
        logger.info("individual %s skipped: %d days < window length %d",
                    series.individual_id, n, window_len)
        return WindowBatch.empty(window_len)
    values = series.to_array()
    if np.isnan(values).any():
        raise ValidationError(f"individual {series.individual_id} has missing values; impute first")
    starts = range(0, n - window_len + 1, stride)
    vals = np.stack([values[s:s + window_len] for s in starts])
    return WindowBatch(
        quantize_array(vals, spec),
        [(series.individual_id, series.days[s].day_index) for s in starts],
        vals,
    )


def make_cohort_windows(all_series: Iterable[IndividualSeries], spec: ScalerBinSpec,
                        stride: int = WINDOW_LEN, window_len: int = WINDOW_LEN) -> WindowBatch:
    return WindowBatch.concat(
        [make_windows(s, spec, stride, window_len) for s in all_series], window_len
    )


# --------------------------------------------------------------------------
# file formats


def _fmt(v) -> str:
    if v is None:
        return ""
    return repr(float(v)) if not float(v).is_integer() else str(int(v))


def write_day_csv(path, all_series: Iterable[IndividualSeries]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for s in all_series:
            for d in s.days:
                w.writerow([d.individual_id, d.day_index, _fmt(d.resting_hr),
                            _fmt(d.sleep_minutes), _fmt(d.steps), _fmt(d.coverage_fraction)])


def read_day_csv(path) -> list[IndividualSeries]:
    """Parse a day-level CSV; raises :class:`CSVFormatError` with the line number."""
    grouped: dict[str, list[DayRecord]] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise CSVFormatError("empty input", line=1)
        if tuple(h.strip() for h in header) != CSV_HEADER:
            raise CSVFormatError(f"expected header {','.join(CSV_HEADER)}", line=1)
        for row in reader:
            line = reader.line_num
            if not row:
                continue
            if len(row) != len(CSV_HEADER):
                raise CSVFormatError(f"expected {len(CSV_HEADER)} fields, got {len(row)}", line)
            try:
                vals = [float(x) if x.strip() else None for x in row[2:5]]
                cov = float(row[5]) if row[5].strip() else 0.0
                rec = DayRecord(row[0], int(row[1]), *vals, coverage_fraction=cov)
            except ValueError as exc:
                raise CSVFormatError(str(exc), line) from None
            days = grouped.setdefault(rec.individual_id, [])
            if days and rec.day_index <= days[-1].day_index:
                raise CSVFormatError(
                    f"day_index not increasing for individual {rec.individual_id}", line
                )
            days.append(rec)
    if not grouped:
        raise CSVFormatError("no data rows", line=2)
    return [IndividualSeries(k, v) for k, v in grouped.items()]


def sidecar_path(path) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".json")


def write_windows(path, batch: WindowBatch, spec: ScalerBinSpec) -> None:
    """Write the ``AGWB`` binary window file and its JSON sidecar."""
    w = batch.windows
    if w.size and (w.min() < 0 or w.max() >= spec.num_bins):
        raise ValidationError("window bins outside the scaler's bin range")
    with open(path, "wb") as fh:
        fh.write(_WINDOW_HEADER.pack(WINDOW_MAGIC, WINDOW_FORMAT_VERSION, w.shape[0], w.shape[1], w.shape[2]))
        fh.write(np.ascontiguousarray(w, dtype="<u2").tobytes())
    meta = {
        "format_version": WINDOW_FORMAT_VERSION,
        "scaler": spec.to_dict(),
        "sources": [[str(i), int(d)] for i, d in batch.sources],
    }
    sidecar_path(path).write_text(json.dumps(meta, indent=2) + "\n", encoding="utf-8")


def read_windows(path) -> tuple[WindowBatch, ScalerBinSpec]:
    raw = Path(path).read_bytes()
    if len(raw) < _WINDOW_HEADER.size:
        raise ValidationError(f"{path}: truncated window file")
    magic, version, n, length, channels = _WINDOW_HEADER.unpack_from(raw)
    if magic != WINDOW_MAGIC:
        raise ValidationError(f"{path}: bad magic {magic!r}")
    if version != WINDOW_FORMAT_VERSION:
        raise ValidationError(f"{path}: unsupported window format version {version}")
    body = raw[_WINDOW_HEADER.size:]
    if len(body) != 2 * n * length * channels:
        raise ValidationError(f"{path}: payload size does not match header")
    windows = np.frombuffer(body, dtype="<u2").reshape(n, length, channels).astype(np.int64)
    meta = json.loads(sidecar_path(path).read_text(encoding="utf-8"))
    spec = ScalerBinSpec.from_dict(meta["scaler"])
    if windows.size and windows.max() >= spec.num_bins:
        raise ValidationError(f"{path}: bin index exceeds num_bins")
    sources = [(str(i), int(d)) for i, d in meta.get("sources", [])]
    return WindowBatch(windows, sources), spec
