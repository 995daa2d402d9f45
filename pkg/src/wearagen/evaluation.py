"""Quantitative comparison of real and generated activity sequences.

Provides next-day MAE of a trained model, cosine similarity and dynamic time
warping between sequences, mean pairwise statistics within and across sets,
a flattened-feature CSV export for external embedding tools, and the JSON
evaluation report.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from importlib import resources
from typing import Callable, Sequence

import numpy as np

from .data import CHANNELS, ScalerBinSpec, dequantize_array, scale_array
from .exceptions import ValidationError
from .model import ModelConfig, forward

REPORT_SCHEMA_VERSION = 1
DEFAULT_MAX_PAIRS = 10_000
SUMMARY_HEADER = ("training_size", "mae_hr", "mae_sleep", "mae_steps")


def next_day_mae(params, config: ModelConfig, windows: np.ndarray, spec: ScalerBinSpec,
                 values: np.ndarray | None = None, batch_size: int = 256) -> np.ndarray:
    """Per-channel MAE in original units of argmax-bin next-day predictions.

    Each position ``t < seq_len - 1`` predicts day ``t + 1`` as the midpoint
    of its most probable bin. Targets are ``values`` when supplied (original
    units, same shape as ``windows``), otherwise the midpoints of the true
    bins.
    """
    windows = np.asarray(windows, dtype=np.int64)
    if len(windows) == 0:
        raise ValidationError("next_day_mae needs a non-empty test set")
    truth = dequantize_array(windows, spec) if values is None else np.asarray(values, float)
    if truth.shape != windows.shape:
        raise ValidationError("values must match the window array's shape")
    abs_err = np.zeros(len(CHANNELS))
    count = 0
    for start in range(0, len(windows), batch_size):
        w = windows[start:start + batch_size]
        logits = forward(w, params, config, training=False, keep_cache=False).logits
        pred = dequantize_array(np.argmax(logits[:, :-1], axis=-1), spec)
        abs_err += np.abs(pred - truth[start:start + batch_size, 1:]).sum(axis=(0, 1))
        count += pred.shape[0] * pred.shape[1]
    return abs_err / count


def cosine_similarity(x, y) -> float:
    x = np.asarray(x, dtype=np.float64).ravel()
    y = np.asarray(y, dtype=np.float64).ravel()
    if x.shape != y.shape:
        raise ValidationError("cosine_similarity needs equal-length vectors")
    nx, ny = np.linalg.norm(x), np.linalg.norm(y)
    if nx == 0 or ny == 0:
        raise ValidationError("cosine_similarity is undefined for zero-norm vectors")
    return float(np.clip(np.dot(x, y) / (nx * ny), -1.0, 1.0))


def _dtw_batch(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """DTW with absolute-difference cost for ``P`` pairs at once.

    ``x`` is ``(P, n)`` and ``y`` is ``(P, m)``; returns ``(P,)``.
    """
    p, n = x.shape
    m = y.shape[1]
    cost = np.abs(x[:, :, None] - y[:, None, :])
    prev = np.full((p, m + 1), np.inf)
    prev[:, 0] = 0.0
    for i in range(n):
        cur = np.full((p, m + 1), np.inf)
        ci = cost[:, i]
        for j in range(1, m + 1):
            best = np.minimum(np.minimum(prev[:, j], cur[:, j - 1]), prev[:, j - 1])
            cur[:, j] = ci[:, j - 1] + best
        prev = cur
    return prev[:, m]


def _as_channels(s) -> np.ndarray:
    a = np.asarray(s, dtype=np.float64)
    if a.ndim == 1:
        a = a[:, None]
    if a.ndim != 2 or a.shape[0] == 0:
        raise ValidationError("dtw needs non-empty (length,) or (length, channels) sequences")
    return a


def dtw_distance(x, y) -> float:
    """Classic DTW; multi-channel inputs are summed over per-channel distances."""
    a, b = _as_channels(x), _as_channels(y)
    if a.shape[1] != b.shape[1]:
        raise ValidationError("dtw needs the same channel count on both sides")
    return float(sum(_dtw_batch(a[None, :, c], b[None, :, c])[0] for c in range(a.shape[1])))


def _dtw_pairs(a: np.ndarray, b: np.ndarray, chunk: int = 2048) -> np.ndarray:
    """DTW for aligned stacks ``a[k]`` vs ``b[k]`` of shape ``(P, len, channels)``."""
    out = np.zeros(len(a))
    for s in range(0, len(a), chunk):
        for c in range(a.shape[2]):
            out[s:s + chunk] += _dtw_batch(a[s:s + chunk, :, c], b[s:s + chunk, :, c])
    return out


def _cosine_pairs(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    fa = a.reshape(len(a), -1)
    fb = b.reshape(len(b), -1)
    na, nb = np.linalg.norm(fa, axis=1), np.linalg.norm(fb, axis=1)
    if np.any(na == 0) or np.any(nb == 0):
        raise ValidationError("cosine similarity is undefined for zero-norm vectors")
    return np.clip(np.einsum("ij,ij->i", fa, fb) / (na * nb), -1.0, 1.0)


_PAIR_METRICS: dict[str, Callable[[np.ndarray, np.ndarray], np.ndarray]] = {
    "cosine": _cosine_pairs,
    "dtw": _dtw_pairs,
}


def _unrank_upper(r: np.ndarray, n: int) -> tuple[np.ndarray, np.ndarray]:
    # lexicographic index r -> (i, j), i < j, over an n x n strict upper triangle
    r = np.asarray(r, dtype=np.int64)
    i = n - 2 - np.floor(np.sqrt(-8.0 * r + 4.0 * n * (n - 1) - 7) / 2.0 - 0.5).astype(np.int64)
    i = np.clip(i, 0, max(n - 2, 0))

    def row_start(k):
        return k * (2 * n - k - 1) // 2

    # the float sqrt can land one row off for large n
    for _ in range(2):
        i = np.where(row_start(i) > r, i - 1, i)
        i = np.where(row_start(i + 1) <= r, i + 1, i)
    j = r - row_start(i) + i + 1
    return i, j


@dataclass
class PairStats:
    mean: float
    std: float
    n_pairs: int

    def to_dict(self) -> dict:
        return asdict(self)


def pair_indices(n_a: int, n_b: int | None, max_pairs: int, seed: int) -> tuple[np.ndarray, np.ndarray]:
    if n_b is None:
        total = n_a * (n_a - 1) // 2
        r = (np.arange(total) if total <= max_pairs
             else np.sort(np.random.default_rng(seed).choice(total, size=max_pairs, replace=False)))
        return _unrank_upper(r, n_a)
    total = n_a * n_b
    r = (np.arange(total) if total <= max_pairs
         else np.sort(np.random.default_rng(seed).choice(total, size=max_pairs, replace=False)))
    return r // n_b, r % n_b


def pairwise_stats(set_a, set_b=None, metric: str = "cosine", max_pairs: int = DEFAULT_MAX_PAIRS,
                   seed: int = 0) -> PairStats:
    """Mean and population std of ``metric`` over sequence pairs.

    With ``set_b`` omitted, pairs are the unordered distinct pairs within
    ``set_a``; otherwise all of ``set_a x set_b``. When the pair count exceeds
    ``max_pairs``, that many pairs are drawn without replacement under
    ``seed``.
    """
    if metric not in _PAIR_METRICS:
        raise ValidationError(f"unknown metric {metric!r}; choose from {sorted(_PAIR_METRICS)}")
    if max_pairs < 1:
        raise ValidationError("max_pairs must be positive")
    a = np.asarray(set_a, dtype=np.float64)
    if a.ndim == 2:
        a = a[:, :, None]
    if len(a) == 0:
        raise ValidationError("pairwise_stats needs non-empty sets")
    if set_b is None:
        if len(a) < 2:
            raise ValidationError("intra-set statistics need at least two sequences")
        i, j = pair_indices(len(a), None, max_pairs, seed)
        left, right = a[i], a[j]
    else:
        b = np.asarray(set_b, dtype=np.float64)
        if b.ndim == 2:
            b = b[:, :, None]
        if len(b) == 0:
            raise ValidationError("pairwise_stats needs non-empty sets")
        i, j = pair_indices(len(a), len(b), max_pairs, seed)
        left, right = a[i], b[j]
    vals = _PAIR_METRICS[metric](left, right)
    mean = math.fsum(vals) / len(vals)
    std = math.sqrt(math.fsum((vals - mean) ** 2) / len(vals))
    return PairStats(mean, std, int(len(vals)))


def uniform_random_windows(n: int, seq_len: int, num_bins: int, seed: int = 0) -> np.ndarray:
    """Baseline generator: every bin drawn uniformly and independently."""
    return np.random.default_rng(seed).integers(0, num_bins, size=(n, seq_len, len(CHANNELS)))


def to_windows(sequences: dict[str, np.ndarray] | Sequence[np.ndarray], length: int) -> np.ndarray:
    """Cut sequences into consecutive non-overlapping ``length``-day chunks."""
    seqs = sequences.values() if isinstance(sequences, dict) else sequences
    chunks = []
    for s in seqs:
        s = np.asarray(s, dtype=np.float64)
        for start in range(0, len(s) - length + 1, length):
            chunks.append(s[start:start + length])
    if not chunks:
        raise ValidationError(f"no sequence reaches {length} days")
    return np.stack(chunks)


# --------------------------------------------------------------------------
# feature export


def feature_names(length: int) -> list[str]:
    return [f"d{t}_{c}" for t in range(length) for c in CHANNELS]


def export_features(path, real: np.ndarray, generated: np.ndarray, spec: ScalerBinSpec,
                    real_ids: Sequence[str] | None = None,
                    generated_ids: Sequence[str] | None = None) -> int:
    """Write flattened scaled windows, one row per sequence, channel-interleaved.

    ``real`` and ``generated`` are ``(n, length, 3)`` arrays in original
    units. Returns the number of feature columns.
    """
    sets = []
    for label, arr, ids in (("real", real, real_ids), ("generated", generated, generated_ids)):
        arr = np.asarray(arr, dtype=np.float64)
        if arr.ndim != 3 or arr.shape[2] != len(CHANNELS):
            raise ValidationError(f"{label} sequences must have shape (n, length, 3)")
        ids = list(ids) if ids is not None else [f"{label}{i}" for i in range(len(arr))]
        if len(ids) != len(arr):
            raise ValidationError(f"{label}: one id per sequence required")
        sets.append((label, arr, ids))
    lengths = {arr.shape[1] for _, arr, _ in sets if len(arr)}
    if len(lengths) > 1:
        raise ValidationError("all exported sequences must share one length")
    length = lengths.pop() if lengths else 0
    names = feature_names(length)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["id", "set", *names])
        for label, arr, ids in sets:
            flat = scale_array(arr, spec).reshape(len(arr), -1)
            for sid, row in zip(ids, flat):
                w.writerow([sid, label, *(repr(float(v)) for v in row)])
    return len(names)


def read_features(path) -> tuple[list[str], list[str], np.ndarray]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        ids, labels, rows = [], [], []
        for row in reader:
            ids.append(row[0])
            labels.append(row[1])
            rows.append([float(v) for v in row[2:]])
    return ids, labels, np.array(rows).reshape(len(rows), len(header) - 2)


# --------------------------------------------------------------------------
# report


@dataclass
class EvalReport:
    mae: dict[str, float] | None
    cosine: dict[str, dict]
    dtw: dict[str, dict]
    counts: dict[str, int]
    seeds: dict[str, int]
    settings: dict = field(default_factory=dict)
    schema_version: int = REPORT_SCHEMA_VERSION

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def write(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.to_json())


def report_schema() -> dict:
    text = resources.files("wearagen").joinpath("schemas/eval_report.schema.json").read_text("utf-8")
    return json.loads(text)


def validate_report(report: dict) -> None:
    import jsonschema

    jsonschema.validate(report, report_schema())


def evaluate_sets(real_values: np.ndarray, generated_values: np.ndarray, spec: ScalerBinSpec,
                  max_pairs: int = DEFAULT_MAX_PAIRS, seed: int = 0,
                  cosine_space: str = "scaled", dtw_space: str = "original") -> tuple[dict, dict]:
    """Intra-real, intra-generated and cross cosine/DTW statistics.

    ``*_space`` selects whether a metric sees min/max-scaled or original-unit
    values.
    """
    spaces = {"scaled": lambda v: scale_array(v, spec), "original": lambda v: np.asarray(v, float)}
    for s in (cosine_space, dtw_space):
        if s not in spaces:
            raise ValidationError(f"unknown value space {s!r}")
    out = {}
    for metric, space in (("cosine", cosine_space), ("dtw", dtw_space)):
        real = spaces[space](real_values)
        gen = spaces[space](generated_values)
        out[metric] = {
            "intra_real": pairwise_stats(real, None, metric, max_pairs, seed).to_dict(),
            "intra_generated": pairwise_stats(gen, None, metric, max_pairs, seed).to_dict(),
            "cross": pairwise_stats(gen, real, metric, max_pairs, seed).to_dict(),
        }
    return out["cosine"], out["dtw"]


def write_summary_csv(path, rows: Sequence[tuple]) -> None:
    """Rows of ``(training_size, mae_hr, mae_sleep, mae_steps)``."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SUMMARY_HEADER)
        for r in rows:
            w.writerow([r[0], *(repr(float(v)) for v in r[1:])])
