"""Autoregressive sampling of new activity days from a trained model."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .data import CHANNELS, ScalerBinSpec, dequantize_array
from .exceptions import ValidationError
from .model import NUM_TASKS, ModelConfig, forward, softmax

DEFAULT_TEMPERATURES = (1.0, 2.0, 2.0)
GENERATED_HEADER = ("prompt_id", "day", *CHANNELS)
TRACE_HEADER = ("prompt_id", "day", "bin_hr", "bin_sleep", "bin_steps")
LONG_HEADER = ("set", "sequence_id", "day", "channel", "value")


@dataclass
class GenerationConfig:
    horizon: int = 120
    temperatures: tuple[float, float, float] = DEFAULT_TEMPERATURES
    seed: int = 0

    def validate(self) -> None:
        if self.horizon < 1:
            raise ValidationError("horizon must be >= 1")
        if len(self.temperatures) != NUM_TASKS or any(not t > 0 for t in self.temperatures):
            raise ValidationError("need three strictly positive temperatures")


@dataclass
class GenerationResult:
    values: np.ndarray            # (n_prompts, horizon, 3), original units
    bins: np.ndarray              # (n_prompts, horizon, 3)
    final_windows: np.ndarray     # (n_prompts, seq_len, 3)
    prompt_ids: list[str] = field(default_factory=list)


def next_day_logits(windows: np.ndarray, params, config: ModelConfig) -> np.ndarray:
    """Last-position logits, shape ``(batch, 3, num_bins)``."""
    out = forward(windows, params, config, training=False, keep_cache=False)
    return out.logits[:, -1].astype(np.float64)


def next_day_distributions(window: np.ndarray, params, config: ModelConfig) -> np.ndarray:
    """Softmax of the final position's three task logit vectors.

    ``window`` is a single ``(seq_len, 3)`` window or a batch of them; the
    result is ``(3, num_bins)`` or ``(batch, 3, num_bins)`` respectively.
    """
    window = np.asarray(window, dtype=np.int64)
    single = window.ndim == 2
    probs = softmax(next_day_logits(window[None] if single else window, params, config), axis=-1)
    return probs[0] if single else probs


def tempered_probs(logits: np.ndarray, temperature: float) -> np.ndarray:
    if not temperature > 0:
        raise ValidationError("temperature must be > 0")
    return softmax(np.asarray(logits, dtype=np.float64) / temperature, axis=-1)


def temperature_sample(logits: np.ndarray, temperature: float, rng: np.random.Generator) -> int:
    """Draw one bin from ``softmax(logits / temperature)`` by inverse CDF."""
    p = tempered_probs(logits, temperature)
    cdf = np.cumsum(p)
    u = rng.random() * cdf[-1]
    return int(min(np.searchsorted(cdf, u, side="right"), len(p) - 1))


def generate(prompts: np.ndarray, params, model_config: ModelConfig, spec: ScalerBinSpec,
             config: GenerationConfig | None = None,
             prompt_ids: Sequence[str] | None = None) -> GenerationResult:
    """Roll the model forward ``config.horizon`` days from each prompt window.

    At every step the three next-day distributions are tempered and sampled
    independently, the oldest day is dropped and the sampled bins are
    appended. Prompt ``i`` draws from its own child of ``SeedSequence(seed)``.
    """
    config = config or GenerationConfig()
    config.validate()
    prompts = np.asarray(prompts, dtype=np.int64)
    if prompts.ndim == 2:
        prompts = prompts[None]
    if prompts.ndim != 3 or prompts.shape[1:] != (model_config.seq_len, NUM_TASKS):
        raise ValidationError(
            f"prompts must have shape (n, {model_config.seq_len}, 3), got {prompts.shape}")
    if spec.num_bins != model_config.num_bins:
        raise ValidationError("scaler bin count does not match the model")
    n = len(prompts)
    rngs = [np.random.default_rng(s) for s in np.random.SeedSequence(config.seed).spawn(n)]
    temps = np.asarray(config.temperatures, dtype=np.float64)

    window = prompts.copy()
    bins = np.empty((n, config.horizon, NUM_TASKS), dtype=np.int64)
    for day in range(config.horizon):
        probs = softmax(next_day_logits(window, params, model_config) / temps[None, :, None], axis=-1)
        cdf = np.cumsum(probs, axis=-1)
        for i in range(n):
            u = rngs[i].random(NUM_TASKS) * cdf[i, :, -1]
            for c in range(NUM_TASKS):
                bins[i, day, c] = min(np.searchsorted(cdf[i, c], u[c], side="right"),
                                      model_config.num_bins - 1)
        window = np.concatenate([window[:, 1:], bins[:, day:day + 1]], axis=1)

    ids = list(prompt_ids) if prompt_ids is not None else [f"g{i}" for i in range(n)]
    return GenerationResult(dequantize_array(bins, spec), bins, window, ids)


def select_prompts(num_windows: int, count: int, seed: int = 0) -> np.ndarray:
    """``count`` distinct window indices drawn uniformly under ``seed``."""
    if count < 1:
        raise ValidationError("need at least one prompt")
    if count > num_windows:
        raise ValidationError(f"requested {count} prompts but only {num_windows} windows exist")
    return np.sort(np.random.default_rng(seed).choice(num_windows, size=count, replace=False))


# --------------------------------------------------------------------------
# CSV output


def write_generated_csv(path, result: GenerationResult) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(GENERATED_HEADER)
        for pid, seq in zip(result.prompt_ids, result.values):
            for day, row in enumerate(seq):
                w.writerow([pid, day, *(repr(float(v)) for v in row)])


def write_bin_trace_csv(path, result: GenerationResult) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRACE_HEADER)
        for pid, seq in zip(result.prompt_ids, result.bins):
            for day, row in enumerate(seq):
                w.writerow([pid, day, *(int(b) for b in row)])


def write_long_csv(path, sequences: dict[str, dict[str, np.ndarray]]) -> None:
    """Long-format rows ``set,sequence_id,day,channel,value`` for plotting tools.

    ``sequences`` maps a set label (e.g. ``"real"``, ``"generated"``) to a
    mapping of sequence id to a ``(days, 3)`` array in original units.
    """
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(LONG_HEADER)
        for label, seqs in sequences.items():
            for sid, arr in seqs.items():
                for day, row in enumerate(np.asarray(arr)):
                    for name, v in zip(CHANNELS, row):
                        w.writerow([label, sid, day, name, repr(float(v))])


def read_generated_csv(path) -> dict[str, np.ndarray]:
    """Generated sequences keyed by prompt id, each ``(horizon, 3)``."""
    rows: dict[str, list[tuple[int, list[float]]]] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(header) != GENERATED_HEADER:
            raise ValidationError(f"{path}: expected header {','.join(GENERATED_HEADER)}")
        for row in reader:
            if not row:
                continue
            try:
                rows.setdefault(row[0], []).append((int(row[1]), [float(x) for x in row[2:5]]))
            except (ValueError, IndexError) as exc:
                raise ValidationError(f"{path}:{reader.line_num}: {exc}") from None
    out = {}
    for pid, items in rows.items():
        items.sort(key=lambda r: r[0])
        if [d for d, _ in items] != list(range(len(items))):
            raise ValidationError(f"{path}: prompt {pid} has non-contiguous days")
        out[pid] = np.array([v for _, v in items])
    return out
