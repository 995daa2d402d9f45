"""Teacher-forced next-day training.

Every position ``t < seq_len - 1`` predicts the three bins of day ``t + 1``.
Per-task cross-entropies are mixed with a fresh random unit-norm weight
vector at each optimization step (shake-shake), and parameters are updated
with bias-corrected Adam under a step-decay learning-rate schedule.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .exceptions import NumericalError, ValidationError
from .model import (
    NUM_TASKS, ModelConfig, backward, check_params, forward, init_params, log_softmax,
    save_checkpoint, softmax,
)

logger = logging.getLogger(__name__)

LOSS_LOG_HEADER = ("epoch", "step", "lr", "loss_hr", "loss_sleep", "loss_steps", "loss_combined")
EQUAL_WEIGHTS = np.full(NUM_TASKS, 1.0 / math.sqrt(NUM_TASKS))


@dataclass
class TrainConfig:
    epochs: int = 15
    lr: float = 1e-3
    decay_factor: float = 10.0
    decay_interval: int = 5
    batch_size: int = 64
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    split: tuple[float, float, float] = (0.8, 0.1, 0.1)
    dtype: str = "float32"

    def validate(self) -> None:
        if self.epochs < 0:
            raise ValidationError("epochs must be >= 0")
        if self.batch_size < 1:
            raise ValidationError("batch_size must be positive")
        if self.lr <= 0 or self.decay_factor <= 0 or self.decay_interval < 1:
            raise ValidationError("lr, decay_factor and decay_interval must be positive")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1 and self.eps > 0):
            raise ValidationError("invalid Adam hyperparameters")
        if len(self.split) != 3 or min(self.split) < 0 or not math.isclose(sum(self.split), 1.0):
            raise ValidationError("split fractions must be three non-negative values summing to 1")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["split"] = list(self.split)
        return d


@dataclass
class ShakeShakeWeights:
    alpha: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.alpha, dtype=np.float64)
        if a.shape != (NUM_TASKS,) or np.any(a < 0) or abs(np.linalg.norm(a) - 1.0) > 1e-9:
            raise ValidationError(f"shake weights must be non-negative with unit norm, got {a}")
        self.alpha = a


@dataclass
class OptimizerState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    step: int = 0

    @classmethod
    def zeros_like(cls, params: dict[str, np.ndarray]) -> "OptimizerState":
        return cls({k: np.zeros_like(p) for k, p in params.items()},
                   {k: np.zeros_like(p) for k, p in params.items()}, 0)


# --------------------------------------------------------------------------
# data splitting


def _split_counts(n: int, fractions: Sequence[float]) -> list[int]:
    # largest remainder: floor counts, leftover individuals to the largest fractional parts
    raw = [f * n for f in fractions]
    counts = [int(math.floor(r + 1e-9)) for r in raw]
    order = sorted(range(len(raw)), key=lambda i: (-(raw[i] - counts[i]), i))
    for i in order[: n - sum(counts)]:
        counts[i] += 1
    return counts


def split_by_individual(individuals: Sequence, fractions=(0.8, 0.1, 0.1),
                        seed: int = 0) -> tuple[list, list, list]:
    """Shuffle individuals under ``seed`` and cut them into train/val/test.

    A split with a positive fraction that ends up empty raises.
    """
    fractions = tuple(float(f) for f in fractions)
    if len(fractions) != 3 or min(fractions) < 0 or not math.isclose(sum(fractions), 1.0):
        raise ValidationError("fractions must be three non-negative values summing to 1")
    ids = list(dict.fromkeys(individuals))
    counts = _split_counts(len(ids), fractions)
    for name, f, c in zip(("train", "val", "test"), fractions, counts):
        if f > 0 and c == 0:
            raise ValidationError(f"{name} split receives zero individuals")
    perm = np.random.default_rng(seed).permutation(len(ids))
    shuffled = [ids[i] for i in perm]
    a, b = counts[0], counts[0] + counts[1]
    return shuffled[:a], shuffled[a:b], shuffled[b:]


def subsample_individuals(individuals: Sequence, fraction: float, seed: int = 0) -> list:
    """Random subset of ``max(1, round(fraction * n))`` individuals, order preserved."""
    if not 0 < fraction <= 1:
        raise ValidationError("fraction must lie in (0, 1]")
    ids = list(dict.fromkeys(individuals))
    k = max(1, int(round(fraction * len(ids))))
    chosen = set(np.random.default_rng(seed).choice(len(ids), size=k, replace=False).tolist())
    return [x for i, x in enumerate(ids) if i in chosen]


# --------------------------------------------------------------------------
# losses


def cross_entropy(logits: np.ndarray, targets: np.ndarray) -> float:
    """Mean next-step negative log-likelihood for one task.

    ``logits`` has shape ``(..., seq_len, num_bins)`` and ``targets`` the
    matching ``(..., seq_len)`` bin sequence; position ``t`` is scored
    against ``targets[t + 1]``, so the last position carries no target.
    """
    return cross_entropy_with_grad(logits, targets)[0]


def cross_entropy_with_grad(logits, targets):
    logits = np.asarray(logits)
    targets = np.asarray(targets, dtype=np.int64)
    nb = logits.shape[-1]
    if targets.shape != logits.shape[:-1]:
        raise ValidationError("targets must match logits without the bin axis")
    if targets.size and (targets.min() < 0 or targets.max() >= nb):
        raise ValidationError(f"target bin outside [0, {nb - 1}]")
    pred = logits[..., :-1, :].astype(np.float64)
    tgt = targets[..., 1:]
    logp = log_softmax(pred, axis=-1)
    picked = np.take_along_axis(logp, tgt[..., None], axis=-1)[..., 0]
    count = picked.size
    loss = -picked.sum() / count
    dpred = softmax(pred, axis=-1)
    np.put_along_axis(dpred, tgt[..., None],
                      np.take_along_axis(dpred, tgt[..., None], axis=-1) - 1.0, axis=-1)
    grad = np.zeros(logits.shape, dtype=np.float64)
    grad[..., :-1, :] = dpred / count
    return float(loss), grad


def task_losses(logits: np.ndarray, windows: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-task losses (3,) and the gradient of each w.r.t. the logits."""
    losses = np.empty(NUM_TASKS)
    grads = np.zeros(logits.shape, dtype=np.float64)
    for c in range(NUM_TASKS):
        losses[c], grads[:, :, c, :] = cross_entropy_with_grad(logits[:, :, c, :], windows[:, :, c])
    return losses, grads


def sample_shake_weights(rng: np.random.Generator) -> ShakeShakeWeights:
    """|N(0, 1)| triple scaled to unit L2 norm.

    The direction is uniform on the positive octant of the sphere, so each
    component has marginal Uniform(0, 1) distribution and mean 1/2.
    """
    z = np.abs(np.asarray(rng.standard_normal(NUM_TASKS), dtype=np.float64))
    norm = np.linalg.norm(z)
    if norm == 0.0:
        return ShakeShakeWeights(EQUAL_WEIGHTS.copy())
    return ShakeShakeWeights(z / norm)


def combine_losses(losses: np.ndarray, weights: ShakeShakeWeights) -> float:
    return float(np.dot(weights.alpha, losses))


# --------------------------------------------------------------------------
# optimizer


def adam_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray], state: OptimizerState,
              lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
    """One bias-corrected Adam update, applied to ``params`` in place."""
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NumericalError(f"non-finite gradient for {name}")
        if g.shape != params[name].shape:
            raise ValidationError(f"{name}: gradient shape {g.shape} != {params[name].shape}")
    state.step += 1
    t = state.step
    bc1 = 1.0 - beta1 ** t
    bc2 = 1.0 - beta2 ** t
    for name, g in grads.items():
        m, v = state.m[name], state.v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * (g * g)
        params[name] -= (lr * (m / bc1) / (np.sqrt(v / bc2) + eps)).astype(params[name].dtype)
    return params, state


def lr_at_epoch(epoch: int, config: TrainConfig) -> float:
    if not 0 <= epoch < max(config.epochs, 1):
        raise ValidationError(f"epoch {epoch} outside [0, {config.epochs})")
    return config.lr / config.decay_factor ** (epoch // config.decay_interval)


# --------------------------------------------------------------------------
# training loop


def evaluate_loss(windows: np.ndarray, params, config: ModelConfig, batch_size: int = 256) -> dict:
    """Teacher-forced losses with equal 1/sqrt(3) task weights and dropout off."""
    windows = np.asarray(windows, dtype=np.int64)
    if len(windows) == 0:
        raise ValidationError("evaluate_loss needs at least one window")
    totals = np.zeros(NUM_TASKS)
    for start in range(0, len(windows), batch_size):
        w = windows[start:start + batch_size]
        out = forward(w, params, config, training=False, keep_cache=False)
        for c in range(NUM_TASKS):
            totals[c] += cross_entropy(out.logits[:, :, c, :], w[:, :, c]) * len(w)
    losses = totals / len(windows)
    return {"per_task": losses, "combined": combine_losses(losses, ShakeShakeWeights(EQUAL_WEIGHTS))}


class TrainingDiverged(NumericalError):
    def __init__(self, message, params=None, last_checkpoint=None):
        super().__init__(message)
        self.params = params
        self.last_checkpoint = last_checkpoint


@dataclass
class TrainResult:
    params: dict[str, np.ndarray]
    loss_log: list[dict] = field(default_factory=list)
    val_log: list[dict] = field(default_factory=list)
    checkpoints: list[Path] = field(default_factory=list)


def write_loss_log(path, rows: list[dict]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=LOSS_LOG_HEADER, lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: (repr(r[k]) if isinstance(r[k], float) else r[k]) for k in LOSS_LOG_HEADER})


def train(windows: np.ndarray, model_config: ModelConfig, train_config: TrainConfig | None = None,
          val_windows: np.ndarray | None = None, out_dir=None, params: dict | None = None,
          max_steps: int | None = None, checkpoint_extra: dict | None = None) -> TrainResult:
    """Fit ``params`` on ``windows`` (bin indices, shape ``(n, seq_len, 3)``).

    When ``out_dir`` is given, a checkpoint is written after every epoch
    (``epoch01.agck`` ...) plus ``final.agck``, and the per-step losses go to
    ``loss_log.csv``. ``max_steps`` stops early after that many updates.
    Raises :class:`TrainingDiverged` on a non-finite loss; the checkpoint of
    the last completed epoch stays on disk.
    """
    train_config = train_config or TrainConfig()
    train_config.validate()
    windows = np.asarray(windows, dtype=np.int64)
    if windows.ndim != 3 or len(windows) == 0:
        raise ValidationError("train needs a non-empty (n, seq_len, 3) window array")
    if windows.shape[1] != model_config.seq_len:
        raise ValidationError(f"window length {windows.shape[1]} != seq_len {model_config.seq_len}")
    if windows.min() < 0 or windows.max() >= model_config.num_bins:
        raise ValidationError("window bins outside the model's bin range")

    seeds = np.random.SeedSequence(train_config.seed).spawn(4)
    if params is None:
        params = init_params(model_config, np.random.default_rng(seeds[0]),
                             dtype=np.dtype(train_config.dtype))
    check_params(params, model_config)
    order_rng = np.random.default_rng(seeds[1])
    shake_rng = np.random.default_rng(seeds[2])
    drop_rng = np.random.default_rng(seeds[3])
    state = OptimizerState.zeros_like(params)

    out_dir = Path(out_dir) if out_dir is not None else None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
    extra = dict(checkpoint_extra or {})
    result = TrainResult(params)
    last_ckpt = None

    def _save(name, epoch):
        path = out_dir / name
        save_checkpoint(path, params, model_config, {**extra, "epoch": epoch, "step": state.step})
        result.checkpoints.append(path)
        return path

    if train_config.epochs == 0 and out_dir is not None:
        _save("final.agck", 0)

    n = len(windows)
    step = 0
    done = False
    for epoch in range(train_config.epochs):
        lr = lr_at_epoch(epoch, train_config)
        perm = order_rng.permutation(n)
        for start in range(0, n, train_config.batch_size):
            batch = windows[perm[start:start + train_config.batch_size]]
            out = forward(batch, params, model_config, training=True, rng=drop_rng)
            losses, dlogits_task = task_losses(out.logits, batch)
            alpha = sample_shake_weights(shake_rng)
            combined = combine_losses(losses, alpha)
            if not math.isfinite(combined):
                raise TrainingDiverged(f"non-finite loss at epoch {epoch}, step {step}",
                                       params=params, last_checkpoint=last_ckpt)
            dlogits = dlogits_task * alpha.alpha[None, None, :, None]
            grads = backward(out, dlogits, params, model_config)
            adam_step(params, grads, state, lr, train_config.beta1, train_config.beta2,
                      train_config.eps)
            step += 1
            result.loss_log.append(dict(epoch=epoch, step=step, lr=lr, loss_hr=float(losses[0]),
                                        loss_sleep=float(losses[1]), loss_steps=float(losses[2]),
                                        loss_combined=combined))
            if max_steps is not None and step >= max_steps:
                done = True
                break
        if val_windows is not None and len(val_windows):
            val = evaluate_loss(val_windows, params, model_config)
            result.val_log.append({"epoch": epoch, "combined": val["combined"],
                                   "per_task": val["per_task"].tolist()})
            logger.info("epoch %d: train %.4f val %.4f", epoch, combined, val["combined"])
        if out_dir is not None:
            last_ckpt = _save(f"epoch{epoch + 1:02d}.agck", epoch + 1)
        if done:
            break

    if out_dir is not None:
        if train_config.epochs:
            _save("final.agck", train_config.epochs)
        write_loss_log(out_dir / "loss_log.csv", result.loss_log)
    return result
