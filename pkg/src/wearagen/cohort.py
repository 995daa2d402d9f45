"""Synthetic day-level activity cohorts.

Each individual has a fixed baseline per channel, an additive day-of-week
pattern and AR(1)-correlated noise. Heart rate and sleep get symmetric
Gaussian noise; steps get multiplicative log-normal noise so that large
single-day spikes occur, as they do in real step counts.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .data import DayRecord, IndividualSeries, MINUTES_PER_DAY, WINDOW_LEN
from .exceptions import ValidationError

# hard floors/ceilings applied after noise
HR_BOUNDS = (30.0, 220.0)
SLEEP_BOUNDS = (0.0, float(MINUTES_PER_DAY))


@dataclass
class ChannelParams:
    """Distribution of one channel.

    ``location``/``spread`` are the mean and standard deviation of the
    per-individual baseline; ``noise`` is the day-to-day noise scale (original
    units for heart rate and sleep, log units for steps); ``weekly_amplitude``
    scales the additive day-of-week pattern in original units.
    """

    location: float
    spread: float
    noise: float
    weekly_amplitude: float


def _default_hr():
    return ChannelParams(location=64.0, spread=7.0, noise=2.5, weekly_amplitude=1.0)


def _default_sleep():
    return ChannelParams(location=420.0, spread=40.0, noise=50.0, weekly_amplitude=25.0)


def _default_steps():
    return ChannelParams(location=8000.0, spread=2500.0, noise=0.45, weekly_amplitude=1200.0)


@dataclass
class CohortConfig:
    num_individuals: int = 200
    num_days: int = 365
    seed: int = 42
    hr: ChannelParams = field(default_factory=_default_hr)
    sleep: ChannelParams = field(default_factory=_default_sleep)
    steps: ChannelParams = field(default_factory=_default_steps)
    ar_coefficient: float = 0.6
    missingness_rate: float = 0.1

    def validate(self) -> None:
        if self.num_individuals < 1:
            raise ValidationError("num_individuals must be >= 1")
        if self.num_days < WINDOW_LEN:
            raise ValidationError(f"num_days must be >= {WINDOW_LEN}")
        if not 0.0 <= self.ar_coefficient < 1.0:
            raise ValidationError("ar_coefficient must lie in [0, 1)")
        if not 0.0 <= self.missingness_rate < 1.0:
            raise ValidationError("missingness_rate must lie in [0, 1)")
        for name in ("hr", "sleep", "steps"):
            p = getattr(self, name)
            if p.spread < 0 or p.noise < 0 or p.weekly_amplitude < 0:
                raise ValidationError(f"{name}: spread, noise and weekly_amplitude must be >= 0")
        if self.hr.location <= 0 or self.steps.location < 0:
            raise ValidationError("channel locations must respect the channel's range")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "CohortConfig":
        d = dict(d)
        for name in ("hr", "sleep", "steps"):
            if name in d and isinstance(d[name], dict):
                d[name] = ChannelParams(**d[name])
        return cls(**d)

    @classmethod
    def from_json(cls, path) -> "CohortConfig":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


def weekly_pattern(num_days: int, phase: int = 0) -> np.ndarray:
    dow = (np.arange(num_days) + phase) % 7
    return np.sin(2.0 * np.pi * dow / 7.0)


def ar1_noise(num_days: int, phi: float, scale: float, rng: np.random.Generator) -> np.ndarray:
    """Stationary AR(1) series with marginal standard deviation ``scale``."""
    eps = rng.standard_normal(num_days)
    out = np.empty(num_days)
    out[0] = eps[0] * scale
    innov = np.sqrt(1.0 - phi * phi) * scale
    for t in range(1, num_days):
        out[t] = phi * out[t - 1] + innov * eps[t]
    return out


def simulate_individual(individual_id: str, config: CohortConfig, rng: np.random.Generator) -> IndividualSeries:
    n = config.num_days
    phi = config.ar_coefficient
    week = weekly_pattern(n, phase=int(rng.integers(7)))

    hr_base = np.clip(rng.normal(config.hr.location, config.hr.spread), *HR_BOUNDS)
    sleep_base = np.clip(rng.normal(config.sleep.location, config.sleep.spread), *SLEEP_BOUNDS)
    steps_base = max(rng.normal(config.steps.location, config.steps.spread), 0.0)

    hr = hr_base + config.hr.weekly_amplitude * week + ar1_noise(n, phi, config.hr.noise, rng)
    sleep = sleep_base + config.sleep.weekly_amplitude * week + ar1_noise(n, phi, config.sleep.noise, rng)
    # mean-one multiplicative noise keeps E[steps | weekday] on the additive pattern
    sigma = config.steps.noise
    log_noise = ar1_noise(n, phi, sigma, rng) - 0.5 * sigma * sigma
    steps = np.maximum(steps_base + config.steps.weekly_amplitude * week, 0.0) * np.exp(log_noise)

    hr = np.clip(hr, *HR_BOUNDS)
    sleep = np.clip(np.round(sleep), *SLEEP_BOUNDS)
    steps = np.maximum(np.round(steps), 0.0)

    low = rng.random(n) < config.missingness_rate
    coverage = np.where(low, rng.uniform(0.2, 0.8, n), rng.uniform(0.85, 1.0, n))
    coverage = np.round(coverage, 4)
    coverage[low] = np.minimum(coverage[low], 0.7999)

    days = [
        DayRecord(individual_id, t, float(np.round(hr[t], 2)), float(sleep[t]), float(steps[t]),
                  float(coverage[t]))
        for t in range(n)
    ]
    return IndividualSeries(individual_id, days)


def simulate_cohort(config: CohortConfig | None = None) -> list[IndividualSeries]:
    """Generate ``config.num_individuals`` independent series.

    Every individual draws from its own child of ``SeedSequence(config.seed)``,
    so results do not depend on generation order.
    """
    config = config or CohortConfig()
    config.validate()
    children = np.random.SeedSequence(config.seed).spawn(config.num_individuals)
    width = len(str(config.num_individuals - 1))
    return [
        simulate_individual(f"p{i:0{width}d}", config, np.random.default_rng(child))
        for i, child in enumerate(children)
    ]
