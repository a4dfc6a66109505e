"""Seeded synthetic LOB days with controllable predictability.

The mid-price follows a regime-switching drift+noise walk: each regime
has a per-event drift (ticks), a noise std (ticks) and a geometric
holding time with the configured mean; on a switch the next regime is
drawn uniformly among the other regimes.  Ten book levels are placed
around the rounded mid with a fixed spread, one-tick level gaps and
uniform-integer volumes.

Everything is driven by named substreams of the counter-based PRNG
("regime", "price", "volume" per day), so `regime_trace` can reproduce
the ground-truth regime sequence without generating prices, and days
can be generated in parallel in any order.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .lobdata import N_LEVELS, Day
from .rng import CounterRng

_TS_BASE = 34_200_000_000_000  # 09:30:00 in ns since midnight
_TS_STEP = 1_000_000  # one event per millisecond


@dataclass(frozen=True)
class RegimeSpec:
    drift: float  # ticks per event
    noise: float  # ticks, std of per-event shock
    mean_duration: float  # events, mean geometric holding time


@dataclass(frozen=True)
class SynthConfig:
    seed: int
    n_days: int = 2
    events_per_day: int = 2000
    regimes: tuple[RegimeSpec, ...] = (
        RegimeSpec(drift=0.05, noise=0.5, mean_duration=200.0),
        RegimeSpec(drift=-0.05, noise=0.5, mean_duration=200.0),
    )
    spread: int = 2  # ticks between best ask and best bid
    level_volume_mean: int = 500  # shares, mean of uniform volume draw
    start_price: int = 20000  # ticks
    level_gap: int = 1  # ticks between adjacent levels

    def validate(self) -> None:
        if self.n_days < 1:
            raise ValueError("n_days must be >= 1")
        if self.events_per_day < 2:
            raise ValueError("events_per_day must be >= 2 (and > T + k for windows)")
        if not self.regimes:
            raise ValueError("at least one regime required")
        for r in self.regimes:
            if r.noise < 0:
                raise ValueError("noise std must be >= 0")
            if r.mean_duration < 1:
                raise ValueError("mean regime duration must be >= 1 event")
        if self.spread < 1:
            raise ValueError("spread must be >= 1 tick")
        if self.level_gap < 1:
            raise ValueError("level gap must be >= 1 tick")
        if self.level_volume_mean < 1:
            raise ValueError("level_volume_mean must be >= 1 share")
        depth = self.spread + (N_LEVELS - 1) * self.level_gap
        if self.start_price <= 2 * depth:
            raise ValueError("start_price too small for the book depth")


def _day_regime_trace(cfg: SynthConfig, day: int) -> np.ndarray:
    rng = CounterRng.from_seed(cfg.seed, "regime", day)
    n_regimes = len(cfg.regimes)
    trace = np.empty(cfg.events_per_day, dtype=np.int64)
    current = rng.integers(0, n_regimes - 1) if n_regimes > 1 else 0
    switch_p = [1.0 / r.mean_duration for r in cfg.regimes]
    for e in range(cfg.events_per_day):
        trace[e] = current
        if n_regimes > 1 and rng.uniform() < switch_p[current]:
            others = [i for i in range(n_regimes) if i != current]
            current = others[rng.integers(0, len(others) - 1)]
    return trace


def regime_trace(cfg: SynthConfig) -> list[np.ndarray]:
    """Ground-truth per-event regime index for every day."""
    cfg.validate()
    return [_day_regime_trace(cfg, d) for d in range(cfg.n_days)]


def _generate_day(cfg: SynthConfig, day: int) -> Day:
    n = cfg.events_per_day
    trace = _day_regime_trace(cfg, day)
    drift = np.array([r.drift for r in cfg.regimes])[trace]
    noise = np.array([r.noise for r in cfg.regimes])[trace]

    rng_price = CounterRng.from_seed(cfg.seed, "price", day)
    eps = rng_price.normal((n,))
    inc = drift + noise * eps
    inc[0] = 0.0
    latent = cfg.start_price + np.cumsum(inc)
    mid = np.rint(latent).astype(np.int64)

    half_lo = cfg.spread // 2
    half_hi = cfg.spread - half_lo
    offsets = cfg.level_gap * np.arange(N_LEVELS, dtype=np.int64)
    ask_p = (mid + half_hi)[:, None] + offsets[None, :]
    bid_p = (mid - half_lo)[:, None] - offsets[None, :]

    rng_vol = CounterRng.from_seed(cfg.seed, "volume", day)
    vol_hi = max(1, 2 * cfg.level_volume_mean - 1)
    vols = rng_vol.integers(1, vol_hi, (n, 2 * N_LEVELS))
    ask_v = vols[:, :N_LEVELS]
    bid_v = vols[:, N_LEVELS:]

    ts = _TS_BASE + _TS_STEP * np.arange(n, dtype=np.int64)
    return Day(day_id=day, ts=ts, ask_p=ask_p, ask_v=ask_v, bid_p=bid_p, bid_v=bid_v)


def generate(cfg: SynthConfig) -> list[Day]:
    """Generate all configured days; deterministic for a fixed seed."""
    cfg.validate()
    return [_generate_day(cfg, d) for d in range(cfg.n_days)]


def generate_day(cfg: SynthConfig, day: int) -> Day:
    """Generate a single day (used for parallel generation)."""
    cfg.validate()
    if not 0 <= day < cfg.n_days:
        raise ValueError(f"day {day} outside [0, {cfg.n_days})")
    return _generate_day(cfg, day)
