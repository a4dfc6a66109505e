"""Trading policies: pure decision functions from predictions to actions.

Three policies share one state machine (at most one open position,
hold until the opposite move is predicted, no direct flips):

* normal   - enter on the argmax direction, size mu;
* softmax  - additionally require max(p) > alpha to enter;
* bayesian - enter on the MC-averaged vector with max(p_bar) > alpha and
  size by predictive entropy: 1.5*mu below beta1, mu inside
  [beta1, beta2], 0.5*mu above beta2.

The bayesian exit defaults to "opposite direction AND entropy < beta2";
the literal entropy-only exit is selectable for comparison.  mu is a
fraction (default 30%) of the level-1 volume on the entered side.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Union

import numpy as np

from .lobdata import Snapshot

LONG = 1
SHORT = -1
FLAT = 0

EXIT_OPPOSITE_AND_CONFIDENT = "opposite_and_confident"
EXIT_ENTROPY_ONLY = "entropy_only"

# Probability vector order [p(up), p(neutral), p(down)] -> direction.
_DIRECTIONS = (LONG, FLAT, SHORT)


class PositionError(RuntimeError):
    """An action inconsistent with the current position state."""


@dataclass(frozen=True)
class PositionState:
    """Open-position bookkeeping; flat iff size == 0."""

    side: int = FLAT  # +1 long, -1 short, 0 flat
    size: int = 0
    entry_timestamp: int = -1

    def __post_init__(self):
        if (self.side == FLAT) != (self.size == 0):
            raise PositionError(f"inconsistent state: side={self.side} size={self.size}")
        if self.size < 0:
            raise PositionError("negative position size")

    @property
    def is_flat(self) -> bool:
        return self.side == FLAT


@dataclass(frozen=True)
class Hold:
    pass


@dataclass(frozen=True)
class Enter:
    side: int
    size: int


@dataclass(frozen=True)
class Exit:
    pass


Action = Union[Hold, Enter, Exit]


@dataclass(frozen=True)
class StrategyConfig:
    kind: str = "bayesian"  # "normal", "softmax" or "bayesian"
    alpha: float = 0.7
    beta1: float = 0.1
    beta2: float = 0.9
    size_fraction: float = 0.30
    M: int = 100
    exit_rule: str = EXIT_OPPOSITE_AND_CONFIDENT

    def validate(self) -> None:
        if self.kind not in ("normal", "softmax", "bayesian"):
            raise ValueError(f"unknown strategy kind '{self.kind}'")
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError("alpha must be in [0, 1]")
        if not self.beta1 < self.beta2:
            raise ValueError("beta1 must be < beta2")
        if not 0.0 < self.size_fraction <= 1.0:
            raise ValueError("size_fraction must be in (0, 1]")
        if self.M < 1:
            raise ValueError("M must be >= 1")
        if self.exit_rule not in (EXIT_OPPOSITE_AND_CONFIDENT, EXIT_ENTROPY_ONLY):
            raise ValueError(f"unknown exit rule '{self.exit_rule}'")


@dataclass(frozen=True)
class Prediction:
    """Per-anchor model output: probability vector, plus predictive
    entropy when MC sampling ran (bayesian strategy)."""

    p: np.ndarray  # (3,) [up, neutral, down]
    entropy: float | None = None


def direction(p: np.ndarray) -> int:
    """Argmax direction: +1 up, -1 down, 0 neutral.

    Any tie at the maximum counts as no clear prediction (neutral).
    """
    p = np.asarray(p)
    m = p.max()
    winners = np.flatnonzero(p == m)
    if len(winners) != 1:
        return FLAT
    return _DIRECTIONS[winners[0]]


def base_size(s: Snapshot, side: int, fraction: float) -> int:
    """mu: floor(fraction x level-1 volume) of the entered side, min 1.

    Long positions size against the best ask queue, shorts against the
    best bid queue.
    """
    vol = s.asks[0][1] if side == LONG else s.bids[0][1]
    if vol <= 0:
        raise ValueError("level-1 volume must be positive")
    return max(1, math.floor(fraction * vol))


def _scaled_size(mu: int, mult: float) -> int:
    return max(1, math.floor(mult * mu))


def normal_decide(p: np.ndarray, state: PositionState, mu: tuple[int, int]) -> Action:
    """Enter on the argmax direction; hold until the opposite move.

    `mu` is the (long, short) base size pair at the current snapshot.
    """
    d = direction(p)
    if state.is_flat:
        if d == LONG:
            return Enter(LONG, mu[0])
        if d == SHORT:
            return Enter(SHORT, mu[1])
        return Hold()
    if d == -state.side:
        return Exit()
    return Hold()


def softmax_decide(
    p: np.ndarray, alpha: float, state: PositionState, mu: tuple[int, int]
) -> Action:
    """Like normal_decide, but entry also needs max(p) strictly > alpha.

    No extra constraint on exits.
    """
    if state.is_flat and not np.max(p) > alpha:
        return Hold()
    return normal_decide(p, state, mu)


def bayesian_decide(
    p_bar: np.ndarray,
    entropy: float,
    cfg: StrategyConfig,
    state: PositionState,
    mu: tuple[int, int],
) -> Action:
    """Entropy-sized entries on the MC-averaged probability vector.

    Entry needs a directional argmax with max(p_bar) > alpha; size is
    1.5*mu when entropy < beta1, mu inside [beta1, beta2], 0.5*mu above
    beta2 (floored to shares, min 1).  The default exit needs both the
    opposite-direction argmax and entropy < beta2; the literal
    entropy-only rule fires on entropy < beta2 alone.
    """
    d = direction(p_bar)
    if state.is_flat:
        if d == FLAT or not np.max(p_bar) > cfg.alpha:
            return Hold()
        if entropy < cfg.beta1:
            mult = 1.5
        elif entropy > cfg.beta2:
            mult = 0.5
        else:
            mult = 1.0
        base = mu[0] if d == LONG else mu[1]
        return Enter(d, _scaled_size(base, mult))
    if cfg.exit_rule == EXIT_ENTROPY_ONLY:
        return Exit() if entropy < cfg.beta2 else Hold()
    if d == -state.side and entropy < cfg.beta2:
        return Exit()
    return Hold()


def decide(
    cfg: StrategyConfig, pred: Prediction, state: PositionState, mu: tuple[int, int]
) -> Action:
    """Dispatch to the configured policy."""
    if cfg.kind == "normal":
        return normal_decide(pred.p, state, mu)
    if cfg.kind == "softmax":
        return softmax_decide(pred.p, cfg.alpha, state, mu)
    if pred.entropy is None:
        raise ValueError("bayesian strategy needs predictive entropy")
    return bayesian_decide(pred.p, pred.entropy, cfg, state, mu)
