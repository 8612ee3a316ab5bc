"""Sequential test driver: bet, reveal, update wealth, stop.

The driver multiplies per-step payoff factors into a log-wealth process,
tracks its running maximum (whose inverse is an anytime-valid p-value), and
stops at the first satisfied rule.  Rejection fires at wealth >= 1/alpha;
futility fires strictly below the futility threshold.  Wealth exactly zero
is absorbing, so the driver also stops there: no later rejection is possible.
For the closed-form mixture strategies the wealth is updated from the closed
form itself, which is the exact ratio update and is immune to drift.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence, Tuple

from .core import (
    IndicatorStream,
    RandomSource,
    StreamExhaustedError,
    TestState,
    check_alpha,
)
from .strategies import (
    Bet,
    StrategyConfig,
    aggressive_bet,
    binomial_bet,
    mimicked_logopt_bet,
    mixture_beta_log_wealth,
    mixture_uniform_log_wealth,
    passive_bet,
)

_NEG_INF = float("-inf")

STOP_REASONS = ("rejected", "futility", "exhausted", "external")


@dataclass
class StoppingRule:
    """When to end a run.

    ``reject_threshold`` is typically 1/alpha (Ville's inequality makes the
    crossing probability at most alpha under the null).  ``futility_threshold``
    of 0 disables the futility stop.  ``external_stop`` is an arbitrary
    predicate over the current state, checked after the built-in rules.
    """

    reject_threshold: float
    futility_threshold: float = 0.0
    max_steps: int = 10**6
    external_stop: Optional[Callable[[TestState], bool]] = None

    def __post_init__(self):
        if not self.reject_threshold > 1:
            raise ValueError("reject_threshold must exceed 1")
        if not 0 <= self.futility_threshold < 1:
            raise ValueError("futility_threshold must be in [0, 1)")
        if self.max_steps < 1:
            raise ValueError("max_steps must be at least 1")

    @classmethod
    def for_level(cls, alpha: float, *, futility: bool = True, max_steps: int = 10**6) -> "StoppingRule":
        check_alpha(alpha)
        return cls(
            reject_threshold=1.0 / alpha,
            futility_threshold=alpha if futility else 0.0,
            max_steps=max_steps,
        )


@dataclass
class TestOutcome:
    """Result of one sequential run.

    ``final_wealth`` is the e-value at the stopping time; ``p_value`` is the
    inverse running-maximum wealth clamped to at most 1.
    """

    stop_time: int
    stop_reason: str
    final_wealth: float
    p_value: float
    losses: int
    seed: Optional[int] = None
    trajectory: Optional[List[Tuple[int, int, float]]] = None

    @property
    def rejected(self) -> bool:
        return self.stop_reason == "rejected"

    def to_json(self) -> dict:
        return {
            "stop_time": self.stop_time,
            "stop_reason": self.stop_reason,
            "e_value": self.final_wealth,
            "p_value": self.p_value,
            "losses": self.losses,
            "seed": self.seed,
        }


@dataclass
class RoundedEValue:
    """Stochastically rounded e-value: either 0, the original wealth, or 1/alpha."""

    value: float
    uniform_draw: float


def run_test(
    stream: IndicatorStream,
    config: StrategyConfig,
    rule: StoppingRule,
    *,
    record_trajectory: bool = False,
    decimate: int = 1,
    seed: Optional[int] = None,
) -> TestOutcome:
    """Run one sequential test to its stopping time.

    Bets are chosen from past information only; for the binomial strategy the
    single-step look-ahead override applies (bet p = 0 whenever losing the
    next round would land below the futility threshold anyway).  The stream
    running out before any rule fires yields ``stop_reason == "exhausted"``,
    as does hitting ``max_steps``.
    """
    kind = config.kind
    log_reject = math.log(rule.reject_threshold)
    log_fut = math.log(rule.futility_threshold) if rule.futility_threshold > 0 else None
    state = TestState()
    traj: Optional[List[Tuple[int, int, float]]] = [] if record_trajectory else None
    reason = "exhausted"

    while state.t < rule.max_steps:
        t = state.t + 1
        losses = state.losses
        bet: Optional[Bet] = None
        if kind == "binomial":
            p_t = config.p
            if log_fut is not None and p_t > 0:
                look = state.log_wealth + math.log(p_t) + math.log((t + 1) / (losses + 1))
                if look < log_fut:
                    p_t = 0.0
            bet = binomial_bet(t, losses, p_t)
        elif kind == "passive":
            bet = passive_bet(t, losses)
        elif kind == "aggressive":
            bet = aggressive_bet(t, losses)
        elif kind == "mimicked_logopt":
            bet = mimicked_logopt_bet(t, losses, config.prior)

        try:
            ind = stream.next(state)
        except StreamExhaustedError:
            reason = "exhausted"
            break

        state.t = t
        state.losses = losses + ind
        if kind == "mixture_uniform":
            new_lw = mixture_uniform_log_wealth(t, state.losses, config.c)
        elif kind == "mixture_beta":
            new_lw = mixture_beta_log_wealth(t, state.losses, config.a, config.b)
        else:
            factor = bet.b1 if ind else bet.b0
            new_lw = state.log_wealth + math.log(factor) if factor > 0 else _NEG_INF
        state.log_wealth = new_lw
        if new_lw > state.max_log_wealth:
            state.max_log_wealth = new_lw
        if traj is not None and t % decimate == 0:
            traj.append((t, state.losses, new_lw))

        if new_lw >= log_reject:
            reason = "rejected"
            break
        if new_lw == _NEG_INF:
            reason = "futility"
            break
        if log_fut is not None and new_lw < log_fut:
            reason = "futility"
            break
        if rule.external_stop is not None and rule.external_stop(state):
            reason = "external"
            break

    if traj is not None and state.t > 0 and (not traj or traj[-1][0] != state.t):
        traj.append((state.t, state.losses, state.log_wealth))

    final_wealth = math.exp(state.log_wealth) if state.log_wealth > _NEG_INF else 0.0
    p_value = math.exp(-state.max_log_wealth) if state.max_log_wealth > 0 else 1.0
    return TestOutcome(
        stop_time=state.t,
        stop_reason=reason,
        final_wealth=final_wealth,
        p_value=p_value,
        losses=state.losses,
        seed=seed,
        trajectory=traj,
    )


def stochastic_round(final_wealth: float, alpha: float, source: RandomSource) -> RoundedEValue:
    """Randomized rounding of a stopped e-value.

    Draws one uniform U from a never-before-used stream and maps wealth W to
    W itself if W >= 1/alpha, else to 1/alpha when U <= W * alpha and to 0
    otherwise.  The rounded value is still an e-value, and rejecting when it
    reaches 1/alpha keeps the level at alpha.  The uniform must be sampled
    once, after stopping; the source's claim-once guard enforces that reuse
    raises instead of silently breaking validity.
    """
    check_alpha(alpha)
    if final_wealth < 0:
        raise ValueError("e-values are nonnegative")
    source.claim()
    u = float(source.generator().random())
    if final_wealth >= 1.0 / alpha:
        return RoundedEValue(final_wealth, u)
    if u <= final_wealth * alpha:
        return RoundedEValue(1.0 / alpha, u)
    return RoundedEValue(0.0, u)


def p_process_value(wealth_path: Sequence[float]) -> float:
    """Anytime-valid p-value of a wealth path: 1 / max(path), clamped to <= 1."""
    peak = max(wealth_path)
    if peak <= 1.0:
        return 1.0
    return 1.0 / peak
