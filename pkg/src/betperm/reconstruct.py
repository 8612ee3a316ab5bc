"""Representing loss-count e-values as sequential betting strategies.

Any nonnegative payoff vector ``E_t`` over the loss count ``0..t`` that sums
to ``t + 1`` is a one-shot bet on the final loss count (which is uniform
under the exchangeable null).  The backward recursion

    E_{r-1}(l) = ((l + 1) E_r(l + 1) + (r - l) E_r(l)) / (r + 1)

splits it into per-step bets B_{r|l}(0) = E_r(l)/E_{r-1}(l) and
B_{r|l}(1) = E_r(l+1)/E_{r-1}(l) (with 0/0 = 0), whose running product along
any indicator path reproduces E_t(L_t) exactly.  Specializing the target to a
level-set vector yields anytime-valid generalizations of the fixed-horizon
Monte-Carlo p-value and of the stop-at-h-losses p-value.

All functions here accept ``fractions.Fraction`` values and then stay exact.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import List, Optional, Sequence, Tuple, Union

from .core import check_alpha

Number = Union[float, Fraction, int]

SUM_TOLERANCE = 1e-10


class InvalidTargetError(ValueError):
    """The target vector does not sum to horizon + 1."""


def _is_exact(values: Sequence[Number]) -> bool:
    return all(isinstance(v, (Fraction, int)) for v in values)


@dataclass
class EValueVector:
    """A payoff vector over the loss count after ``horizon`` draws."""

    values: List[Number]

    @property
    def horizon(self) -> int:
        return len(self.values) - 1

    def validate(self) -> "EValueVector":
        t = self.horizon
        if t < 0:
            raise InvalidTargetError("empty target vector")
        if any(v < 0 for v in self.values):
            raise InvalidTargetError("target values must be nonnegative")
        total = sum(self.values)
        if _is_exact(self.values):
            if total != t + 1:
                raise InvalidTargetError(f"target sums to {total}, expected {t + 1}")
        elif abs(total - (t + 1)) > SUM_TOLERANCE * max(1.0, t + 1):
            raise InvalidTargetError(f"target sums to {total}, expected {t + 1}")
        return self

    def to_json(self) -> dict:
        return {"horizon": self.horizon, "values": [float(v) for v in self.values]}


@dataclass
class ReconstructionTable:
    """Backward-reconstructed betting plan for a target payoff vector.

    ``levels[r]`` is the intermediate payoff vector after ``r`` draws
    (``levels[0] == [1]`` for an admissible target); ``bets[r - 1][l]`` is the
    pair (win factor, loss factor) placed at step ``r`` given ``l`` prior
    losses.
    """

    levels: List[List[Number]]
    bets: List[List[Tuple[Number, Number]]]

    @property
    def horizon(self) -> int:
        return len(self.levels) - 1

    def bet(self, r: int, losses: int) -> Tuple[Number, Number]:
        if not 1 <= r <= self.horizon:
            raise ValueError(f"step must be in 1..{self.horizon}")
        if not 0 <= losses <= r - 1:
            raise ValueError("losses must be in 0..r-1")
        return self.bets[r - 1][losses]

    def wealth_after(self, indicators: Sequence[int]) -> Number:
        """Running product of bet factors along an indicator path."""
        if len(indicators) > self.horizon:
            raise ValueError("path longer than the reconstruction horizon")
        wealth: Number = 1
        losses = 0
        for r, ind in enumerate(indicators, start=1):
            b0, b1 = self.bets[r - 1][losses]
            wealth = wealth * (b1 if ind else b0)
            losses += ind
        return wealth

    def to_json(self) -> dict:
        return {
            "horizon": self.horizon,
            "levels": [[float(v) for v in level] for level in self.levels],
            "bets": [
                [[float(b0), float(b1)] for (b0, b1) in row] for row in self.bets
            ],
        }


def backward_reconstruct(target: EValueVector) -> ReconstructionTable:
    """Split a loss-count payoff vector into per-step bets (exact for Fractions)."""
    target.validate()
    t = target.horizon
    levels: List[List[Number]] = [list(target.values)]
    for r in range(t, 0, -1):
        cur = levels[0]
        prev = [((l + 1) * cur[l + 1] + (r - l) * cur[l]) / (r + 1) for l in range(r)]
        levels.insert(0, prev)

    zero: Number = Fraction(0) if _is_exact(target.values) else 0.0
    bets: List[List[Tuple[Number, Number]]] = []
    for r in range(1, t + 1):
        prev, cur = levels[r - 1], levels[r]
        row: List[Tuple[Number, Number]] = []
        for l in range(r):
            denom = prev[l]
            if denom == 0:
                row.append((zero, zero))  # 0/0 = 0: the state is unreachable with positive wealth
            else:
                row.append((cur[l] / denom, cur[l + 1] / denom))
        bets.append(row)
    return ReconstructionTable(levels=levels, bets=bets)


def perm_target_evalue(T: int, alpha) -> EValueVector:
    """Level-set target: 1/alpha for the smallest loss counts, one partial entry.

    Entries are 1/alpha for l <= floor((T+1) alpha) - 1, the remainder
    a = T + 1 - floor((T+1) alpha)/alpha (with 0 <= a < 1/alpha) at the next
    slot, and zero above; the values sum to exactly T + 1.  Passing alpha as
    a Fraction keeps the vector exact.
    """
    check_alpha(alpha)
    exact = isinstance(alpha, Fraction)
    alpha_frac = alpha if exact else Fraction(alpha)
    k = int((T + 1) * alpha_frac)  # floor; alpha < 1 forces k <= T
    if exact:
        inv = 1 / alpha_frac
        a = (T + 1) - k / alpha_frac
        values: List[Number] = [inv] * k + [a] + [Fraction(0)] * (T - k)
    else:
        inv = 1.0 / alpha
        a = max((T + 1) - k / alpha, 0.0)
        values = [inv] * k + [a] + [0.0] * (T - k)
    return EValueVector(values)


def bc_horizon(h: int, alpha, T_max: Optional[int] = None) -> int:
    """Reconstruction horizon min(T_max, ceil(h / alpha) - 1) for the
    stop-at-``h``-losses target."""
    if h < 1:
        raise ValueError("h must be at least 1")
    check_alpha(alpha)
    alpha_frac = alpha if isinstance(alpha, Fraction) else Fraction(alpha)
    t = math.ceil(Fraction(h) / alpha_frac) - 1
    if T_max is not None:
        t = min(t, T_max)
    return int(t)


def anytime_perm_pvalue(losses: int, tau: int, T: int) -> Fraction:
    """Anytime-valid generalization of the fixed-horizon permutation p-value.

    Equals (losses + 1 + T - tau) / (T + 1): the p-value that would result if
    every remaining draw up to T were a loss.  At tau == T it reduces to the
    classical value; past T it is frozen.
    """
    if tau > T:
        tau = T
    if not 0 <= losses <= tau:
        raise ValueError("need 0 <= losses <= tau")
    return Fraction(losses + 1 + T - tau, T + 1)


def anytime_bc_pvalue(losses: int, tau: int, T_max, h: int) -> Fraction:
    """Anytime-valid generalization of the stop-at-``h``-losses p-value.

    Equals min(h / (tau + h - losses), (losses + 1 + T_max - tau) / (T_max + 1));
    ``T_max`` may be ``math.inf``, dropping the second branch.  The process is
    constant after the stopping time min(h-th loss, T_max).
    """
    if h < 1:
        raise ValueError("h must be at least 1")
    if not 0 <= losses <= tau:
        raise ValueError("need 0 <= losses <= tau")
    first = Fraction(h, tau + h - losses)
    if T_max is None or T_max == math.inf:
        return min(first, Fraction(1))
    if tau > T_max:
        tau = T_max
    second = Fraction(losses + 1 + T_max - tau, T_max + 1)
    return min(first, second)
