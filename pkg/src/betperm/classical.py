"""Classical Monte-Carlo p-values and discrete p-to-e calibrators.

The fixed-horizon p-value, the stop-at-h-losses p-value, and its unbounded
variant all live on the discrete support {1/(T+1), ..., 1} (or {h/(h+N)}),
where exactness can be checked in rational arithmetic.  A calibrator mapping
such a p-value to an e-value is admissible exactly when its values over the
support sum to T + 1.
"""

from __future__ import annotations

import math
from fractions import Fraction
from typing import Iterable, NamedTuple, Sequence, Union

from .core import StreamExhaustedError

Number = Union[float, Fraction, int]


class OffSupportError(ValueError):
    """The p-value is not a support point r / (T + 1)."""


class BCResult(NamedTuple):
    p_value: Fraction
    stop_time: int
    losses: int


class NegBinResult(NamedTuple):
    p_value: Fraction
    stop_time: int


def perm_pvalue(losses: int, T: int) -> Fraction:
    """Fixed-horizon Monte-Carlo p-value (1 + losses) / (T + 1)."""
    if not 0 <= losses <= T:
        raise ValueError("need 0 <= losses <= T")
    return Fraction(1 + losses, T + 1)


def bc_pvalue(indicators: Iterable[int], h: int, T: int) -> BCResult:
    """Stop at the h-th loss or after T draws, whichever comes first.

    Returns h / stop_time when the h-th loss arrived, otherwise
    (losses + 1) / (T + 1).  Consumes the indicator iterable lazily and only
    up to the stopping time.
    """
    if h < 1:
        raise ValueError("h must be at least 1")
    if T < 1:
        raise ValueError("T must be at least 1")
    losses = 0
    t = 0
    for ind in indicators:
        t += 1
        losses += ind
        if losses >= h or t >= T:
            break
    if losses >= h:
        return BCResult(Fraction(h, t), t, losses)
    return BCResult(Fraction(losses + 1, T + 1), t, losses)


def negbin_pvalue(indicators: Iterable[int], h: int) -> NegBinResult:
    """Unbounded variant: p-value h / (time of the h-th loss).

    Raises StreamExhaustedError when the stream ends before the h-th loss.
    """
    if h < 1:
        raise ValueError("h must be at least 1")
    losses = 0
    t = 0
    for ind in indicators:
        t += 1
        losses += ind
        if losses >= h:
            return NegBinResult(Fraction(h, t), t)
    raise StreamExhaustedError(f"stream ended after {t} draws with {losses} < {h} losses")


_HARMONIC: list = [Fraction(0)]
_SQRT_SUMS: list = [0.0]


def harmonic_number(n: int) -> Fraction:
    """n-th harmonic number as an exact Fraction (cached prefix sums)."""
    if n < 1:
        raise ValueError("n must be at least 1")
    while len(_HARMONIC) <= n:
        k = len(_HARMONIC)
        _HARMONIC.append(_HARMONIC[-1] + Fraction(1, k))
    return _HARMONIC[n]


def sqrt_partial_sum(n: int) -> float:
    """Sum of 1/sqrt(i) for i = 1..n (cached prefix sums)."""
    if n < 1:
        raise ValueError("n must be at least 1")
    while len(_SQRT_SUMS) <= n:
        k = len(_SQRT_SUMS)
        _SQRT_SUMS.append(_SQRT_SUMS[-1] + 1.0 / math.sqrt(k))
    return _SQRT_SUMS[n]


def support_index(p: Number, T: int) -> int:
    """Index r with p == r / (T + 1); raises OffSupportError otherwise."""
    if isinstance(p, (Fraction, int)):
        r_exact = Fraction(p) * (T + 1)
        if r_exact.denominator != 1 or not 1 <= r_exact <= T + 1:
            raise OffSupportError(f"{p} is not on the support of a {T}-draw p-value")
        return int(r_exact)
    r = round(p * (T + 1))
    if not 1 <= r <= T + 1 or abs(p * (T + 1) - r) > 1e-9:
        raise OffSupportError(f"{p} is not on the support of a {T}-draw p-value")
    return r


def calibrate_harmonic(p: Number, T: int) -> Number:
    """Harmonic calibrator (T+1) / (r * v_{T+1}) at the support point r/(T+1).

    Admissible: the calibrated values average to exactly one under the null.
    Plugged into an e-value-based multiplicity procedure this reproduces the
    classical log-factor correction.
    """
    r = support_index(p, T)
    value = Fraction(T + 1, r) / harmonic_number(T + 1)
    return value if isinstance(p, (Fraction, int)) else float(value)


def calibrate_sqrt(p: Number, T: int) -> float:
    """Square-root calibrator ((T+1)/sqrt(r)) / s_{T+1}; beats 1/(2 sqrt(p))."""
    r = support_index(p, T)
    return ((T + 1) / math.sqrt(r)) / sqrt_partial_sum(T + 1)


def check_admissible(values: Sequence[Number], T: int) -> bool:
    """True when T+1 nonnegative calibrator values sum to exactly T + 1."""
    if len(values) != T + 1:
        raise ValueError(f"expected {T + 1} values, got {len(values)}")
    if any(v < 0 for v in values):
        raise ValueError("calibrator values must be nonnegative")
    total = sum(values)
    if all(isinstance(v, (Fraction, int)) for v in values):
        return total == T + 1
    return abs(total - (T + 1)) <= 1e-10 * max(1.0, T + 1)
