"""Core domain types: seeded randomness, win/loss indicator streams, test state.

A sequential Monte-Carlo test consumes a stream of binary indicators where
1 means the freshly generated statistic reached the observed one (a "loss"
for the bettor) and 0 means it fell short (a "win").  Under the exchangeable
null, given ``losses`` losses in the first ``t`` draws the next draw is a
loss with probability ``(losses + 1) / (t + 2)``, i.e. a Polya urn.

Every stream is driven by an explicitly seeded generator so that runs replay
bit-identically; parallel workers get independent streams by mixing a master
seed with a stream id.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Iterator, Optional, Sequence

import numpy as np

DEFAULT_MAX_STREAM_LEN = 10**6

_MASK64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15


class StreamExhaustedError(Exception):
    """An indicator stream cannot produce another value."""


class StreamReuseError(Exception):
    """A single-use random stream was claimed twice."""


def check_alpha(alpha) -> float:
    """Validate a significance level lies strictly inside (0, 1)."""
    if not 0 < alpha < 1:
        raise ValueError(f"alpha must be in (0, 1), got {alpha!r}")
    return alpha


def mix_seed(master_seed: int, stream_id: int) -> int:
    """Combine (master_seed, stream_id) into a single 64-bit seed.

    The pair is folded together and passed through the splitmix64
    finalizer, a fixed avalanche mix that is bijective in each argument,
    so nearby stream ids give statistically unrelated generators and the
    mapping is identical on every platform.
    """
    z = (master_seed ^ ((stream_id * _GOLDEN) & _MASK64)) & _MASK64
    z = (z + _GOLDEN) & _MASK64
    z ^= z >> 30
    z = (z * 0xBF58476D1CE4E5B9) & _MASK64
    z ^= z >> 27
    z = (z * 0x94D049BB133111EB) & _MASK64
    z ^= z >> 31
    return z


@dataclass
class RandomSource:
    """Names one logical random stream as a (master_seed, stream_id) pair."""

    master_seed: int
    stream_id: int = 0
    _claimed: bool = field(default=False, init=False, repr=False)

    def generator(self) -> np.random.Generator:
        """Fresh PCG64 generator seeded from the mixed pair."""
        return np.random.Generator(
            np.random.PCG64(mix_seed(self.master_seed, self.stream_id))
        )

    def derive(self, substream_id: int) -> "RandomSource":
        """Child source: this stream's identity becomes the child's master seed."""
        return RandomSource(mix_seed(self.master_seed, self.stream_id), substream_id)

    def claim(self) -> "RandomSource":
        """Mark the stream consumed; single-use consumers must call this first."""
        if self._claimed:
            raise StreamReuseError(
                f"random stream ({self.master_seed}, {self.stream_id}) was already used"
            )
        self._claimed = True
        return self


@dataclass
class TestState:
    """Mutable per-run state of a sequential test.

    ``log_wealth`` may be ``-inf`` (wealth exactly zero), which is absorbing.
    ``max_log_wealth`` tracks the running supremum for the anytime p-value.
    """

    t: int = 0
    losses: int = 0
    log_wealth: float = 0.0
    max_log_wealth: float = 0.0


TIE_POLICIES = ("randomized", "conservative")


class IndicatorStream:
    """Lazy source of win/loss indicators.

    Modes:

    * ``statistics`` -- an observed value plus lazily generated values; emits
      1 when the generated value strictly exceeds the observed one, with
      ties broken by policy.  The ``randomized`` policy attaches one uniform
      to the observed value at the first tie and one uniform per tied draw,
      and never draws otherwise; ``conservative`` counts every tie as a loss.
    * ``bernoulli`` -- i.i.d. losses with a fixed probability, for studying
      a test at a known limiting loss rate.
    * ``polya`` -- exchangeable null draws with loss probability
      ``(losses + 1) / (t + 2)`` given the caller's current state.
    * ``explicit`` -- a fixed indicator sequence, exhausting at its end.

    Streams cap at ``max_len`` values to bound runaway runs.  Two streams
    built from equal seeds and sources replay identically.
    """

    def __init__(
        self,
        mode: str,
        *,
        observed: Optional[float] = None,
        values: Optional[Iterator[float]] = None,
        q: Optional[float] = None,
        indicators: Optional[Sequence[int]] = None,
        tie_policy: str = "randomized",
        source: Optional[RandomSource] = None,
        max_len: int = DEFAULT_MAX_STREAM_LEN,
    ):
        if mode not in ("statistics", "bernoulli", "polya", "explicit"):
            raise ValueError(f"unknown stream mode {mode!r}")
        if tie_policy not in TIE_POLICIES:
            raise ValueError(f"tie_policy must be one of {TIE_POLICIES}")
        if mode == "bernoulli" and not 0 <= q <= 1:
            raise ValueError(f"loss probability must be in [0, 1], got {q!r}")
        self.mode = mode
        self.tie_policy = tie_policy
        self.max_len = max_len
        self._observed = observed
        self._values = values
        self._q = q
        self._indicators = list(indicators) if indicators is not None else None
        self._source = source
        self._rng: Optional[np.random.Generator] = None
        self._observed_tiebreak: Optional[float] = None
        self._emitted = 0

    @classmethod
    def from_statistics(
        cls,
        observed: float,
        values: Iterable[float],
        *,
        tie_policy: str = "randomized",
        source: Optional[RandomSource] = None,
        max_len: int = DEFAULT_MAX_STREAM_LEN,
    ) -> "IndicatorStream":
        return cls(
            "statistics",
            observed=observed,
            values=iter(values),
            tie_policy=tie_policy,
            source=source,
            max_len=max_len,
        )

    @classmethod
    def bernoulli(
        cls,
        q: float,
        *,
        source: Optional[RandomSource] = None,
        max_len: int = DEFAULT_MAX_STREAM_LEN,
    ) -> "IndicatorStream":
        return cls("bernoulli", q=q, source=source, max_len=max_len)

    @classmethod
    def polya(
        cls,
        *,
        source: Optional[RandomSource] = None,
        max_len: int = DEFAULT_MAX_STREAM_LEN,
    ) -> "IndicatorStream":
        return cls("polya", source=source, max_len=max_len)

    @classmethod
    def from_indicators(cls, indicators: Sequence[int]) -> "IndicatorStream":
        vals = [int(i) for i in indicators]
        if any(v not in (0, 1) for v in vals):
            raise ValueError("indicators must be 0 or 1")
        return cls("explicit", indicators=vals, max_len=max(len(vals), 1))

    @classmethod
    def from_value_lines(cls, lines: Iterable[str], **kwargs) -> "IndicatorStream":
        """Statistic stream from text lines; the first value is the observed one."""
        values = iter_statistic_values(lines)
        try:
            observed = next(values)
        except StopIteration:
            raise ValueError("empty statistic input: the first value must be the observed statistic")
        return cls.from_statistics(observed, values, **kwargs)

    @classmethod
    def from_csv(cls, path: str, **kwargs) -> "IndicatorStream":
        """Statistic stream read lazily from a one-column CSV file."""

        def lines():
            with open(path, newline="") as fh:
                yield from fh

        return cls.from_value_lines(lines(), **kwargs)

    def _generator(self) -> np.random.Generator:
        if self._rng is None:
            if self._source is not None:
                self._rng = self._source.generator()
            else:
                self._rng = np.random.default_rng()
        return self._rng

    def next(self, state: TestState) -> int:
        """Produce the next indicator; raises StreamExhaustedError at the end."""
        if self._emitted >= self.max_len:
            raise StreamExhaustedError(f"stream capped at {self.max_len} values")
        if self.mode == "explicit":
            if self._emitted >= len(self._indicators):
                raise StreamExhaustedError("explicit indicator list exhausted")
            out = self._indicators[self._emitted]
        elif self.mode == "statistics":
            try:
                y = next(self._values)
            except StopIteration:
                raise StreamExhaustedError("statistic stream exhausted")
            if y > self._observed:
                out = 1
            elif y < self._observed:
                out = 0
            elif self.tie_policy == "conservative":
                out = 1
            else:
                rng = self._generator()
                if self._observed_tiebreak is None:
                    self._observed_tiebreak = rng.random()
                out = 1 if rng.random() > self._observed_tiebreak else 0
        elif self.mode == "bernoulli":
            out = 1 if self._generator().random() < self._q else 0
        else:  # polya
            p_loss = (state.losses + 1) / (state.t + 2)
            out = 1 if self._generator().random() < p_loss else 0
        self._emitted += 1
        return out


def next_indicator(stream: IndicatorStream, state: TestState) -> int:
    """Functional alias for :meth:`IndicatorStream.next`."""
    return stream.next(state)


def polya_sequence_probability(indicators: Sequence[int]) -> Fraction:
    """Exact exchangeable-null probability of one specific indicator sequence.

    A length-``t`` sequence with ``k`` losses has probability
    ``k! (t - k)! / (t + 1)!``; summed over all ``2**t`` sequences this is 1,
    and the loss count is uniform on ``{0, ..., t}``.
    """
    t = len(indicators)
    if t == 0:
        raise ValueError("need a nonempty indicator sequence")
    ones = 0
    for v in indicators:
        if v not in (0, 1):
            raise ValueError("indicators must be 0 or 1")
        ones += v
    return Fraction(math.factorial(ones) * math.factorial(t - ones), math.factorial(t + 1))


def _looks_numeric(token: str) -> bool:
    try:
        float(token)
        return True
    except ValueError:
        return False


def iter_statistic_values(lines: Iterable[str]) -> Iterator[float]:
    """Parse one numeric value per nonempty line, lazily.

    Accepts plain line-delimited values or a one-column CSV; a single
    non-numeric header row is skipped.  Malformed content raises ValueError
    carrying the offending line number.
    """
    seen_any = False
    for lineno, raw in enumerate(lines, start=1):
        text = raw.strip()
        if not text:
            continue
        token = text.split(",")[0].strip()
        if not seen_any and not _looks_numeric(token):
            seen_any = True  # header row
            continue
        seen_any = True
        if not _looks_numeric(token):
            raise ValueError(f"line {lineno}: expected a number, got {token!r}")
        yield float(token)
