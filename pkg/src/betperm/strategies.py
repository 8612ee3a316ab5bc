"""Betting strategies and their closed-form wealth processes.

A bet at step ``t`` with ``losses`` prior losses is a pair of nonnegative
payoff factors ``(b0, b1)`` constrained by

    b0 * (t - losses) / (t + 1) + b1 * (1 + losses) / (t + 1) = 1,

which makes the running wealth product a nonnegative martingale with initial
value one under the exchangeable null.  All wealths are handled in log space;
wealth zero is represented as ``-inf`` and is absorbing.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, asdict
from typing import Optional

import numpy as np
from scipy import special
from scipy.integrate import quad

from .core import check_alpha

_NEG_INF = float("-inf")

# betainc values smaller than this are recomputed by direct tail summation
_SURVIVAL_UNDERFLOW = 1e-280


class AbsorbedWealthError(Exception):
    """A strategy whose wealth is already zero was asked for another bet."""


class DegeneratePosteriorError(Exception):
    """The working prior left no posterior mass; no bet can be formed."""


@dataclass(frozen=True)
class Bet:
    """Payoff factors on a win (b0) and on a loss (b1)."""

    b0: float
    b1: float

    def constraint_residual(self, t: int, losses: int) -> float:
        """Deviation of this bet from the null-expectation constraint."""
        return self.b0 * (t - losses) / (t + 1) + self.b1 * (1 + losses) / (t + 1) - 1.0


def passive_bet(t: int, losses: int) -> Bet:
    """The do-nothing bet (1, 1); wealth stays at one forever."""
    return Bet(1.0, 1.0)


def aggressive_bet(t: int, losses: int) -> Bet:
    """All-in bet on a win: ((t+1)/t, 0).  Only defined before the first loss."""
    if losses != 0:
        raise AbsorbedWealthError("aggressive wealth is zero after a loss; no further bets")
    return Bet((t + 1) / t, 0.0)


def binomial_bet(t: int, losses: int, p: float, futility_override: bool = False) -> Bet:
    """Plug-in log-optimal bet with constant loss-rate guess ``p``.

    ``futility_override`` substitutes p = 0 for this single step (used when a
    loss would drop the wealth below the futility cutoff anyway, so the
    bettor may as well stake everything on a win).
    """
    if not 0 <= p <= 1:
        raise ValueError(f"p must be in [0, 1], got {p!r}")
    p_t = 0.0 if futility_override else p
    return Bet((1.0 - p_t) * (t + 1) / (t - losses), p_t * (t + 1) / (losses + 1))


def default_binomial_p(alpha: float) -> float:
    """Level-adapted default 1 / ceil(sqrt(2*pi*e^(1/6)) / alpha)."""
    check_alpha(alpha)
    return 1.0 / math.ceil(math.sqrt(2.0 * math.pi * math.exp(1.0 / 6.0)) / alpha)


def _as_float_arrays(*args):
    arrs = [np.asarray(a, dtype=float) for a in args]
    scalar = all(a.ndim == 0 for a in arrs)
    return arrs, scalar


def binomial_log_wealth(T, losses, p):
    """Log wealth of the constant-``p`` strategy: log[(T+1) C(T,l) p^l (1-p)^(T-l)].

    Order of the losses does not matter.  Accepts scalars or arrays.
    """
    (T_, l_, p_), scalar = _as_float_arrays(T, losses, p)
    T_, l_, p_ = np.broadcast_arrays(T_, l_, p_)
    wins = T_ - l_
    with np.errstate(divide="ignore", invalid="ignore"):
        loss_term = np.where(l_ > 0, l_ * np.log(p_), 0.0)
        win_term = np.where(wins > 0, wins * np.log1p(-p_), 0.0)
    out = (
        np.log(T_ + 1)
        + special.gammaln(T_ + 1)
        - special.gammaln(l_ + 1)
        - special.gammaln(wins + 1)
        + loss_term
        + win_term
    )
    out = np.where((l_ > 0) & (p_ == 0.0), _NEG_INF, out)
    out = np.where((wins > 0) & (p_ == 1.0), _NEG_INF, out)
    return float(out) if scalar else out


def _log_survival_tail_sum(k: int, n: int, p: float) -> float:
    """log P(X >= k+1) for X ~ Bin(n, p) by log-space summation of the tail."""
    j = np.arange(k + 1, n + 1, dtype=float)
    logpmf = (
        special.gammaln(n + 1)
        - special.gammaln(j + 1)
        - special.gammaln(n - j + 1)
        + j * math.log(p)
        + (n - j) * math.log1p(-p)
    )
    return float(special.logsumexp(logpmf))


def log_binomial_survival(k, n, p):
    """log P(X >= k+1) for X ~ Bin(n, p), numerically stable.

    Uses the regularized incomplete beta identity I_p(k+1, n-k); entries where
    that underflows fall back to direct summation of the tail in log space.
    ``k`` and ``n`` may be scalars or broadcastable arrays; ``p`` is scalar.
    """
    (k_, n_), scalar = _as_float_arrays(k, n)
    k_, n_ = np.broadcast_arrays(np.atleast_1d(k_), np.atleast_1d(n_))
    if not 0 <= p <= 1:
        raise ValueError(f"probability must be in [0, 1], got {p!r}")
    out = np.full(k_.shape, _NEG_INF)
    below = k_ < 0
    inside = (~below) & (k_ < n_)
    out[below] = 0.0
    if np.any(inside):
        kk = k_[inside]
        nn = n_[inside]
        if p == 1.0:
            out[inside] = 0.0
        elif p > 0.0:
            s = special.betainc(kk + 1, nn - kk, p)
            vals = np.where(s > 0, np.log(np.maximum(s, 1e-320)), _NEG_INF)
            tiny = s < _SURVIVAL_UNDERFLOW
            if np.any(tiny):
                for i in np.nonzero(tiny)[0]:
                    vals[i] = _log_survival_tail_sum(int(kk[i]), int(nn[i]), p)
            out[inside] = vals
    return float(out[0]) if scalar else out


def mixture_uniform_log_wealth(T, losses, c):
    """Log wealth under a uniform working prior on [0, c]:
    log[(1 - Bin(losses; T+1, c)) / c].

    Strictly below log(1/c), strictly decreasing in ``losses`` at fixed ``T``.
    ``c = 1`` is allowed (the uniform prior on [0, 1]; wealth is identically 1).
    """
    if not 0 < c <= 1:
        raise ValueError(f"c must be in (0, 1], got {c!r}")
    (T_, l_), scalar = _as_float_arrays(T, losses)
    out = log_binomial_survival(l_, T_ + 1, c) - math.log(c)
    return float(out) if scalar else out


def mixture_beta_log_wealth(T, losses, a, b):
    """Log wealth under a Beta(a, b) working prior:
    log[ B(a+l, b+T-l) / (B(l+1, T-l+1) B(a, b)) ].
    """
    if a <= 0 or b <= 0:
        raise ValueError("beta prior parameters must be positive")
    (T_, l_), scalar = _as_float_arrays(T, losses)
    out = (
        special.betaln(a + l_, b + T_ - l_)
        - special.betaln(l_ + 1, T_ - l_ + 1)
        - special.betaln(a, b)
    )
    return float(out) if scalar else out


@dataclass(frozen=True)
class Prior:
    """Working prior over the limiting loss rate on [0, 1].

    Kinds: ``uniform`` on [lo, hi], ``beta`` with shapes (a, b), or a
    degenerate ``point`` mass.
    """

    kind: str
    lo: float = 0.0
    hi: float = 1.0
    a: float = 1.0
    b: float = 1.0
    p: float = 0.5

    @classmethod
    def uniform(cls, lo: float = 0.0, hi: float = 1.0) -> "Prior":
        if not 0 <= lo < hi <= 1:
            raise ValueError("need 0 <= lo < hi <= 1")
        return cls("uniform", lo=lo, hi=hi)

    @classmethod
    def beta(cls, a: float, b: float) -> "Prior":
        if a <= 0 or b <= 0:
            raise ValueError("beta shapes must be positive")
        return cls("beta", a=a, b=b)

    @classmethod
    def point(cls, p: float) -> "Prior":
        if not 0 <= p <= 1:
            raise ValueError("point mass must be in [0, 1]")
        return cls("point", p=p)

    def support(self) -> tuple[float, float]:
        if self.kind == "uniform":
            return self.lo, self.hi
        return 0.0, 1.0

    def log_density_shape(self, x: float) -> float:
        """Log density up to an additive constant (enough for posterior means)."""
        if self.kind == "uniform":
            return 0.0
        if self.kind == "beta":
            if x <= 0.0:
                return _NEG_INF if self.a > 1 else (0.0 if self.a == 1 else math.inf)
            if x >= 1.0:
                return _NEG_INF if self.b > 1 else (0.0 if self.b == 1 else math.inf)
            return (self.a - 1) * math.log(x) + (self.b - 1) * math.log1p(-x)
        raise ValueError("point priors have no density")


def posterior_mean(t: int, losses: int, prior: Prior) -> float:
    """Posterior mean of the loss rate after ``losses`` losses in ``t - 1`` draws.

    Computed by adaptive quadrature of the likelihood ``p^l (1-p)^(t-1-l)``
    against the prior, with the integrand rescaled by its maximum so that
    long runs do not underflow.
    """
    if not 0 <= losses <= t - 1:
        raise ValueError("need 0 <= losses <= t - 1")
    if prior.kind == "point":
        return prior.p
    lo, hi = prior.support()
    ell = losses
    wins = t - 1 - losses

    def log_integrand(x: float) -> float:
        if x <= 0.0:
            base = 0.0 if ell == 0 else _NEG_INF
        elif x >= 1.0:
            base = 0.0 if wins == 0 else _NEG_INF
        else:
            base = ell * math.log(x) + wins * math.log1p(-x)
        return base + prior.log_density_shape(x)

    # peak of the integrand, clipped into the support
    if t > 1:
        mode = min(max(ell / (t - 1), lo), hi)
    else:
        mode = 0.5 * (lo + hi)
    candidates = [mode, lo + 1e-12 * (hi - lo), hi - 1e-12 * (hi - lo), 0.5 * (lo + hi)]
    peak = max(log_integrand(x) for x in candidates)
    if not math.isfinite(peak):
        raise DegeneratePosteriorError("posterior mass vanished over the prior support")

    def scaled(x: float) -> float:
        v = log_integrand(x) - peak
        return math.exp(v) if v > -745.0 else 0.0

    den, _ = quad(scaled, lo, hi, epsabs=1e-12, epsrel=1e-10, limit=200, points=[mode])
    num, _ = quad(lambda x: x * scaled(x), lo, hi, epsabs=1e-12, epsrel=1e-10, limit=200, points=[mode])
    if not (den > 0.0) or not math.isfinite(den):
        raise DegeneratePosteriorError("posterior normalization underflowed")
    return min(max(num / den, 0.0), 1.0)


def mimicked_logopt_bet(t: int, losses: int, prior: Prior) -> Bet:
    """Log-optimal bet under the working prior: binomial bet at the posterior mean."""
    return binomial_bet(t, losses, posterior_mean(t, losses, prior))


STRATEGY_KINDS = (
    "passive",
    "aggressive",
    "binomial",
    "mixture_uniform",
    "mixture_beta",
    "mimicked_logopt",
)

DEFAULT_MIXTURE_C_FACTOR = 0.9


@dataclass
class StrategyConfig:
    """Declarative description of a betting strategy.

    Missing parameters are filled from ``alpha``: the binomial ``p`` defaults
    to ``default_binomial_p(alpha)`` and the uniform-mixture cutoff ``c``
    defaults to ``0.9 * alpha``.
    """

    kind: str
    p: Optional[float] = None
    c: Optional[float] = None
    a: Optional[float] = None
    b: Optional[float] = None
    prior: Optional[Prior] = None
    alpha: Optional[float] = None

    def __post_init__(self):
        if self.kind not in STRATEGY_KINDS:
            raise ValueError(f"unknown strategy kind {self.kind!r}")
        if self.alpha is not None:
            check_alpha(self.alpha)
        if self.kind == "binomial":
            if self.p is None:
                if self.alpha is None:
                    raise ValueError("binomial strategy needs p or alpha")
                self.p = default_binomial_p(self.alpha)
            if not 0 <= self.p <= 1:
                raise ValueError(f"p must be in [0, 1], got {self.p!r}")
        elif self.kind == "mixture_uniform":
            if self.c is None:
                if self.alpha is None:
                    raise ValueError("mixture_uniform strategy needs c or alpha")
                self.c = DEFAULT_MIXTURE_C_FACTOR * self.alpha
            if not 0 < self.c < 1:
                raise ValueError(f"c must be in (0, 1), got {self.c!r}")
        elif self.kind == "mixture_beta":
            if self.a is None or self.b is None:
                raise ValueError("mixture_beta strategy needs shapes a and b")
            if self.a <= 0 or self.b <= 0:
                raise ValueError("beta shapes must be positive")
        elif self.kind == "mimicked_logopt":
            if self.prior is None:
                raise ValueError("mimicked_logopt strategy needs a prior")

    @property
    def label(self) -> str:
        if self.kind == "binomial":
            return f"binomial(p={self.p:.6g})"
        if self.kind == "mixture_uniform":
            return f"mixture_uniform(c={self.c:.6g})"
        if self.kind == "mixture_beta":
            return f"mixture_beta(a={self.a:.6g},b={self.b:.6g})"
        if self.kind == "mimicked_logopt":
            return f"mimicked_logopt({self.prior.kind})"
        return self.kind

    def to_json(self) -> dict:
        out = {"kind": self.kind}
        for key in ("p", "c", "a", "b", "alpha"):
            val = getattr(self, key)
            if val is not None:
                out[key] = val
        if self.prior is not None:
            out["prior"] = asdict(self.prior)
        return out

    @classmethod
    def from_json(cls, data: dict) -> "StrategyConfig":
        known = {"kind", "p", "c", "a", "b", "alpha", "prior"}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ValueError(f"unknown strategy fields: {', '.join(unknown)}")
        prior = None
        if "prior" in data:
            prior = Prior(**data["prior"])
        return cls(
            kind=data["kind"],
            p=data.get("p"),
            c=data.get("c"),
            a=data.get("a"),
            b=data.get("b"),
            prior=prior,
            alpha=data.get("alpha"),
        )
