"""Simulation experiments: two-sample trials, resampling risk, count tables.

Trials are seeded as (master_seed, trial_index) streams so they replay
identically and can be farmed out to a worker pool in any order.  Within a
trial every strategy consumes the same cached indicator stream, so strategy
comparisons are paired.
"""

from __future__ import annotations

import json
import math
import statistics
import subprocess
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.special import ndtri

from .classical import bc_pvalue
from .core import (
    IndicatorStream,
    RandomSource,
    StreamExhaustedError,
    TestState,
    check_alpha,
)
from .engine import StoppingRule, TestOutcome, run_test, stochastic_round
from .strategies import (
    StrategyConfig,
    binomial_log_wealth,
    mixture_beta_log_wealth,
    mixture_uniform_log_wealth,
)

RESPONSE_KINDS = ("normal", "lognormal")

_TWO_53 = float(1 << 53)


@dataclass
class BesagCliffordArm:
    """Stop-at-h-losses baseline run alongside the betting strategies."""

    h: int
    T: int

    def __post_init__(self):
        if self.h < 1 or self.T < 1:
            raise ValueError("h and T must be at least 1")

    @property
    def label(self) -> str:
        return f"bc(h={self.h},T={self.T})"

    def to_json(self) -> dict:
        return {"kind": "bc", "h": self.h, "T": self.T}


Arm = Union[StrategyConfig, BesagCliffordArm]


@dataclass
class TrialConfig:
    """One batch of simulated treatment-vs-control trials."""

    m: int
    n: int
    mu: float
    T: int
    alpha: float
    strategies: List[Arm]
    seed: int = 0
    response: str = "normal"
    rounding: bool = False
    futility: Optional[float] = None  # None: futility threshold equals alpha

    def __post_init__(self):
        if min(self.m, self.n, self.T) < 1:
            raise ValueError("m, n and T must be at least 1")
        check_alpha(self.alpha)
        if self.response not in RESPONSE_KINDS:
            raise ValueError(f"response must be one of {RESPONSE_KINDS}")
        if not self.strategies:
            raise ValueError("need at least one strategy")

    @property
    def futility_threshold(self) -> float:
        return self.alpha if self.futility is None else self.futility

    def to_json(self) -> dict:
        return {
            "m": self.m,
            "n": self.n,
            "mu": self.mu,
            "T": self.T,
            "alpha": self.alpha,
            "strategies": [arm.to_json() for arm in self.strategies],
            "seed": self.seed,
            "response": self.response,
            "rounding": self.rounding,
            "futility": self.futility,
        }

    @classmethod
    def from_json(cls, data: dict) -> "TrialConfig":
        known = {"m", "n", "mu", "T", "alpha", "strategies", "seed", "response", "rounding", "futility"}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ValueError(f"unknown config keys: {', '.join(unknown)}")
        strategies = [arm_from_json(s) for s in data["strategies"]]
        return cls(
            m=data["m"],
            n=data["n"],
            mu=data["mu"],
            T=data["T"],
            alpha=data["alpha"],
            strategies=strategies,
            seed=data.get("seed", 0),
            response=data.get("response", "normal"),
            rounding=data.get("rounding", False),
            futility=data.get("futility"),
        )


def arm_from_json(data: dict) -> Arm:
    if data.get("kind") == "bc":
        known = {"kind", "h", "T"}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ValueError(f"unknown strategy fields: {', '.join(unknown)}")
        return BesagCliffordArm(h=data["h"], T=data["T"])
    return StrategyConfig.from_json(data)


@dataclass
class TrialRecord:
    """Per-run, per-strategy outcome used for aggregation."""

    label: str
    rejected: bool
    stop_time: int
    stop_reason: str
    losses: int
    e_value: float
    p_value: float


@dataclass
class ExperimentRow:
    label: str
    m: int
    power: float
    m1: int
    m0: int
    tau_mean: float
    tau_median: float
    tau1_mean: float
    tau0_mean: float
    horizon: int
    mu: Optional[float] = None


class ExperimentTable:
    """Aggregated power and stopping-time summaries, one row per strategy."""

    COLUMNS = (
        "mu",
        "label",
        "m",
        "power",
        "m1",
        "m0",
        "tau_mean",
        "tau_median",
        "tau1_mean",
        "tau0_mean",
        "horizon",
    )

    def __init__(self, rows: List[ExperimentRow]):
        self.rows = rows

    def row(self, label: str, mu: Optional[float] = None) -> ExperimentRow:
        for r in self.rows:
            if r.label == label and (mu is None or r.mu == mu):
                return r
        raise KeyError(f"no row for {label!r} (mu={mu!r})")

    def extend(self, other: "ExperimentTable") -> "ExperimentTable":
        self.rows.extend(other.rows)
        return self

    def to_json(self) -> list:
        return [
            {col: getattr(r, col) for col in self.COLUMNS}
            for r in self.rows
        ]

    def to_csv(self, path: str) -> None:
        with open(path, "w", newline="") as fh:
            fh.write(",".join(self.COLUMNS) + "\n")
            for r in self.rows:
                fh.write(",".join(_csv_cell(getattr(r, col)) for col in self.COLUMNS) + "\n")


def _csv_cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def aggregate(
    records: Sequence[TrialRecord],
    horizons: Union[int, Dict[str, int]],
    mu: Optional[float] = None,
) -> ExperimentTable:
    """Aggregate per-run records into one row per strategy label.

    The stopping-time accounting satisfies
    tau_mean * m == tau1_mean * m1 + tau0_mean * m0 + horizon * (m - m1 - m0)
    exactly, because every run that stopped neither for rejection nor for
    futility ran to the horizon.
    """
    by_label: Dict[str, List[TrialRecord]] = {}
    order: List[str] = []
    for rec in records:
        if rec.label not in by_label:
            by_label[rec.label] = []
            order.append(rec.label)
        by_label[rec.label].append(rec)

    rows = []
    for label in order:
        recs = by_label[label]
        m = len(recs)
        horizon = horizons if isinstance(horizons, int) else horizons[label]
        taus = [r.stop_time for r in recs]
        tau1 = [r.stop_time for r in recs if r.stop_reason == "rejected"]
        tau0 = [r.stop_time for r in recs if r.stop_reason == "futility"]
        rows.append(
            ExperimentRow(
                label=label,
                mu=mu,
                m=m,
                power=sum(r.rejected for r in recs) / m,
                m1=len(tau1),
                m0=len(tau0),
                tau_mean=sum(taus) / m,
                tau_median=float(statistics.median(taus)),
                tau1_mean=sum(tau1) / len(tau1) if tau1 else float("nan"),
                tau0_mean=sum(tau0) / len(tau0) if tau0 else float("nan"),
                horizon=horizon,
            )
        )
    return ExperimentTable(rows)


class SharedIndicatorCache:
    """Materializes one indicator stream so several arms replay it paired."""

    def __init__(self, stream: IndicatorStream, limit: int):
        self._stream = stream
        self._limit = limit
        self._cache: List[int] = []
        self._dry = False
        self._state = TestState()

    def get(self, i: int) -> int:
        while len(self._cache) <= i:
            if self._dry or len(self._cache) >= self._limit:
                raise StreamExhaustedError("shared indicator cache exhausted")
            try:
                ind = self._stream.next(self._state)
            except StreamExhaustedError:
                self._dry = True
                raise
            self._state.t += 1
            self._state.losses += ind
            self._cache.append(ind)
        return self._cache[i]

    def view(self) -> "_CacheView":
        return _CacheView(self)

    def materialized(self) -> List[int]:
        return list(self._cache)


class _CacheView:
    """Replay handle over a shared cache; quacks like an IndicatorStream."""

    def __init__(self, cache: SharedIndicatorCache):
        self._cache = cache
        self._pos = 0

    def next(self, state: TestState) -> int:
        value = self._cache.get(self._pos)
        self._pos += 1
        return value

    def iter_indicators(self) -> Iterable[int]:
        while True:
            try:
                yield self.next(None)
            except StreamExhaustedError:
                return


def _uniform_open(rng: np.random.Generator, n: int) -> np.ndarray:
    """Uniforms on the open interval (0, 1), safe to push through ndtri."""
    return rng.integers(1, 1 << 53, size=n).astype(np.float64) / _TWO_53


def _treatment_vector(rng: np.random.Generator, n: int) -> Tuple[np.ndarray, int]:
    # resample rather than condition: an empty group has no statistic
    while True:
        w = rng.random(n) < 0.5
        n1 = int(w.sum())
        if 0 < n1 < n:
            return w, n1


def _mean_diff_stream(resp: np.ndarray, n1: int, rng: np.random.Generator):
    """Difference in group means under freshly permuted labels, forever."""
    n = resp.size
    n0 = n - n1
    total = float(resp.sum())
    while True:
        idx = rng.permutation(n)[:n1]
        s = float(resp[idx].sum())
        yield s / n1 - (total - s) / n0


def run_two_sample_trial(config: TrialConfig, trial_index: int) -> Dict[str, TrialRecord]:
    """Simulate one trial and run every configured strategy on a shared stream.

    Control responses are standard normal via inverse CDF (or their exp for
    the lognormal response); treated responses are shifted by ``mu`` before
    the exp.  Labels are permuted with replacement across draws.
    """
    src = RandomSource(config.seed, trial_index)
    data_rng = src.derive(0).generator()
    w, n1 = _treatment_vector(data_rng, config.n)
    z = ndtri(_uniform_open(data_rng, config.n))
    shifted = z + config.mu * w
    resp = shifted if config.response == "normal" else np.exp(shifted)

    n0 = config.n - n1
    total = float(resp.sum())
    s_obs = float(resp[w].sum())
    y_obs = s_obs / n1 - (total - s_obs) / n0

    stream = IndicatorStream.from_statistics(
        y_obs,
        _mean_diff_stream(resp, n1, src.derive(1).generator()),
        tie_policy="randomized",
        source=src.derive(2),
        max_len=config.T,
    )
    cache = SharedIndicatorCache(stream, config.T)

    records: Dict[str, TrialRecord] = {}
    for j, arm in enumerate(config.strategies):
        view = cache.view()
        if isinstance(arm, BesagCliffordArm):
            records[arm.label] = _run_bc_arm(view, arm, config.alpha)
        else:
            records[arm.label] = _run_betting_arm(
                view,
                arm,
                alpha=config.alpha,
                max_steps=config.T,
                futility=config.futility_threshold,
                rounding=config.rounding,
                rounding_source=src.derive(1000 + j),
            )
    return records


def _run_betting_arm(
    view,
    config: StrategyConfig,
    *,
    alpha: float,
    max_steps: int,
    futility: float,
    rounding: bool,
    rounding_source: RandomSource,
) -> TrialRecord:
    rule = StoppingRule(
        reject_threshold=1.0 / alpha,
        futility_threshold=futility,
        max_steps=max_steps,
    )
    outcome = run_test(view, config, rule)
    rejected = outcome.rejected
    if rounding and not rejected:
        rounded = stochastic_round(outcome.final_wealth, alpha, rounding_source)
        rejected = rounded.value >= 1.0 / alpha
    return TrialRecord(
        label=config.label,
        rejected=rejected,
        stop_time=outcome.stop_time,
        stop_reason=outcome.stop_reason,
        losses=outcome.losses,
        e_value=outcome.final_wealth,
        p_value=outcome.p_value,
    )


def _run_bc_arm(view, arm: BesagCliffordArm, alpha: float) -> TrialRecord:
    res = bc_pvalue(view.iter_indicators(), arm.h, arm.T)
    rejected = res.p_value <= alpha
    if rejected:
        reason = "rejected"
    elif res.losses >= arm.h:
        reason = "futility"  # the loss budget ran out before the horizon
    else:
        reason = "exhausted"
    return TrialRecord(
        label=arm.label,
        rejected=rejected,
        stop_time=res.stop_time,
        stop_reason=reason,
        losses=res.losses,
        e_value=float("nan"),
        p_value=float(res.p_value),
    )


def _trial_worker(args) -> Dict[str, TrialRecord]:
    config, index = args
    return run_two_sample_trial(config, index)


def arm_horizons(config: TrialConfig) -> Dict[str, int]:
    out: Dict[str, int] = {}
    for arm in config.strategies:
        out[arm.label] = arm.T if isinstance(arm, BesagCliffordArm) else config.T
    return out


def run_experiment(config: TrialConfig, jobs: int = 1) -> ExperimentTable:
    """Run all trials of a config (optionally on a process pool) and aggregate."""
    if jobs <= 1:
        per_trial = [run_two_sample_trial(config, i) for i in range(config.m)]
    else:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            chunk = max(1, config.m // (jobs * 8))
            per_trial = list(
                pool.map(_trial_worker, ((config, i) for i in range(config.m)), chunksize=chunk)
            )
    records = [rec for trial in per_trial for rec in trial.values()]
    return aggregate(records, arm_horizons(config), mu=config.mu)


# ---------------------------------------------------------------------------
# resampling risk


@dataclass
class RiskEstimate:
    label: str
    q: float
    alpha: float
    runs: int
    cap: int
    reject_fraction: float
    resampling_risk: float


def _closed_form_log_wealth(config: StrategyConfig, t: np.ndarray, losses: np.ndarray):
    if config.kind == "binomial":
        return binomial_log_wealth(t, losses, config.p)
    if config.kind == "mixture_uniform":
        return mixture_uniform_log_wealth(t, losses, config.c)
    if config.kind == "mixture_beta":
        return mixture_beta_log_wealth(t, losses, config.a, config.b)
    raise ValueError(f"no closed-form wealth for {config.kind!r}")


def _first_crossing(
    rng: np.random.Generator,
    config: StrategyConfig,
    q: float,
    log_target: float,
    cap: int,
    block: int,
) -> Tuple[Optional[int], float]:
    """First step where the closed-form log wealth reaches the target.

    Returns (step, log_wealth_at_step), or (None, last log wealth) if the
    cap is hit first.  Indicators are drawn in blocks; the draw sequence is
    identical to drawing one uniform per step.
    """
    losses = 0
    done = 0
    last = 0.0
    while done < cap:
        nb = min(block, cap - done)
        ii = rng.random(nb) < q
        lcum = losses + np.cumsum(ii)
        tt = done + np.arange(1, nb + 1)
        lw = _closed_form_log_wealth(config, tt.astype(float), lcum.astype(float))
        hits = np.nonzero(lw >= log_target)[0]
        if hits.size:
            j = int(hits[0])
            return done + j + 1, float(lw[j])
        losses = int(lcum[-1])
        done += nb
        last = float(lw[-1])
    return None, last


def estimate_resampling_risk(
    config: StrategyConfig,
    q: float,
    alpha: float,
    runs: int = 200,
    cap: int = 10**6,
    seed: int = 0,
    block: int = 8192,
) -> RiskEstimate:
    """Estimate the probability of disagreeing with the limiting decision.

    Indicators are i.i.d. losses with probability ``q``; a run rejects when
    its wealth ever reaches 1/alpha within ``cap`` steps (no futility stop).
    The risk is the non-rejection rate when q <= alpha and the rejection rate
    when q > alpha.
    """
    check_alpha(alpha)
    if not 0 <= q <= 1:
        raise ValueError("q must be in [0, 1]")
    log_target = math.log(1.0 / alpha)
    rejects = 0
    if config.kind == "passive":
        rejects = 0
    elif config.kind == "aggressive":
        # rejects iff the first ceil(1/alpha - 1) draws are all wins
        need = int(math.ceil(Fraction(1) / Fraction(alpha) - 1))
        for run in range(runs):
            rng = RandomSource(seed, run).derive(0).generator()
            if cap >= need and not (rng.random(need) < q).any():
                rejects += 1
    elif config.kind in ("binomial", "mixture_uniform", "mixture_beta"):
        for run in range(runs):
            rng = RandomSource(seed, run).derive(0).generator()
            step, _ = _first_crossing(rng, config, q, log_target, cap, block)
            if step is not None:
                rejects += 1
    else:
        rule = StoppingRule(reject_threshold=1.0 / alpha, max_steps=cap)
        for run in range(runs):
            stream = IndicatorStream.bernoulli(q, source=RandomSource(seed, run).derive(0), max_len=cap)
            if run_test(stream, config, rule).rejected:
                rejects += 1

    reject_fraction = rejects / runs
    risk = 1.0 - reject_fraction if q <= alpha else reject_fraction
    return RiskEstimate(
        label=config.label,
        q=q,
        alpha=alpha,
        runs=runs,
        cap=cap,
        reject_fraction=reject_fraction,
        resampling_risk=risk,
    )


def randomized_mixture_reject_rate(
    q: float,
    alpha: float,
    epsilon: float,
    runs: int = 1000,
    cap: int = 10**5,
    seed: int = 0,
    block: int = 8192,
) -> float:
    """Rejection rate of the rounded boundary-prior mixture test.

    The uniform working prior runs right at the level (c = alpha), so the
    wealth approaches but never reaches 1/alpha; the run stops once wealth
    reaches (1 - epsilon)/alpha and stochastic rounding decides.  For
    q < alpha the rejection rate approaches 1 - epsilon.
    """
    check_alpha(alpha)
    if not 0 < epsilon < 1:
        raise ValueError("epsilon must be in (0, 1)")
    config = StrategyConfig("mixture_uniform", c=alpha, alpha=alpha)
    log_target = math.log((1.0 - epsilon) / alpha)
    rejects = 0
    for run in range(runs):
        src = RandomSource(seed, run)
        rng = src.derive(0).generator()
        step, lw = _first_crossing(rng, config, q, log_target, cap, block)
        if step is None:
            continue
        rounded = stochastic_round(math.exp(lw), alpha, src.derive(1))
        if rounded.value >= 1.0 / alpha:
            rejects += 1
    return rejects / runs


# ---------------------------------------------------------------------------
# count-table experiment


@dataclass
class CountTableConfig:
    """Binary-outcome treatment vs. control table: (successes, total) pairs."""

    treated: Tuple[int, int]
    control: Tuple[int, int]

    def __post_init__(self):
        for succ, tot in (self.treated, self.control):
            if not 0 <= succ <= tot or tot < 1:
                raise ValueError("need 0 <= successes <= total and total >= 1")

    def outcome_vector(self) -> np.ndarray:
        ts, tt = self.treated
        cs, ct = self.control
        return np.array([1.0] * ts + [0.0] * (tt - ts) + [1.0] * cs + [0.0] * (ct - cs))

    @property
    def n_treated(self) -> int:
        return self.treated[1]


def run_count_table_experiment(
    config: CountTableConfig,
    arms: Sequence[Arm],
    repeats: int = 1000,
    alpha: float = 0.05,
    max_permutations: int = 5000,
    seed: int = 0,
    futility: float = 0.0,
    tie_policy: str = "conservative",
) -> ExperimentTable:
    """Repeatedly test a binary-outcome table by permuting treatment labels.

    The statistic is the difference in success proportions, a heavily tied
    discrete quantity; the default conservative policy counts a permuted
    table matching the observed one as a loss.  Futility stopping defaults
    to off so the reject rate is not disturbed.
    """
    check_alpha(alpha)
    outcomes = config.outcome_vector()
    n1 = config.n_treated
    n = outcomes.size
    n0 = n - n1
    total = float(outcomes.sum())
    s_obs = float(config.treated[0])
    y_obs = s_obs / n1 - (total - s_obs) / n0

    limit = max(max_permutations, max((a.T for a in arms if isinstance(a, BesagCliffordArm)), default=1))
    records: List[TrialRecord] = []
    for rep in range(repeats):
        src = RandomSource(seed, rep)
        stream = IndicatorStream.from_statistics(
            y_obs,
            _mean_diff_stream(outcomes, n1, src.derive(1).generator()),
            tie_policy=tie_policy,
            source=src.derive(2),
            max_len=limit,
        )
        cache = SharedIndicatorCache(stream, limit)
        for j, arm in enumerate(arms):
            view = cache.view()
            if isinstance(arm, BesagCliffordArm):
                records.append(_run_bc_arm(view, arm, alpha))
            else:
                records.append(
                    _run_betting_arm(
                        view,
                        arm,
                        alpha=alpha,
                        max_steps=max_permutations,
                        futility=futility,
                        rounding=False,
                        rounding_source=src.derive(1000 + j),
                    )
                )

    horizons = {
        arm.label: (arm.T if isinstance(arm, BesagCliffordArm) else max_permutations)
        for arm in arms
    }
    return aggregate(records, horizons)


# ---------------------------------------------------------------------------
# run manifests


def build_describe() -> str:
    try:
        proc = subprocess.run(
            ["git", "describe", "--always", "--dirty"],
            capture_output=True,
            text=True,
            timeout=10,
        )
        if proc.returncode == 0:
            return proc.stdout.strip()
    except OSError:
        pass
    return "unknown"


def write_manifest(path: str, config_json: dict, seed: int) -> None:
    """JSON run manifest: the config, the seed, and the build identifier."""
    payload = {"config": config_json, "seed": seed, "build": build_describe()}
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
