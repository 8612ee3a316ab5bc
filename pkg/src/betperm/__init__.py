"""Anytime-valid sequential Monte-Carlo permutation tests by betting.

Build a win/loss indicator stream from a statistic source, pick a betting
strategy, and run the sequential engine; the wealth process is an e-process
and its inverse running maximum an anytime-valid p-value, so the test can be
monitored and stopped at any time.
"""

from .classical import (
    BCResult,
    NegBinResult,
    OffSupportError,
    bc_pvalue,
    calibrate_harmonic,
    calibrate_sqrt,
    check_admissible,
    harmonic_number,
    negbin_pvalue,
    perm_pvalue,
    sqrt_partial_sum,
)
from .core import (
    DEFAULT_MAX_STREAM_LEN,
    IndicatorStream,
    RandomSource,
    StreamExhaustedError,
    StreamReuseError,
    TestState,
    check_alpha,
    iter_statistic_values,
    mix_seed,
    next_indicator,
    polya_sequence_probability,
)
from .engine import (
    RoundedEValue,
    StoppingRule,
    TestOutcome,
    p_process_value,
    run_test,
    stochastic_round,
)
from .harness import (
    BesagCliffordArm,
    CountTableConfig,
    ExperimentRow,
    ExperimentTable,
    RiskEstimate,
    SharedIndicatorCache,
    TrialConfig,
    TrialRecord,
    aggregate,
    estimate_resampling_risk,
    randomized_mixture_reject_rate,
    run_count_table_experiment,
    run_experiment,
    run_two_sample_trial,
    write_manifest,
)
from .reconstruct import (
    EValueVector,
    InvalidTargetError,
    ReconstructionTable,
    anytime_bc_pvalue,
    anytime_perm_pvalue,
    backward_reconstruct,
    bc_horizon,
    perm_target_evalue,
)
from .strategies import (
    AbsorbedWealthError,
    Bet,
    DegeneratePosteriorError,
    Prior,
    StrategyConfig,
    aggressive_bet,
    binomial_bet,
    binomial_log_wealth,
    default_binomial_p,
    log_binomial_survival,
    mimicked_logopt_bet,
    mixture_beta_log_wealth,
    mixture_uniform_log_wealth,
    passive_bet,
    posterior_mean,
)

__version__ = "0.1.0"
