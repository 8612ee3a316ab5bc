"""Command-line front end.

Subcommands: test, simulate, riskscan, reconstruct, calibrate, baselines.
Exit codes for ``test``: 0 = rejected, 1 = not rejected, 2 = error; all other
subcommands use 0 = ok, 2 = error.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
from fractions import Fraction

from . import classical, harness
from .core import IndicatorStream, RandomSource, check_alpha, iter_statistic_values
from .engine import StoppingRule, run_test, stochastic_round
from .reconstruct import (
    EValueVector,
    InvalidTargetError,
    anytime_bc_pvalue,
    anytime_perm_pvalue,
    backward_reconstruct,
    bc_horizon,
    perm_target_evalue,
)
from .strategies import Prior, StrategyConfig


class CliError(Exception):
    pass


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--alpha", type=float, default=0.05, help="significance level")
    parser.add_argument("--seed", type=int, default=0, help="master seed")
    parser.add_argument("--out", type=str, default=None, help="output file or directory")
    parser.add_argument("--format", choices=("json", "csv"), default="json")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="betperm", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_test = sub.add_parser("test", help="run one sequential test on a statistic stream")
    _add_common(p_test)
    p_test.add_argument("--input", type=str, default="-", help="statistic CSV (first value is the observed one); '-' for stdin")
    p_test.add_argument("--strategy", default="mixture",
                        choices=("passive", "aggressive", "binomial", "mixture", "mixture_beta", "logopt"))
    p_test.add_argument("--p", type=float, default=None, help="binomial loss-rate parameter")
    p_test.add_argument("--c", type=float, default=None, help="uniform-prior cutoff")
    p_test.add_argument("--a", type=float, default=None, help="beta prior shape a")
    p_test.add_argument("--b", type=float, default=None, help="beta prior shape b")
    p_test.add_argument("--prior-hi", type=float, default=None, help="upper end of the uniform working prior (logopt)")
    p_test.add_argument("--futility", type=float, default=None, help="futility threshold; 0 disables (default: alpha)")
    p_test.add_argument("--max-steps", type=int, default=10**6)
    p_test.add_argument("--tie-policy", choices=("randomized", "conservative"), default="randomized")
    p_test.add_argument("--round", action="store_true", help="apply stochastic rounding at the stop")
    p_test.add_argument("--trajectory", action="store_true", help="include the wealth trajectory in the output")
    p_test.add_argument("--decimate", type=int, default=1)
    p_test.add_argument("--manifest", type=str, default=None, help="write a JSON run manifest here")

    p_sim = sub.add_parser("simulate", help="run a two-sample trial experiment from a JSON config")
    _add_common(p_sim)
    p_sim.add_argument("--config", type=str, required=True)
    p_sim.add_argument("--jobs", type=int, default=1)

    p_risk = sub.add_parser("riskscan", help="estimate resampling risk over a grid of loss rates")
    _add_common(p_risk)
    p_risk.add_argument("--strategy", default="mixture",
                        choices=("passive", "aggressive", "binomial", "mixture", "mixture_beta"))
    p_risk.add_argument("--p", type=float, default=None)
    p_risk.add_argument("--c", type=float, default=None)
    p_risk.add_argument("--a", type=float, default=None)
    p_risk.add_argument("--b", type=float, default=None)
    p_risk.add_argument("--q", type=str, required=True, help="comma-separated loss rates")
    p_risk.add_argument("--runs", type=int, default=200)
    p_risk.add_argument("--cap", type=int, default=10**6)

    p_rec = sub.add_parser("reconstruct", help="print the sequential bet table of a loss-count e-value")
    _add_common(p_rec)
    p_rec.add_argument("--target", choices=("perm", "bc", "file"), required=True)
    p_rec.add_argument("--T", type=int, default=None, help="horizon (perm) / cap (bc)")
    p_rec.add_argument("--h", type=int, default=None, help="loss budget (bc)")
    p_rec.add_argument("--file", type=str, default=None, help="JSON file with {'values': [...]} (file target)")
    p_rec.add_argument("--indicators", type=str, default=None,
                       help="indicator CSV; adds the anytime p-value trajectory")

    p_cal = sub.add_parser("calibrate", help="discrete p-to-e calibrators on the support r/(T+1)")
    _add_common(p_cal)
    p_cal.add_argument("--kind", choices=("harmonic", "sqrt"), default="harmonic")
    p_cal.add_argument("--T", type=int, required=True)
    p_cal.add_argument("--r", type=int, default=None, help="single support index; default: whole table")

    p_base = sub.add_parser("baselines", help="classical p-values from an indicator CSV")
    _add_common(p_base)
    p_base.add_argument("--input", type=str, required=True, help="CSV/lines of 0/1 indicators")
    p_base.add_argument("--h", type=int, default=1)
    p_base.add_argument("--T", type=int, default=None, help="horizon; default: length of the input")

    return parser


def _statistic_lines(path: str):
    if path == "-":
        return sys.stdin
    return open(path, newline="")


def _strategy_from_args(args, alpha: float) -> StrategyConfig:
    name = args.strategy
    if name == "passive":
        return StrategyConfig("passive")
    if name == "aggressive":
        return StrategyConfig("aggressive")
    if name == "binomial":
        return StrategyConfig("binomial", p=args.p, alpha=alpha)
    if name == "mixture":
        return StrategyConfig("mixture_uniform", c=args.c, alpha=alpha)
    if name == "mixture_beta":
        if args.a is None or args.b is None:
            raise CliError("mixture_beta needs --a and --b")
        return StrategyConfig("mixture_beta", a=args.a, b=args.b, alpha=alpha)
    hi = args.prior_hi if getattr(args, "prior_hi", None) is not None else 1.0
    return StrategyConfig("mimicked_logopt", prior=Prior.uniform(0.0, hi), alpha=alpha)


def _emit(payload, args, default_name: str) -> None:
    if args.format == "csv" and isinstance(payload, list):
        text = _rows_to_csv(payload)
    else:
        text = json.dumps(payload, indent=2, sort_keys=True) + "\n"
    if args.out:
        path = args.out
        if os.path.isdir(path):
            ext = "csv" if args.format == "csv" else "json"
            path = os.path.join(path, f"{default_name}.{ext}")
        with open(path, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _rows_to_csv(rows: list) -> str:
    if not rows:
        return "\n"
    cols = list(rows[0].keys())
    lines = [",".join(cols)]
    for row in rows:
        lines.append(",".join("" if row[c] is None else repr(row[c]) if isinstance(row[c], float) else str(row[c])
                              for c in cols))
    return "\n".join(lines) + "\n"


def cmd_test(args) -> int:
    alpha = check_alpha(args.alpha)
    config = _strategy_from_args(args, alpha)
    futility = alpha if args.futility is None else args.futility
    rule = StoppingRule(
        reject_threshold=1.0 / alpha,
        futility_threshold=futility,
        max_steps=args.max_steps,
    )
    src = RandomSource(args.seed, 0)
    lines = _statistic_lines(args.input)
    try:
        stream = IndicatorStream.from_value_lines(
            lines,
            tie_policy=args.tie_policy,
            source=src.derive(0),
            max_len=args.max_steps,
        )
        outcome = run_test(
            stream,
            config,
            rule,
            record_trajectory=args.trajectory,
            decimate=args.decimate,
            seed=args.seed,
        )
    finally:
        if lines is not sys.stdin:
            lines.close()

    rejected = outcome.rejected
    payload = outcome.to_json()
    payload["strategy"] = config.to_json()
    payload["alpha"] = alpha
    if args.round:
        rounded = stochastic_round(outcome.final_wealth, alpha, src.derive(1))
        payload["rounded_e_value"] = rounded.value
        payload["uniform_draw"] = rounded.uniform_draw
        rejected = rounded.value >= 1.0 / alpha
    payload["rejected"] = rejected
    if args.trajectory:
        payload["trajectory"] = [
            {"t": t, "losses": l, "wealth": math.exp(lw) if lw > float("-inf") else 0.0}
            for (t, l, lw) in outcome.trajectory
        ]
    if args.manifest:
        harness.write_manifest(args.manifest, {"command": "test", "strategy": config.to_json(), "alpha": alpha}, args.seed)
    _emit(payload, args, "test")
    return 0 if rejected else 1


def cmd_simulate(args) -> int:
    with open(args.config) as fh:
        raw = json.load(fh)
    mu_values = raw.get("mu", 0.0)
    if not isinstance(mu_values, list):
        mu_values = [mu_values]
    table = None
    base = dict(raw)
    base["seed"] = base.get("seed", args.seed)
    for mu in mu_values:
        cfg_data = dict(base)
        cfg_data["mu"] = mu
        config = harness.TrialConfig.from_json(cfg_data)
        part = harness.run_experiment(config, jobs=args.jobs)
        table = part if table is None else table.extend(part)

    out_dir = args.out or "."
    os.makedirs(out_dir, exist_ok=True)
    table.to_csv(os.path.join(out_dir, "experiment.csv"))
    with open(os.path.join(out_dir, "experiment.json"), "w") as fh:
        json.dump(table.to_json(), fh, indent=2, sort_keys=True)
        fh.write("\n")
    harness.write_manifest(os.path.join(out_dir, "manifest.json"), raw, base["seed"])
    for row in table.rows:
        print(f"mu={row.mu} {row.label}: power={row.power:.4f} tau_mean={row.tau_mean:.1f}")
    return 0


def cmd_riskscan(args) -> int:
    alpha = check_alpha(args.alpha)
    args_strategy = args.strategy
    if args_strategy == "mixture":
        config = StrategyConfig("mixture_uniform", c=args.c, alpha=alpha)
    elif args_strategy == "mixture_beta":
        config = StrategyConfig("mixture_beta", a=args.a, b=args.b, alpha=alpha)
    elif args_strategy == "binomial":
        config = StrategyConfig("binomial", p=args.p, alpha=alpha)
    else:
        config = StrategyConfig(args_strategy)
    qs = [float(tok) for tok in args.q.split(",") if tok.strip()]
    rows = []
    for q in qs:
        est = harness.estimate_resampling_risk(
            config, q, alpha, runs=args.runs, cap=args.cap, seed=args.seed
        )
        rows.append(
            {
                "label": est.label,
                "q": est.q,
                "alpha": est.alpha,
                "runs": est.runs,
                "cap": est.cap,
                "reject_fraction": est.reject_fraction,
                "resampling_risk": est.resampling_risk,
            }
        )
    _emit(rows, args, "riskscan")
    return 0


def _read_indicators(path: str) -> list:
    lines = sys.stdin if path == "-" else open(path, newline="")
    try:
        values = list(iter_statistic_values(lines))
    finally:
        if lines is not sys.stdin:
            lines.close()
    inds = []
    for v in values:
        if v not in (0.0, 1.0):
            raise CliError(f"indicator values must be 0 or 1, got {v}")
        inds.append(int(v))
    return inds


def cmd_reconstruct(args) -> int:
    alpha = check_alpha(args.alpha)
    if args.target == "perm":
        if args.T is None:
            raise CliError("perm target needs --T")
        target = perm_target_evalue(args.T, alpha)
    elif args.target == "bc":
        if args.h is None:
            raise CliError("bc target needs --h")
        horizon = bc_horizon(args.h, alpha, args.T)
        target = perm_target_evalue(horizon, alpha)
    else:
        if not args.file:
            raise CliError("file target needs --file")
        with open(args.file) as fh:
            data = json.load(fh)
        target = EValueVector([float(v) for v in data["values"]])
    table = backward_reconstruct(target)
    payload = {"target": target.to_json(), "table": table.to_json()}

    if args.indicators:
        inds = _read_indicators(args.indicators)[: table.horizon]
        trajectory = []
        losses = 0
        wealth = 1.0
        peak = 0.0
        for tau, ind in enumerate(inds, start=1):
            b0, b1 = table.bet(tau, losses)
            wealth *= float(b1 if ind else b0)
            losses += ind
            peak = max(peak, wealth)
            if args.target == "perm":
                pv = float(anytime_perm_pvalue(losses, tau, table.horizon))
            elif args.target == "bc":
                pv = float(anytime_bc_pvalue(losses, tau, args.T if args.T else math.inf, args.h))
            else:
                pv = min(1.0, 1.0 / peak) if peak > 0 else 1.0
            trajectory.append({"t": tau, "losses": losses, "wealth": wealth, "p_value": pv})
        payload["trajectory"] = trajectory
    _emit(payload, args, "reconstruct")
    return 0


def cmd_calibrate(args) -> int:
    T = args.T
    fn = classical.calibrate_harmonic if args.kind == "harmonic" else classical.calibrate_sqrt
    if args.r is not None:
        value = fn(Fraction(args.r, T + 1), T)
        _emit({"kind": args.kind, "T": T, "r": args.r, "e_value": float(value)}, args, "calibrate")
        return 0
    rows = [
        {"r": r, "p_value": r / (T + 1), "e_value": float(fn(Fraction(r, T + 1), T))}
        for r in range(1, T + 2)
    ]
    _emit(rows, args, "calibrate")
    return 0


def cmd_baselines(args) -> int:
    alpha = check_alpha(args.alpha)
    inds = _read_indicators(args.input)
    if not inds:
        raise CliError("empty indicator input")
    T = args.T if args.T is not None else len(inds)
    losses_T = sum(inds[:T])
    payload = {
        "n_indicators": len(inds),
        "perm": {"T": T, "p_value": float(classical.perm_pvalue(losses_T, T))},
    }
    bc = classical.bc_pvalue(iter(inds), args.h, T)
    payload["bc"] = {
        "h": args.h,
        "T": T,
        "p_value": float(bc.p_value),
        "stop_time": bc.stop_time,
        "losses": bc.losses,
    }
    try:
        nb = classical.negbin_pvalue(iter(inds), args.h)
        payload["negbin"] = {"h": args.h, "p_value": float(nb.p_value), "stop_time": nb.stop_time}
    except Exception:
        payload["negbin"] = {"h": args.h, "status": "exhausted before the loss budget"}
    payload["alpha"] = alpha
    _emit(payload, args, "baselines")
    return 0


_COMMANDS = {
    "test": cmd_test,
    "simulate": cmd_simulate,
    "riskscan": cmd_riskscan,
    "reconstruct": cmd_reconstruct,
    "calibrate": cmd_calibrate,
    "baselines": cmd_baselines,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except (CliError, InvalidTargetError, ValueError, OSError, KeyError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
