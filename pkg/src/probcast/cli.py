"""Command-line front end: simulate, attack, bound, gamma, sweep, optimize.

Every subcommand prints JSON (CSV for ``sweep``) to stdout or to ``--out``.
The ``SEED`` environment variable, when set, overrides ``--seed``.  Exit
status is 0 on success and 2 on usage or configuration errors.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
from typing import Sequence

from . import adversaries
from .bounds import (
    LOG10_E, combined_security, contagion_consistency_bound, contagion_totality_bound,
    sieve_consistency_bound, totality_split_term,
)
from .core import ConfigError, ProtocolParams, SystemConfig
from .epidemics import GameParams, gamma_distribution
from .numerics import NEG_INF, DomainError
from .optimizer import optimize_params, rows_to_csv, sweep
from .simnet import run_honest_batch

ATTACKS = ("sieve-two-phase", "contagion-consistency", "contagion-totality")


def _add_params(p: argparse.ArgumentParser) -> None:
    d = ProtocolParams()
    p.add_argument("--g", type=float, default=d.g, help="expected gossip sample size")
    p.add_argument("--e", type=int, default=d.e, help="echo sample size")
    p.add_argument("--e-hat", type=int, default=d.e_hat, help="echo threshold")
    p.add_argument("--r", type=int, default=d.r, help="ready sample size")
    p.add_argument("--r-hat", type=int, default=d.r_hat, help="ready threshold")
    p.add_argument("--d", type=int, default=d.d, help="delivery sample size")
    p.add_argument("--d-hat", type=int, default=d.d_hat, help="delivery threshold")


def _params(args) -> ProtocolParams:
    return ProtocolParams(g=args.g, e=args.e, e_hat=args.e_hat, r=args.r, r_hat=args.r_hat,
                          d=args.d, d_hat=args.d_hat)


def _seed(args) -> int:
    env = os.environ.get("SEED")
    if env is not None:
        try:
            return int(env)
        except ValueError as exc:
            raise ConfigError(f"SEED must be an integer, got {env!r}") from exc
    return args.seed


def _log10(x: float):
    return None if x == NEG_INF else x * LOG10_E


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="probcast", description=__doc__.splitlines()[0])
    parser.add_argument("--out", help="write output to this path instead of stdout")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="Monte Carlo property frequencies of honest broadcasts")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--f", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--adversary", choices=("passive",), default="passive")
    p.add_argument("--protocol", choices=("murmur", "sieve", "contagion"), default="contagion")
    p.add_argument("--scheduler", choices=("fifo", "random"), default="fifo")
    p.add_argument("--trials", type=int, default=100)
    _add_params(p)

    p = sub.add_parser("attack", help="scripted attack success frequency next to its bound")
    p.add_argument("--attack", choices=ATTACKS, required=True)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--f", type=float, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--trials", type=int, default=1000)
    _add_params(p)

    p = sub.add_parser("bound", help="all security bounds as JSON")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--f", type=float, required=True)
    _add_params(p)

    p = sub.add_parser("gamma", help="threshold contagion distribution as JSON")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--r", type=int, required=True)
    p.add_argument("--l", type=float, default=1.0)
    p.add_argument("--k", type=int, default=1)
    p.add_argument("--s", type=int, default=1)
    p.add_argument("--rhat", type=int, required=True)

    p = sub.add_parser("sweep", help="bounds along one axis as CSV")
    p.add_argument("--axis", choices=("S", "N", "f"), required=True)
    p.add_argument("--grid", required=True, help="comma-separated axis values")
    p.add_argument("--n", type=int, default=1024)
    p.add_argument("--f", type=float, default=0.1)
    p.add_argument("--s", type=int, default=64)
    p.add_argument("--mode", choices=("equal", "unequal"), default="equal")

    p = sub.add_parser("optimize", help="best parameters for an average sample size")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--f", type=float, required=True)
    p.add_argument("--s", type=int, required=True)
    p.add_argument("--mode", choices=("equal", "unequal"), default="equal")
    p.add_argument("--budget", type=int, default=24)
    return parser


def cmd_simulate(args) -> dict:
    config, params, seed = SystemConfig(args.n, args.f), _params(args), _seed(args)
    counts = {"no_duplication": 0, "integrity": 0, "validity": 0, "totality": 0, "consistency": 0}
    connected = violations_connected = 0
    for summary in run_honest_batch(config, params, seed, args.trials, protocol=args.protocol,
                                    scheduler=args.scheduler):
        rep = summary.report()
        for key in counts:
            counts[key] += not getattr(rep, key)
        if summary.gossip_connected:
            connected += 1
            violations_connected += not (rep.validity and rep.totality)
    return {
        "n": args.n, "f": args.f, "seed": seed, "trials": args.trials, "protocol": args.protocol,
        "params": params.as_dict(),
        "violation_frequency": {k: v / args.trials if args.trials else 0.0 for k, v in counts.items()},
        "gossip_connected_runs": connected,
        "violations_when_connected": violations_connected,
    }


def attack_bound(attack: str, config: SystemConfig, params: ProtocolParams) -> float:
    """Natural-log bound matching a scripted attack (its lower layer is ideal)."""
    n, c, f, p = config.n, config.c, config.f, params
    if attack == "sieve-two-phase":
        return sieve_consistency_bound(c, f, p.e, p.e_hat)
    log_c, log_mu = contagion_consistency_bound(n, c, f, p.r, p.r_hat, p.d, p.d_hat, NEG_INF)
    if attack == "contagion-consistency":
        return log_c
    return contagion_totality_bound(n, c, f, p.r, p.r_hat, p.d, p.d_hat, NEG_INF, log_mu)


def attack_frequency(attack: str, config: SystemConfig, params: ProtocolParams, trials: int, seed: int) -> float:
    """Success frequency over seeds ``seed .. seed + trials - 1``."""
    outcome = {
        "sieve-two-phase": lambda s: adversaries.simplified_sieve_outcome(config, params, s)["consistency_violated"],
        "contagion-consistency": lambda s: adversaries.contagion_consistency_outcome(config, params, s),
        "contagion-totality": lambda s: adversaries.contagion_totality_outcome(config, params, s),
    }[attack]
    return sum(bool(outcome(seed + t)) for t in range(trials)) / trials if trials else 0.0


def cmd_attack(args) -> dict:
    config, params, seed = SystemConfig(args.n, args.f), _params(args), _seed(args)
    params.validate(require_feedback_order=args.attack != "sieve-two-phase")
    freq = attack_frequency(args.attack, config, params, args.trials, seed)
    bound = math.exp(attack_bound(args.attack, config, params))
    out = {"attack": args.attack, "n": args.n, "f": args.f, "seed": seed, "trials": args.trials,
           "params": params.as_dict(), "frequency": freq, "bound": bound, "vacuous": bound >= 1.0}
    if args.attack == "contagion-totality":
        p = params
        out["split_term"] = math.exp(totality_split_term(config.n, config.c, config.f, p.r, p.r_hat, p.d, p.d_hat))
    return out


def cmd_bound(args) -> dict:
    params = _params(args).validate()
    return combined_security(SystemConfig(args.n, args.f), params).to_json()


def cmd_gamma(args) -> dict:
    try:
        game = GameParams(args.n, args.r, args.l, args.k, args.s, args.rhat)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    return gamma_distribution(game).to_json()


def cmd_sweep(args) -> str:
    cast = {"S": int, "N": int, "f": float}[args.axis]
    try:
        grid = [cast(v) for v in args.grid.split(",") if v.strip()]
    except ValueError as exc:
        raise ConfigError(f"bad grid {args.grid!r}") from exc
    rows = sweep(args.axis, grid, {"n": args.n, "f": args.f, "s": args.s}, mode=args.mode)
    return rows_to_csv(rows)


def cmd_optimize(args) -> dict:
    result = optimize_params(args.n, args.f, args.s, budget=args.budget, mode=args.mode)
    out = result.report.to_json()
    out["S"] = args.s
    out["mode"] = args.mode
    out["evaluated"] = result.evaluated
    return out


COMMANDS = {
    "simulate": cmd_simulate, "attack": cmd_attack, "bound": cmd_bound,
    "gamma": cmd_gamma, "sweep": cmd_sweep, "optimize": cmd_optimize,
}


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        result = COMMANDS[args.command](args)
    except (ConfigError, DomainError) as exc:
        print(f"probcast: error: {exc}", file=sys.stderr)
        return 2
    text = result if isinstance(result, str) else json.dumps(result, indent=2, sort_keys=True) + "\n"
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    return 0


if __name__ == "__main__":
    sys.exit(main())
