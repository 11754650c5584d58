"""Command line entry point: ``riskmcts run | risk-eval | overhead``."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import risk
from .config import load_config
from .export import read_samples, write_episodes, write_heatmaps, write_overhead
from .harness import OVERHEAD_ITERATION_LEVELS, GridSpec, measure_overhead, run_grid, success_table
from .planner import POLICIES
from .world import builtin_scenarios, load_scenario

RISK_METRICS = {"var": risk.var, "var_plus": risk.var_plus, "cvar": risk.cvar, "ccvar": risk.ccvar}


def _int_list(text: str) -> list[int]:
    try:
        values = [int(v) for v in text.replace(",", " ").split()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a list of integers, got {text!r}") from None
    if not values or min(values) < 1:
        raise argparse.ArgumentTypeError("iteration levels must be positive integers")
    return values


def _scenario_refs(ref: str) -> dict:
    if ref == "all":
        return builtin_scenarios()
    builtin = builtin_scenarios()
    if ref in builtin:
        return {ref: builtin[ref]}
    sc = load_scenario(ref)
    return {sc.id: sc}


def cmd_run(args) -> int:
    config = load_config(args.config)
    scenarios = _scenario_refs(args.scenario)
    policies = POLICIES if args.policy == "all" else (args.policy,)
    noise = ("on", "off") if args.noise == "both" else (args.noise,)
    spec = GridSpec(tuple(scenarios), policies, tuple(args.iterations), args.seeds, noise, args.master_seed)
    results = run_grid(spec, config, args.parallelism, scenarios)
    out = Path(args.out)
    write_heatmaps(results, out)
    write_episodes(results, out / "episodes.jsonl")
    for cell in success_table(results).values():
        print(f"{cell.scenario:14s} {cell.policy:9s} {cell.iterations:6d} noise={cell.noise:3s} "
              f"success={cell.success_rate:.3f} ({cell.successes}/{cell.episodes})")
    expected = len(spec.scenarios) * len(spec.policies) * len(spec.iteration_levels) * spec.seeds * len(spec.noise)
    if len(results) < expected:
        print(f"warning: {expected - len(results)} episode(s) failed, see log", file=sys.stderr)
        return 1
    return 0


def cmd_risk_eval(args) -> int:
    samples = read_samples(args.input)
    value = RISK_METRICS[args.metric](samples, args.alpha)
    print(f"{args.metric}_{args.alpha:g} = {value:.9g}  (n={len(samples)})")
    return 0


def cmd_overhead(args) -> int:
    config = load_config(args.config)
    scenario = next(iter(_scenario_refs(args.scenario).values()))
    rows = measure_overhead(scenario, args.iterations, POLICIES, args.steps, args.noise, config, args.master_seed)
    for r in rows:
        print(f"{r.iterations:6d} {r.policy:9s} {r.mean_ms:10.2f} ms/step  x{r.ratio:.3f}")
    if args.out:
        write_overhead(rows, Path(args.out) / "overhead.csv")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="riskmcts", description="Risk-aware ensemble MCTS experiments.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run an episode grid and export success-rate heatmaps")
    run.add_argument("--scenario", default="all", help="built-in id, JSON file, or 'all'")
    run.add_argument("--policy", default="all", choices=(*POLICIES, "all"))
    run.add_argument("--iterations", type=_int_list, default=[250, 500, 1000, 2000])
    run.add_argument("--seeds", type=int, default=100)
    run.add_argument("--noise", default="both", choices=("on", "off", "both"))
    run.add_argument("--config", help="JSON config file")
    run.add_argument("--out", default="results")
    run.add_argument("--parallelism", type=int, default=1)
    run.add_argument("--master-seed", type=int, default=0)
    run.set_defaults(func=cmd_run)

    ev = sub.add_parser("risk-eval", help="evaluate a risk metric on samples from a CSV file")
    ev.add_argument("--metric", required=True, choices=sorted(RISK_METRICS))
    ev.add_argument("--alpha", type=float, required=True)
    ev.add_argument("--input", required=True)
    ev.set_defaults(func=cmd_risk_eval)

    ov = sub.add_parser("overhead", help="per-step planning time relative to the baseline")
    ov.add_argument("--scenario", required=True, help="built-in id or JSON file")
    ov.add_argument("--iterations", type=_int_list, default=list(OVERHEAD_ITERATION_LEVELS))
    ov.add_argument("--steps", type=int, default=20, help="planning steps averaged per policy")
    ov.add_argument("--noise", default="on", choices=("on", "off"))
    ov.add_argument("--config")
    ov.add_argument("--out", help="directory for overhead.csv")
    ov.add_argument("--master-seed", type=int, default=0)
    ov.set_defaults(func=cmd_overhead)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (OSError, ValueError, KeyError, risk.EmptyDistribution) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
