"""Command-line front door.

    xchainlab run <scenario> [--seed N] [--out-dir DIR] [--plot]
    xchainlab simulate {cheat|rebranch} [grid flags] [--out CSV] [--plot]
    xchainlab plan-segment [rule flags]
    xchainlab storage [workload flags] [--out CSV] [--plot]

Exit codes: 0 clean, 2 validation failure detected, 3 configuration
error. The XCHAINLAB_SEED environment variable supplies the default
seed when --seed is omitted.
"""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

from .confirmation import ConfirmationError, Infeasible, SegmentConfig, plan_segment_length
from .harness import EXIT_CLEAN, EXIT_CONFIG_ERROR, EXIT_VALIDATION_FAILURE, run_scenario
from .scenario import ConfigError, load_scenario
from .simlab import (
    DEFAULT_LENGTHS,
    DEFAULT_NODES,
    DEFAULT_TRIALS,
    RaceConfig,
    run_grid,
    run_storage_scenario,
    write_race_csv,
    write_storage_csv,
)
from .validator import write_validation_csv


class CliError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # flag mistakes are configuration errors under the exit-code contract
    def error(self, message):
        raise CliError(message)


def _env_seed() -> int:
    raw = os.environ.get("XCHAINLAB_SEED")
    if raw is None:
        return 0
    try:
        return int(raw)
    except ValueError as exc:
        raise CliError(f"XCHAINLAB_SEED={raw!r} is not an integer") from exc


def _int_list(raw: str) -> list[int]:
    try:
        return [int(tok) for tok in raw.replace(",", " ").split()]
    except ValueError as exc:
        raise CliError(f"cannot parse integer list {raw!r}") from exc


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="xchainlab", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run a scenario end to end")
    p_run.add_argument("scenario", help="scenario file")
    p_run.add_argument("--seed", type=int, default=None,
                       help="override the scenario seed")
    p_run.add_argument("--out-dir", default=None,
                       help="write report.json, validation.csv and confirmation.jsonl here")
    p_run.add_argument("--plot", action="store_true",
                       help="render figures next to the reports")

    p_sim = sub.add_parser("simulate", help="Monte-Carlo race grids")
    p_sim.add_argument("model", choices=("cheat", "rebranch"))
    p_sim.add_argument("--nodes", default=None,
                       help=f"comma list of producer node counts (default {','.join(map(str, DEFAULT_NODES))})")
    p_sim.add_argument("--lengths", default=None,
                       help=f"comma list of segment lengths (default {','.join(map(str, DEFAULT_LENGTHS))})")
    p_sim.add_argument("--trials", type=int, default=DEFAULT_TRIALS)
    p_sim.add_argument("--avg-block-time", type=float, default=10.0,
                       help="average mining time in seconds")
    p_sim.add_argument("--seed", type=int, default=None)
    p_sim.add_argument("--out", default=None, help="CSV path (default stdout)")
    p_sim.add_argument("--plot", action="store_true",
                       help="render a figure next to --out")

    p_plan = sub.add_parser("plan-segment", help="choose a segment length")
    p_plan.add_argument("--p-fake", type=float, required=True)
    p_plan.add_argument("--delta", type=float, required=True)
    p_plan.add_argument("--beta-ms", type=int, required=True)
    p_plan.add_argument("--avg-block-time-ms", type=int, required=True)
    p_plan.add_argument("--header-size", type=int, default=91)
    p_plan.add_argument("--max-block-size", type=int, default=1 << 20)

    p_store = sub.add_parser("storage", help="shared-storage accounting scenario")
    p_store.add_argument("--tx-interval-ms", type=int, default=1000)
    p_store.add_argument("--sample-interval-ms", type=int, default=30_000)
    p_store.add_argument("--duration-ms", type=int, default=300_000)
    p_store.add_argument("--sharers", type=int, default=2)
    p_store.add_argument("--block-interval-ms", type=int, default=10_000)
    p_store.add_argument("--out", default=None, help="CSV path (default stdout)")
    p_store.add_argument("--plot", action="store_true")

    return parser


def cmd_run(args) -> int:
    scenario = load_scenario(args.scenario, seed_override=_pick_seed(args.seed, None))
    report, consumer = run_scenario(scenario)
    out_dir = Path(args.out_dir) if args.out_dir else None
    if out_dir is None:
        sys.stdout.write(report.to_json())
    else:
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / "report.json").write_text(report.to_json())
        write_validation_csv(consumer.outcomes, out_dir / "validation.csv")
        from .confirmation import write_confirmation_log

        write_confirmation_log(consumer.state, consumer.view, out_dir / "confirmation.jsonl")
        if args.plot:
            from .plots import plot_validation_summary

            plot_validation_summary(report.to_dict(), out_dir / "validation.png")
        summary = report.validation
        print(
            f"run: {report.producer_blocks} producer blocks, "
            f"{len(report.segments)} segments confirmed, "
            f"{summary['match']} match / {summary['mismatch']} mismatch / "
            f"{summary['inconclusive']} inconclusive -> exit {report.exit_status}"
        )
    return report.exit_status


def _pick_seed(flag_value: int | None, fallback: int | None) -> int | None:
    if flag_value is not None:
        return flag_value
    if os.environ.get("XCHAINLAB_SEED") is not None:
        return _env_seed()
    return fallback


def cmd_simulate(args) -> int:
    nodes = _int_list(args.nodes) if args.nodes else list(DEFAULT_NODES)
    lengths = _int_list(args.lengths) if args.lengths else list(DEFAULT_LENGTHS)
    if args.trials < 1:
        raise CliError("--trials must be >= 1")
    seed = _pick_seed(args.seed, 0)
    cfg = RaceConfig(
        producer_nodes=max(nodes),
        segment_length=max(lengths),
        avg_mining_time=args.avg_block_time,
        trials=args.trials,
        master_seed=seed,
    )
    results = run_grid(args.model, nodes, lengths, cfg)
    if args.out:
        write_race_csv(results, args.out)
        if args.plot:
            from .plots import plot_race_grid

            plot_race_grid(results, Path(args.out).with_suffix(".png"))
    else:
        write_race_csv(results, sys.stdout)
    if args.out:
        print(f"{args.model}: {len(results)} cells, {args.trials} trials each, seed {seed}")
        width = max(len(str(n)) for n in nodes)
        header = " " * (width + 2) + "  ".join(f"L={L:<2}" for L in lengths)
        print(header)
        for n in nodes:
            row = [r for r in results if r.n == n]
            cells = "  ".join(f"{r.estimate:.4f}" for r in sorted(row, key=lambda r: r.L))
            print(f"n={n:<{width}} {cells}")
    return EXIT_CLEAN


def cmd_plan_segment(args) -> int:
    cfg = SegmentConfig(
        p_fake_avg=args.p_fake,
        delta=args.delta,
        beta_ms=args.beta_ms,
        avg_block_time_ms=args.avg_block_time_ms,
        header_size=args.header_size,
        max_block_size=args.max_block_size,
    )
    plan = plan_segment_length(cfg)
    print(f"segment length n = {plan.n}")
    print(
        f"  fit rule:    n * {cfg.header_size} B < {cfg.max_block_size} B"
        f"  -> n <= {plan.r1_max_n}"
    )
    print(
        f"  risk rule:   {cfg.p_fake_avg} ** n < {cfg.delta}"
        f"  -> n >= {plan.r2_min_n}"
    )
    print(
        f"  delay rule:  n * {cfg.avg_block_time_ms} ms < {cfg.beta_ms} ms"
        f"  -> n <= {plan.r3_max_n}"
    )
    if not plan.r2_met:
        print(
            f"  warning: risk rule unmet ({cfg.p_fake_avg} ** {plan.n} = "
            f"{cfg.p_fake_avg ** plan.n:.6g} >= {cfg.delta}); hard caps limit n"
        )
    return EXIT_CLEAN


def cmd_storage(args) -> int:
    result = run_storage_scenario(
        args.tx_interval_ms,
        args.sample_interval_ms,
        args.duration_ms,
        args.sharers,
        block_interval=args.block_interval_ms,
    )
    if args.out:
        write_storage_csv(result, args.out)
        if args.plot:
            from .plots import plot_storage_series

            plot_storage_series(result, Path(args.out).with_suffix(".png"))
        print(
            f"storage: shared total {result.shared_total} B vs individual "
            f"{result.individual_total} B ({result.savings_ratio:.1%} saved); "
            f"savings = {result.savings.savings} B across "
            f"{result.savings.node_count} requesters"
        )
    else:
        write_storage_csv(result, sys.stdout)
    return EXIT_CLEAN


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command == "run":
            return cmd_run(args)
        if args.command == "simulate":
            return cmd_simulate(args)
        if args.command == "plan-segment":
            return cmd_plan_segment(args)
        if args.command == "storage":
            return cmd_storage(args)
        raise CliError(f"unknown command {args.command!r}")
    except (CliError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG_ERROR
    except Infeasible as exc:
        print(f"infeasible ({exc.rule}): {exc}", file=sys.stderr)
        return EXIT_CONFIG_ERROR
    except ConfirmationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG_ERROR


if __name__ == "__main__":
    sys.exit(main())
