"""Command-line front end: run experiments, build comparison tables, audit regret."""

from __future__ import annotations

import argparse
import sys

from . import harness
from .config import ConfigError, parse_config, serialize_config, with_overrides

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_AUDIT_FAILED = 2


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("config", help="path to the experiment config (YAML)")
    parser.add_argument("--out-dir", help="override the config's output directory")
    parser.add_argument(
        "--seed-override",
        help="comma-separated seeds replacing the config's seed list",
    )
    parser.add_argument(
        "--print-config",
        action="store_true",
        help="echo the parsed config (defaults filled) and exit",
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ogrs-lab",
        description=(
            "Online training lab for streaming label noise: gradient-based "
            "sample selection vs trimmed-loss/naive/oracle baselines."
        ),
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run every (selector x seed) pair")
    _add_common(p_run)

    p_cmp = sub.add_parser("compare", help="build the selector x clean-ratio table")
    _add_common(p_cmp)

    p_audit = sub.add_parser("audit", help="regret-vs-iterations audit")
    _add_common(p_audit)
    p_audit.add_argument(
        "--m-grid",
        default=",".join(str(m) for m in harness.DEFAULT_M_GRID),
        help="comma-separated iteration budgets (>= 4 values)",
    )
    p_audit.add_argument("--trials", type=int, default=30)
    p_audit.add_argument(
        "--slope-max",
        type=float,
        default=0.75,
        help="fail (exit 2) if the fitted log-log slope exceeds this",
    )
    return parser


def _load_config(args):
    cfg = parse_config(args.config)
    seeds = None
    if args.seed_override:
        seeds = tuple(int(s) for s in args.seed_override.split(","))
    return with_overrides(cfg, seeds=seeds, output_dir=args.out_dir)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = _load_config(args)
    except (ConfigError, ValueError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_ERROR

    if args.print_config:
        print(serialize_config(cfg), end="")
        return EXIT_OK

    try:
        if args.command == "run":
            summary = harness.run_experiment(cfg)
            for label, stats in summary["selectors"].items():
                print(
                    f"{label}: final accuracy "
                    f"{stats['final_accuracy_mean']:.4f} "
                    f"± {stats['final_accuracy_std']:.4f}"
                )
            return EXIT_OK
        if args.command == "compare":
            table = harness.compare(cfg)
            print(table.to_csv(), end="")
            return EXIT_OK
        # audit
        try:
            m_grid = [int(v) for v in args.m_grid.split(",") if v.strip()]
        except ValueError:
            print("audit error: --m-grid must be comma-separated integers",
                  file=sys.stderr)
            return EXIT_ERROR
        if len(m_grid) < 4:
            print("audit error: --m-grid needs at least 4 values", file=sys.stderr)
            return EXIT_ERROR
        outcome = harness.regret_audit_cmd(
            cfg, m_grid=m_grid, trials=args.trials, slope_max=args.slope_max
        )
        if outcome.result.flat:
            print("audit: flat (all regrets ~ 0); slope undefined")
            return EXIT_OK
        print(f"audit: slope {outcome.result.slope:.4f} "
              f"(threshold {args.slope_max}), g_max {outcome.result.g_max:.4f}")
        return EXIT_OK if outcome.passed else EXIT_AUDIT_FAILED
    except harness.HarnessError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
