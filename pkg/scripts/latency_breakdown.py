#!/usr/bin/env python3
"""Latency breakdown for the three shipped scenarios, one node each."""

import argparse

from dmrsafety.config import builtin_path, load_node_config, load_rules, load_scenario
from dmrsafety.profiler import check_budget, format_report, profile, report_rows, t_stop_stats


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--cycles", type=int, default=10_000)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--constant", action="store_true", help="use the fixed-latency node configs")
    parser.add_argument("--format", choices=("csv", "json", "table"), default="table")
    args = parser.parse_args(argv)

    predicate = load_rules(builtin_path("cobot.rules"))
    suffix = "_constant" if args.constant else ""
    rows, notes = [], []
    for n in (1, 2, 3):
        script = load_scenario(builtin_path(f"scenario{n}.yaml"))
        cfg = load_node_config(builtin_path(f"node_s{n}{suffix}.yaml"))
        stats = profile(script, cfg, args.cycles, args.seed, predicate)
        rows.extend(report_rows(f"S{n}", stats))
        check = check_budget(t_stop_stats(stats), predicate.t_stop_budget_us)
        notes.append(f"S{n}: wcet_gap_ratio={check.wcet_gap_ratio:.3f} budget_violations={check.violations}")
    print(format_report(rows, args.format), end="")
    for line in notes:
        print(line)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
