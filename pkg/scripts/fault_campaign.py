#!/usr/bin/env python3
"""Four-fault campaign on node A: detection and recovery times per fault."""

import argparse

from dmrsafety.campaign import execute
from dmrsafety.config import builtin_path, load_fault_plan, load_node_config, load_rules, load_scenario
from dmrsafety.engine import to_ms
from dmrsafety.faults import detection_window


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--seed", type=int, default=7)
    parser.add_argument("--duration-ms", type=float, default=110_000)
    parser.add_argument("--plan", default=str(builtin_path("fault_campaign.yaml")))
    args = parser.parse_args(argv)

    predicate = load_rules(builtin_path("cobot.rules"))
    script = load_scenario(builtin_path("scenario1.yaml"))
    cfg = load_node_config(builtin_path("node_s1.yaml"))
    plan = load_fault_plan(args.plan)
    result = execute(predicate, script, [cfg, cfg], plan, args.duration_ms, args.seed)

    print(f"{'Fault':<14} {'Mechanism':<13} {'T_det (ms)':>10} {'window (ms)':>17} {'T_rec (ms)':>11}")
    for rec in result.records:
        lo, hi = detection_window(rec.injection.kind, cfg)
        det = "-" if rec.t_det is None else f"{to_ms(rec.t_det):.2f}"
        t_rec = "-" if rec.t_rec is None else f"{to_ms(rec.t_rec):.2f}"
        window = f"({to_ms(lo):g}, {to_ms(hi):g}]"
        print(f"{rec.injection.kind.value:<14} {rec.detected_by or '-':<13} {det:>10} {window:>17} {t_rec:>11}")
    print(f"dc={result.coverage.dc:.3f} demands={len(result.coverage.demand_instants)} safe={result.safe}")
    return 0 if result.safe else 4


if __name__ == "__main__":
    raise SystemExit(main())
