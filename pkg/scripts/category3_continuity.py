#!/usr/bin/env python3
"""Inject each fault kind into node A while a worker enters the Stop Zone.

Compares the dual-node merged output against a node-B-only reference run
with the same seed and reports unsafe or less conservative instants.
"""

import argparse

from dmrsafety.config import builtin_path, load_node_config, load_rules, load_scenario
from dmrsafety.engine import ms, to_ms
from dmrsafety.faults import FaultInjection, first_less_conservative, inject_all, measure, unsafe_instants
from dmrsafety.perception import demand_instants
from dmrsafety.redundancy import DEFAULT_RECOVERY, FaultKind
from dmrsafety.system import build_pair

CASES = [
    FaultInjection("A", FaultKind.HEARTBEAT_LOSS, ms(5008.13)),
    FaultInjection("A", FaultKind.NPU_HANG, ms(52_700.0)),
    FaultInjection("A", FaultKind.POWER_BROWNOUT, ms(6997.55), {"depth": 0.2}),
    FaultInjection("A", FaultKind.SENSOR_FAULT, ms(50_700.45)),
]


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("--seed", type=int, default=11)
    args = parser.parse_args(argv)

    predicate = load_rules(builtin_path("cobot.rules"))
    script = load_scenario(builtin_path("scenario1.yaml"))
    cfg = load_node_config(builtin_path("node_s1.yaml"))
    ok = True
    for fault in CASES:
        end = fault.inject_at + ms(2_100) + DEFAULT_RECOVERY[fault.kind]
        system = build_pair(predicate, script, cfg, None, args.seed)
        inject_all(system, [fault])
        dual = system.run(end)
        ref = build_pair(predicate, script, cfg, None, args.seed, ("B",)).run(end)
        rec = measure(dual.trace, fault)
        entries = [d for d in demand_instants(script, predicate.d_min, end)
                   if rec.detected_at is not None and rec.recovered_at is not None
                   and rec.detected_at < d < rec.recovered_at]
        unsafe = unsafe_instants(dual.timeline, script, predicate.d_min, 0, end)
        weaker = first_less_conservative(dual.timeline, ref.timeline, 0, end)
        passed = bool(entries) and not unsafe and weaker is None
        ok &= passed
        print(f"{fault.kind.value:<14} entries_in_recovery={len(entries)} unsafe={len(unsafe)} "
              f"less_conservative_at={'-' if weaker is None else f'{to_ms(weaker):.3f} ms'} "
              f"{'PASS' if passed else 'FAIL'}")
    return 0 if ok else 1


if __name__ == "__main__":
    raise SystemExit(main())
