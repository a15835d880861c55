"""Command-line entry point.

Exit codes:
    0  success
    1  rule-document diagnostics, or an invalid config / fault plan
    2  Safety Definition Inconsistent
    3  I/O error (missing or unreadable file)
    4  unsafe merged output (FullSpeed while a human is inside the Stop Zone)
    5  diagnostic coverage below the rule document's dc_target
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path
from typing import Optional, Sequence

from .campaign import run_config, write_outputs
from .config import RunConfig, builtin_path, load_node_config, load_rules, load_scenario
from .distributions import ConfigError
from .engine import to_ms
from .faults import FaultPlanError, fault_table_csv
from .profiler import check_budget, format_report, profile, report_rows, t_stop_stats
from .rules import RuleParseError, SafetyDefinitionInconsistent, compile_source

EXIT_OK = 0
EXIT_DIAGNOSTICS = 1
EXIT_INCONSISTENT = 2
EXIT_IO = 3
EXIT_UNSAFE = 4
EXIT_COVERAGE = 5

DEFAULT_RUN = "builtin:run_default.yaml"


def _emit(text: str, out: Optional[str]) -> None:
    if out:
        Path(out).parent.mkdir(parents=True, exist_ok=True)
        Path(out).write_text(text, encoding="utf-8", newline="\n")
    else:
        sys.stdout.write(text)


def cmd_compile(args) -> int:
    try:
        source = Path(args.rule_file).read_text(encoding="utf-8")
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    try:
        pred = compile_source(source)
    except RuleParseError as exc:
        for diag in exc.diagnostics:
            print(f"{args.rule_file}:{diag}", file=sys.stderr)
        return EXIT_DIAGNOSTICS
    except SafetyDefinitionInconsistent as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_INCONSISTENT
    _emit(json.dumps(pred.to_json(), indent=2) + "\n", args.out)
    return EXIT_OK


def _load_run_config(args) -> RunConfig:
    cfg = RunConfig.from_file(args.config)
    if args.seed is not None:
        cfg.seed = args.seed
    if getattr(args, "duration_ms", None) is not None:
        cfg.duration_ms = args.duration_ms
    return cfg


def cmd_run(args) -> int:
    cfg = _load_run_config(args)
    out_dir = Path(args.out) if args.out else cfg.output_dir
    result = run_config(cfg)
    info = write_outputs(result, out_dir, args.format)
    print(f"wrote {out_dir} (merged changes={info['merged_changes']}, dc={info['dc']:.3f})")
    if result.unsafe:
        print(f"unsafe output: FullSpeed inside the Stop Zone at t={result.unsafe[0]} us", file=sys.stderr)
        return EXIT_UNSAFE
    if result.coverage.dc < float(result.predicate.dc_target):
        print(f"diagnostic coverage {result.coverage.dc:.3f} below target {float(result.predicate.dc_target)}",
              file=sys.stderr)
        return EXIT_COVERAGE
    return EXIT_OK


def cmd_faults(args) -> int:
    cfg = _load_run_config(args)
    if args.plan:
        cfg.fault_plan = Path(args.plan)
    if cfg.fault_plan is None:
        raise ConfigError("no fault plan given")
    result = run_config(cfg)
    if args.format == "csv":
        text = fault_table_csv(result.records)
    else:
        rows = [
            {
                "fault": r.injection.kind.value,
                "mechanism": r.detected_by,
                "t_det_ms": None if r.t_det is None else to_ms(r.t_det),
                "t_rec_ms": None if r.t_rec is None else to_ms(r.t_rec),
            }
            for r in result.records
        ]
        if args.format == "json":
            text = json.dumps(rows, indent=2) + "\n"
        else:
            lines = [f"{'Fault':<14} {'Mechanism':<14} {'T_det (ms)':>11} {'T_rec (ms)':>11}"]
            for row in rows:
                det = "-" if row["t_det_ms"] is None else f"{row['t_det_ms']:.2f}"
                rec = "-" if row["t_rec_ms"] is None else f"{row['t_rec_ms']:.2f}"
                lines.append(f"{row['fault']:<14} {row['mechanism'] or '-':<14} {det:>11} {rec:>11}")
            text = "\n".join(lines) + "\n"
    _emit(text, args.out)
    print(f"dc={result.coverage.dc:.3f} safe={result.safe}", file=sys.stderr)
    if result.unsafe:
        print(f"unsafe output: FullSpeed inside the Stop Zone at t={result.unsafe[0]} us", file=sys.stderr)
        return EXIT_UNSAFE
    return EXIT_OK


def cmd_profile(args) -> int:
    suffix = "_constant" if args.constant else ""
    node_file = Path(args.node_config) if args.node_config else builtin_path(f"node_s{args.scenario}{suffix}.yaml")
    scenario_file = Path(args.scenario_file) if args.scenario_file else builtin_path(f"scenario{args.scenario}.yaml")
    predicate = load_rules(args.rules)
    script = load_scenario(scenario_file)
    config = load_node_config(node_file)
    seed = 0 if args.seed is None else args.seed
    stats = profile(script, config, args.cycles, seed, predicate)
    label = f"S{args.scenario}"
    _emit(format_report(report_rows(label, stats), args.format), args.out)
    t_stop = t_stop_stats(stats)
    check = check_budget(t_stop, predicate.t_stop_budget_us)
    print(
        f"t_stop budget {to_ms(check.budget):.2f} ms: {check.violations} violations, "
        f"wcet gap ratio {check.wcet_gap_ratio:.3f}",
        file=sys.stderr,
    )
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    # shared flags are accepted both before and after the subcommand
    def shared(p: argparse.ArgumentParser, top: bool) -> None:
        default = None if top else argparse.SUPPRESS
        p.add_argument("--seed", type=int, default=default, help="override the RNG seed")
        p.add_argument("--format", choices=("csv", "json", "table"), default="csv" if top else argparse.SUPPRESS)
        p.add_argument("--out", default=default, help="output file (compile/profile/faults) or directory (run)")

    parser = argparse.ArgumentParser(prog="dmrsafety", description="Dual-node safety-loop simulator")
    shared(parser, True)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("compile", help="compile a rule document to a safety predicate")
    p.add_argument("rule_file")
    shared(p, False)
    p.set_defaults(func=cmd_compile)

    for name, func, text in (
        ("run", cmd_run, "run a dual-node scenario and write all artifacts"),
        ("faults", cmd_faults, "run a fault campaign and print the detection/recovery table"),
    ):
        p = sub.add_parser(name, help=text)
        p.add_argument("config", nargs="?", default=DEFAULT_RUN, help=f"run config (default {DEFAULT_RUN})")
        p.add_argument("--duration-ms", type=float, default=None)
        if name == "faults":
            p.add_argument("--plan", help="fault plan overriding the config's")
        shared(p, False)
        p.set_defaults(func=func)

    p = sub.add_parser("profile", help="latency campaign for one node")
    p.add_argument("--scenario", type=int, choices=(1, 2, 3), default=1)
    p.add_argument("--constant", action="store_true", help="use the constant-latency node config")
    p.add_argument("--cycles", type=int, default=10_000)
    p.add_argument("--node-config", help="node config overriding the shipped one")
    p.add_argument("--scenario-file", help="scenario overriding the shipped one")
    p.add_argument("--rules", default=str(builtin_path("cobot.rules")))
    shared(p, False)
    p.set_defaults(func=cmd_profile)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except RuleParseError as exc:
        for diag in exc.diagnostics:
            print(f"rules:{diag}", file=sys.stderr)
        return EXIT_DIAGNOSTICS
    except SafetyDefinitionInconsistent as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_INCONSISTENT
    except (ConfigError, FaultPlanError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DIAGNOSTICS


if __name__ == "__main__":
    sys.exit(main())
