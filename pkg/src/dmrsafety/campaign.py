"""End-to-end dual-node runs: build, inject, measure and write artifacts."""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

from .config import RunConfig, load_fault_plan, load_node_config, load_rules, load_scenario
from .engine import ms, to_ms
from .faults import (
    CoverageReport,
    FaultInjection,
    FaultRecord,
    diagnostic_coverage,
    inject_all,
    measure,
    fault_table_csv,
    unsafe_instants,
)
from .perception import ScenarioScript, demand_instants
from .profiler import format_report, report_rows, stats_from_timings
from .redundancy import MergedOutput, RedundancyConfig
from .rules import SafetyPredicate
from .system import RunResult, build_pair

NODE_IDS = ("A", "B")


@dataclass
class CampaignResult:
    config: RunConfig
    predicate: SafetyPredicate
    script: ScenarioScript
    plan: list[FaultInjection]
    run: RunResult
    records: list[FaultRecord]
    coverage: CoverageReport
    unsafe: list[int]

    @property
    def safe(self) -> bool:
        return not self.unsafe


def execute(
    predicate: SafetyPredicate,
    script: ScenarioScript,
    node_configs,
    plan: Sequence[FaultInjection],
    duration_ms: float,
    seed: int,
    redundancy: Optional[RedundancyConfig] = None,
    single_fault: bool = True,
    node_ids: Sequence[str] = NODE_IDS,
    config: Optional[RunConfig] = None,
) -> CampaignResult:
    system = build_pair(predicate, script, list(node_configs), redundancy, seed, node_ids)
    inject_all(system, plan, single_fault)
    end = ms(duration_ms)
    result = system.run(end)
    # entries scheduled at or after the end never fire and are left out of the metrics
    records = [measure(result.trace, f) for f in plan if f.inject_at < end]
    demands = demand_instants(script, predicate.d_min, end)
    coverage = diagnostic_coverage(records, demands)
    unsafe = unsafe_instants(result.timeline, script, predicate.d_min, 0, end)
    return CampaignResult(config, predicate, script, list(plan), result, records, coverage, unsafe)


def run_config(cfg: RunConfig) -> CampaignResult:
    cfg.check_files()
    predicate = load_rules(cfg.rule_file)
    script = load_scenario(cfg.scenario_file)
    nodes = [load_node_config(p) for p in cfg.node_configs]
    plan = load_fault_plan(cfg.fault_plan) if cfg.fault_plan is not None else []
    redundancy = RedundancyConfig.from_dict(cfg.redundancy)
    return execute(predicate, script, nodes, plan, cfg.duration_ms, cfg.seed, redundancy,
                   cfg.single_fault, config=cfg)


def merged_csv(timeline: Sequence[MergedOutput]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["time_us", "command", "contributors"])
    for out in timeline:
        writer.writerow([out.decided_at, out.command.label, out.contributor_label or "-"])
    return buf.getvalue()


def latency_report(result: CampaignResult, fmt: str = "csv") -> str:
    rows = []
    for node_id, node in sorted(result.run.nodes.items()):
        if node.timings:
            rows.extend(report_rows(f"{result.script.name}/{node_id}", stats_from_timings(node.timings)))
    return format_report(rows, fmt)


def summary(result: CampaignResult, config_hash: str) -> dict:
    return {
        "config_hash": config_hash,
        "seed": result.config.seed if result.config else None,
        "scenario": result.script.name,
        "duration_ms": result.config.duration_ms if result.config else None,
        "safe_during_faults": result.safe,
        "unsafe_instants_us": result.unsafe,
        "dc": result.coverage.dc,
        "dc_target": float(result.predicate.dc_target),
        "demands": len(result.coverage.demand_instants),
        "faults": [
            {
                "target": r.injection.target,
                "kind": r.injection.kind.value,
                "inject_at_ms": to_ms(r.injection.inject_at),
                "mechanism": r.detected_by,
                "t_det_ms": None if r.t_det is None else to_ms(r.t_det),
                "t_rec_ms": None if r.t_rec is None else to_ms(r.t_rec),
            }
            for r in result.records
        ],
        "merged_changes": len(result.run.timeline),
        "predicate": result.predicate.to_json(),
    }


def write_outputs(result: CampaignResult, out_dir: Path, fmt: str = "csv") -> dict:
    """Write every run artifact into ``out_dir``; returns the summary dict."""
    out_dir.mkdir(parents=True, exist_ok=True)
    ext = "json" if fmt == "json" else "csv"

    def put(name: str, text: str) -> None:
        (out_dir / name).write_text(text, encoding="utf-8", newline="\n")

    put("merged.csv", merged_csv(result.run.timeline))
    if result.plan:
        put("faults.csv", fault_table_csv(result.records))
    put(f"latency.{ext}", latency_report(result, "json" if fmt == "json" else "csv"))
    result.run.trace.write(out_dir / "trace.log")
    info = summary(result, result.config.content_hash() if result.config else "")
    put("summary.json", json.dumps(info, indent=2, sort_keys=True) + "\n")
    return info
