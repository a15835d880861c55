"""Latency campaigns and Table-1-style reports.

WCET here is the observed maximum over a campaign (measurement-based), not a
static bound. Standard deviations use the population formula (divisor n).
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

from .engine import Engine, VirtualTime, to_ms
from .node import ComputeNode, NodeConfig, PipelineTiming
from .perception import ScenarioScript
from .rules import SafetyPredicate

COMPONENTS = ("t_perc", "t_infer", "t_post", "t_stop")


@dataclass(frozen=True)
class LatencyStats:
    component: str
    average: float  # microseconds
    wcet: VirtualTime
    std_dev: float
    n: int
    samples: tuple[VirtualTime, ...] = field(default=(), repr=False, compare=False)

    @classmethod
    def from_samples(cls, component: str, samples: Sequence[VirtualTime]) -> "LatencyStats":
        n = len(samples)
        if n == 0:
            raise ValueError("no samples")
        total = sum(samples)
        mean = total / n
        # integer sum of squares keeps the variance exact before the final division
        var = max(0.0, (n * sum(s * s for s in samples) - total * total) / (n * n))
        return cls(component, mean, max(samples), math.sqrt(var), n, tuple(samples))


@dataclass(frozen=True)
class BudgetCheck:
    budget: VirtualTime
    violations: int
    wcet_gap_ratio: float


def check_budget(stats: LatencyStats, budget: VirtualTime) -> BudgetCheck:
    """Count cycles strictly above ``budget``; needs the per-cycle samples."""
    violations = sum(1 for s in stats.samples if s > budget)
    gap = (stats.wcet - stats.average) / stats.average if stats.average > 0 else 0.0
    return BudgetCheck(budget, violations, gap)


def stats_from_timings(timings: Iterable[PipelineTiming]) -> list[LatencyStats]:
    timings = list(timings)
    columns = {
        "t_perc": [t.t_perc for t in timings],
        "t_infer": [t.t_infer for t in timings],
        "t_post": [t.t_post for t in timings],
        "t_stop": [t.t_stop for t in timings],
    }
    return [LatencyStats.from_samples(c, columns[c]) for c in COMPONENTS]


def profile(
    script: ScenarioScript,
    config: NodeConfig,
    cycles: int,
    seed: int,
    predicate: SafetyPredicate,
    node_id: str = "A",
) -> list[LatencyStats]:
    """Run one node until exactly ``cycles`` loop iterations have completed."""
    if cycles < 1:
        raise ValueError("cycles must be >= 1")
    engine = Engine(seed=seed, record_dispatches=False)
    node = ComputeNode(node_id, engine, predicate, script, config)

    def on_command(_msg) -> None:
        if node.cycles >= cycles:
            engine.stop()

    node.send_command = on_command
    node.start(0)
    while node.cycles < cycles:
        before = node.cycles
        # campaigns may outlive the script; stage latencies do not depend on the human's position
        engine.run_until(engine.now + 3_600_000_000)
        if node.cycles == before:
            raise RuntimeError("node made no progress; check the scenario and node configuration")
    return stats_from_timings(node.timings[:cycles])


def report_rows(scenario: str, stats: Sequence[LatencyStats]) -> list[dict]:
    return [
        {
            "scenario": scenario,
            "component": s.component,
            "average_ms": round(to_ms(s.average), 6),
            "wcet_ms": to_ms(s.wcet),
            "std_dev_ms": round(to_ms(s.std_dev), 6),
            "n": s.n,
        }
        for s in stats
    ]


def format_report(rows: Sequence[dict], fmt: str = "csv") -> str:
    cols = ["scenario", "component", "average_ms", "wcet_ms", "std_dev_ms", "n"]
    if fmt == "json":
        return json.dumps(list(rows), indent=2) + "\n"
    if fmt == "csv":
        buf = io.StringIO()
        writer = csv.DictWriter(buf, fieldnames=cols, lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow({
                **row,
                "average_ms": f"{row['average_ms']:.3f}",
                "wcet_ms": f"{row['wcet_ms']:.3f}",
                "std_dev_ms": f"{row['std_dev_ms']:.3f}",
            })
        return buf.getvalue()
    if fmt == "table":
        lines = [f"{'Scenario':<10} {'Component':<9} {'Average':>9} {'WCET':>9} {'Std. Dev.':>9} {'n':>7}"]
        for row in rows:
            lines.append(
                f"{row['scenario']:<10} {row['component']:<9} {row['average_ms']:>9.2f}"
                f" {row['wcet_ms']:>9.2f} {row['std_dev_ms']:>9.2f} {row['n']:>7}"
            )
        return "\n".join(lines) + "\n"
    raise ValueError(f"unknown format {fmt!r}")


def t_stop_stats(stats: Sequence[LatencyStats]) -> Optional[LatencyStats]:
    return next((s for s in stats if s.component == "t_stop"), None)
