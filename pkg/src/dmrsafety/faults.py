"""Fault injection, detection/recovery measurement and diagnostic coverage."""

from __future__ import annotations

import csv
import io
import math
import re
from dataclasses import dataclass, field
from typing import Any, Iterable, Mapping, Optional, Sequence

from .distributions import ConfigError
from .engine import EventHandle, SimulationTrace, VirtualTime, ms, to_ms
from .node import ActiveFault, NodeConfig, SafetyCommand
from .perception import ScenarioScript, stop_zone_intervals
from .redundancy import MECHANISM, FaultKind, MergedOutput, RedundancyConfig

DEFAULT_BROWNOUT_DEPTH = 0.2


class FaultPlanError(ValueError):
    pass


@dataclass(frozen=True)
class FaultInjection:
    """One scripted fault. ``params`` may carry ``duration_ms`` (transient
    faults; omitted means persistent until reboot) and ``depth`` (brownout sag
    as a fraction of nominal voltage)."""

    target: str
    kind: FaultKind
    inject_at: VirtualTime
    params: Mapping[str, Any] = field(default_factory=dict)

    @property
    def duration(self) -> Optional[VirtualTime]:
        value = self.params.get("duration_ms")
        return None if value is None else ms(float(value))

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "FaultInjection":
        try:
            kind = FaultKind(data["kind"])
        except KeyError as exc:
            raise ConfigError(f"fault entry missing {exc.args[0]!r}") from None
        except ValueError:
            raise ConfigError(f"unknown fault kind {data['kind']!r}") from None
        try:
            return cls(str(data["target"]), kind, ms(float(data["inject_at_ms"])), dict(data.get("params") or {}))
        except KeyError as exc:
            raise ConfigError(f"fault entry missing {exc.args[0]!r}") from None

    def to_dict(self) -> dict[str, Any]:
        return {"target": self.target, "kind": self.kind.value, "inject_at_ms": to_ms(self.inject_at), "params": dict(self.params)}


def load_plan(data: Any) -> list[FaultInjection]:
    entries = data.get("faults", []) if isinstance(data, Mapping) else data
    if not isinstance(entries, list):
        raise ConfigError("fault plan must be a list of fault entries")
    return [FaultInjection.from_dict(e) for e in entries]


def detection_window(
    kind: FaultKind,
    node: Optional[NodeConfig] = None,
    red: Optional[RedundancyConfig] = None,
) -> tuple[VirtualTime, VirtualTime]:
    """Half-open window (lo, hi] in which T_det must fall for the given fault.

    Derived from the monitor grids: a check fires at the first grid instant
    after the threshold has been exceeded, and the ADC sample seen at a poll
    is the one taken one poll period earlier.
    """
    node = node or NodeConfig()
    red = red or RedundancyConfig()
    if kind is FaultKind.HEARTBEAT_LOSS:
        return red.heartbeat_threshold, red.heartbeat_threshold + red.heartbeat_check_period
    if kind is FaultKind.SENSOR_FAULT:
        return node.sensor_staleness, node.sensor_staleness + node.sensor_check_period
    if kind is FaultKind.NPU_HANG:
        return node.watchdog_period, 2 * node.watchdog_period
    k, p = red.brownout_samples, red.adc_poll_period
    return k * p, (k + 1) * p


def worst_case_window(kind: FaultKind, node: Optional[NodeConfig] = None, red: Optional[RedundancyConfig] = None) -> VirtualTime:
    red = red or RedundancyConfig()
    return detection_window(kind, node, red)[1] + red.recovery[kind]


def validate_plan(
    plan: Sequence[FaultInjection],
    node_ids: Iterable[str],
    single_fault: bool = True,
    node: Optional[NodeConfig] = None,
    red: Optional[RedundancyConfig] = None,
) -> None:
    """Reject unknown targets and, in single-fault mode, overlapping fault windows."""
    ids = set(node_ids)
    for f in plan:
        if f.target not in ids:
            raise FaultPlanError(f"fault target {f.target!r} is not a configured node")
        if f.inject_at < 0:
            raise FaultPlanError("inject_at must be >= 0")
        depth = f.params.get("depth")
        if depth is not None and not 0 <= float(depth) <= 1:
            raise FaultPlanError("brownout depth must be in [0, 1]")
    if not single_fault:
        return
    ordered = sorted(plan, key=lambda f: f.inject_at)
    for a, b in zip(ordered, ordered[1:]):
        busy_until = a.inject_at + worst_case_window(a.kind, node, red)
        if a.duration is not None:
            busy_until = min(busy_until, a.inject_at + a.duration)
        if b.inject_at <= busy_until:
            raise FaultPlanError(
                f"{b.kind.value} at {to_ms(b.inject_at)} ms overlaps {a.kind.value} injected at "
                f"{to_ms(a.inject_at)} ms (single-fault mode)"
            )


def inject(system, plan: FaultInjection, single_fault: bool = True) -> EventHandle:
    """Schedule ``plan`` on the system's timeline and return the event handle."""
    engine = system.engine
    handler = f"fault/{plan.target}/{plan.kind.value}@{plan.inject_at}"

    def fire(_payload) -> str:
        node = system.nodes[plan.target]
        status = system.coordinator.statuses[plan.target]
        if not status.healthy or not node.up:
            if single_fault:
                raise FaultPlanError(f"target {plan.target} is not Healthy at {plan.inject_at}")
            engine.log("harness", f"INJECT-SKIPPED node={plan.target} kind={plan.kind.value}")
            return "skipped"
        end = math.inf if plan.duration is None else plan.inject_at + plan.duration
        depth = float(plan.params.get("depth", DEFAULT_BROWNOUT_DEPTH))
        node.faults[plan.kind.value] = ActiveFault(plan.kind.value, plan.inject_at, end, depth)
        engine.log("harness", f"INJECT node={plan.target} kind={plan.kind.value}")
        return f"inject node={plan.target} kind={plan.kind.value}"

    engine.register(handler, fire)
    return engine.schedule(plan.inject_at, handler)


def inject_all(system, plan: Sequence[FaultInjection], single_fault: bool = True) -> list[EventHandle]:
    node_cfg = next(iter(system.nodes.values())).config if system.nodes else None
    validate_plan(plan, system.nodes, single_fault, node_cfg, system.redundancy)
    return [inject(system, f, single_fault) for f in plan]


@dataclass(frozen=True)
class FaultRecord:
    injection: FaultInjection
    detected_at: Optional[VirtualTime] = None
    detected_by: Optional[str] = None
    recovered_at: Optional[VirtualTime] = None

    def __post_init__(self):
        if self.detected_at is not None and self.detected_at < self.injection.inject_at:
            raise ValueError("detection precedes injection")
        if self.recovered_at is not None and (self.detected_at is None or self.recovered_at < self.detected_at):
            raise ValueError("recovery precedes detection")

    @property
    def detected(self) -> bool:
        return self.detected_at is not None

    @property
    def t_det(self) -> Optional[VirtualTime]:
        return None if self.detected_at is None else self.detected_at - self.injection.inject_at

    @property
    def t_rec(self) -> Optional[VirtualTime]:
        if self.recovered_at is None or self.detected_at is None:
            return None
        return self.recovered_at - self.detected_at


_KV = re.compile(r"(\w+)=(\S+)")


def _fields(summary: str) -> dict[str, str]:
    return dict(_KV.findall(summary))


def measure(trace: SimulationTrace, plan: FaultInjection) -> FaultRecord:
    """Extract the detection and recovery of ``plan`` from a finished run's trace."""
    detected_at = detected_by = recovered_at = None
    for entry in trace:
        if entry.time < plan.inject_at:
            continue
        if detected_at is None and entry.summary.startswith("DETECT "):
            f = _fields(entry.summary)
            if f.get("node") == plan.target and f.get("kind") == plan.kind.value:
                detected_at, detected_by = entry.time, f.get("mechanism")
        elif detected_at is not None and entry.summary.startswith("RECOVERED "):
            f = _fields(entry.summary)
            if f.get("node") == plan.target:
                recovered_at = entry.time
                break
    return FaultRecord(plan, detected_at, detected_by, recovered_at)


@dataclass(frozen=True)
class CoverageReport:
    injected: int
    detected_before_demand: int
    demand_instants: tuple[VirtualTime, ...]

    @property
    def dc(self) -> float:
        return self.detected_before_demand / self.injected if self.injected else 1.0


def diagnostic_coverage(records: Sequence[FaultRecord], demands: Sequence[VirtualTime]) -> CoverageReport:
    """Fraction of faults detected no later than the first demand after injection.

    A fault with no later demand counts as covered if it was detected at all.
    """
    demands = list(demands)
    if demands != sorted(demands):
        raise ValueError("demand instants must be sorted")
    covered = 0
    for rec in records:
        if rec.detected_at is None:
            continue
        nxt = next((d for d in demands if d > rec.injection.inject_at), None)
        if nxt is None or rec.detected_at <= nxt:
            covered += 1
    return CoverageReport(len(records), covered, tuple(demands))


def fault_table_csv(records: Sequence[FaultRecord]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["fault", "mechanism", "t_det_ms", "t_rec_ms"])
    for rec in records:
        mech = rec.detected_by or MECHANISM[rec.injection.kind]
        writer.writerow([
            rec.injection.kind.value,
            mech,
            "" if rec.t_det is None else f"{to_ms(rec.t_det):.3f}",
            "" if rec.t_rec is None else f"{to_ms(rec.t_rec):.3f}",
        ])
    return buf.getvalue()


# output verification

def _segments(timeline: Sequence[MergedOutput], start: VirtualTime, end: VirtualTime):
    """Yield (t0, t1, command) pieces of the step function restricted to [start, end]."""
    current = SafetyCommand.EMERGENCY_STOP
    t_prev = start
    for out in timeline:
        if out.decided_at <= start:
            current = out.command
            continue
        if out.decided_at > end:
            break
        if out.decided_at > t_prev:
            yield t_prev, out.decided_at, current
            t_prev = out.decided_at
        current = out.command
    if end >= t_prev:
        yield t_prev, end, current


def unsafe_instants(
    timeline: Sequence[MergedOutput],
    script: ScenarioScript,
    d_min,
    start: VirtualTime = 0,
    end: Optional[VirtualTime] = None,
) -> list[VirtualTime]:
    """First unsafe microsecond of every FullSpeed stretch overlapping the Stop Zone."""
    stop = end if end is not None else (script.duration or 0)
    zone = stop_zone_intervals(script, d_min, stop)
    bad = []
    for t0, t1, cmd in _segments(timeline, start, stop):
        if cmd is not SafetyCommand.FULL_SPEED:
            continue
        # a piece covers [t0, t1); the next piece starts exactly at t1
        hit = next((max(a, t0) for a, b in zone if a < t1 and b >= t0), None)
        if hit is not None:
            bad.append(hit)
    return bad


def first_less_conservative(
    timeline: Sequence[MergedOutput],
    reference: Sequence[MergedOutput],
    start: VirtualTime,
    end: VirtualTime,
) -> Optional[VirtualTime]:
    """First instant where ``timeline`` commands less than ``reference``, or None."""
    points = sorted({start} | {o.decided_at for o in timeline if start <= o.decided_at <= end}
                    | {o.decided_at for o in reference if start <= o.decided_at <= end})
    i = j = 0
    cur_a = cur_b = SafetyCommand.EMERGENCY_STOP
    for t in points:
        while i < len(timeline) and timeline[i].decided_at <= t:
            cur_a = timeline[i].command
            i += 1
        while j < len(reference) and reference[j].decided_at <= t:
            cur_b = reference[j].command
            j += 1
        if cur_a < cur_b:
            return t
    return None
