"""Cross-monitoring and output arbitration for the redundant node pair.

The coordinator owns every node's health status. It polls heartbeat age and
ADC rail samples on fixed grids, accepts locally detected fault reports,
drives recovery, and merges the node command streams into one output by
taking the most conservative command of the healthy nodes.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Any, Callable, Iterable, Mapping, Optional

from .distributions import ConfigError
from .engine import Engine, VirtualTime, ms, to_ms
from .node import AdcSample, CommandMessage, ComputeNode, FaultReport, Heartbeat, SafetyCommand, next_grid


class FaultKind(Enum):
    HEARTBEAT_LOSS = "HeartbeatLoss"
    NPU_HANG = "NpuHang"
    POWER_BROWNOUT = "PowerBrownout"
    SENSOR_FAULT = "SensorFault"


MECHANISM = {
    FaultKind.HEARTBEAT_LOSS: "SW-Logic",
    FaultKind.NPU_HANG: "SW-Logic",
    FaultKind.POWER_BROWNOUT: "ADC-Probing",
    FaultKind.SENSOR_FAULT: "SW-Logic",
}

DEFAULT_RECOVERY: dict[FaultKind, VirtualTime] = {
    FaultKind.HEARTBEAT_LOSS: ms(39_627.63),
    FaultKind.NPU_HANG: ms(313.61),
    FaultKind.POWER_BROWNOUT: ms(39_546.52),
    FaultKind.SENSOR_FAULT: ms(1_236.17),
}


class Health(Enum):
    HEALTHY = "Healthy"
    FAULTED = "Faulted"
    RECOVERING = "Recovering"


class StatusTransitionError(RuntimeError):
    pass


@dataclass(frozen=True)
class NodeStatus:
    state: Health = Health.HEALTHY
    kind: Optional[FaultKind] = None
    until: Optional[VirtualTime] = None
    last_heartbeat_at: VirtualTime = 0
    last_voltage: Optional[float] = None

    @property
    def healthy(self) -> bool:
        return self.state is Health.HEALTHY

    def faulted(self, kind: FaultKind) -> "NodeStatus":
        if self.state is not Health.HEALTHY:
            raise StatusTransitionError(f"cannot fault a node in state {self.state.value}")
        return replace(self, state=Health.FAULTED, kind=kind, until=None)

    def recovered(self, now: VirtualTime) -> "NodeStatus":
        if self.state is not Health.RECOVERING:
            raise StatusTransitionError(f"cannot recover a node in state {self.state.value}")
        if self.until is not None and now < self.until:
            raise StatusTransitionError("recovery deadline not reached")
        return NodeStatus(last_heartbeat_at=now, last_voltage=self.last_voltage)

    def describe(self) -> str:
        if self.state is Health.HEALTHY:
            return "Healthy"
        if self.state is Health.FAULTED:
            return f"Faulted({self.kind.value})"
        return f"Recovering({self.until})"


def begin_recovery(
    status: NodeStatus,
    kind: FaultKind,
    now: VirtualTime,
    durations: Mapping[FaultKind, VirtualTime] = DEFAULT_RECOVERY,
) -> NodeStatus:
    """Move a Faulted node to ``Recovering(until=now + recovery_duration(kind))``."""
    if status.state is not Health.FAULTED:
        raise StatusTransitionError(f"begin_recovery needs a Faulted node, got {status.state.value}")
    if status.kind is not kind:
        raise StatusTransitionError(f"node is Faulted({status.kind.value}), not {kind.value}")
    return replace(status, state=Health.RECOVERING, until=now + durations[kind])


@dataclass(frozen=True)
class MergedOutput:
    command: SafetyCommand
    contributors: frozenset[str]
    decided_at: VirtualTime

    def same_output(self, other: Optional["MergedOutput"]) -> bool:
        return other is not None and self.command is other.command and self.contributors == other.contributors

    @property
    def contributor_label(self) -> str:
        return "+".join(sorted(self.contributors))


def merge(
    latest: Mapping[str, Optional[SafetyCommand]],
    statuses: Mapping[str, NodeStatus],
    decided_at: VirtualTime = 0,
) -> MergedOutput:
    """Most conservative command over healthy nodes; no contributor means EmergencyStop."""
    contributing = {
        node: cmd for node, cmd in latest.items()
        if cmd is not None and statuses[node].healthy
    }
    if not contributing:
        return MergedOutput(SafetyCommand.EMERGENCY_STOP, frozenset(), decided_at)
    return MergedOutput(max(contributing.values()), frozenset(contributing), decided_at)


class HeartbeatMonitor:
    def __init__(self, threshold: VirtualTime = ms(50), last_heartbeat_at: VirtualTime = 0):
        self.threshold = threshold
        self.last_heartbeat_at = last_heartbeat_at

    def beat(self, now: VirtualTime) -> None:
        self.last_heartbeat_at = now

    def check(self, now: VirtualTime) -> Optional[FaultKind]:
        if now - self.last_heartbeat_at > self.threshold:
            return FaultKind.HEARTBEAT_LOSS
        return None


def monitor_heartbeat(monitor: HeartbeatMonitor, now: VirtualTime) -> Optional[FaultKind]:
    return monitor.check(now)


class AdcMonitor:
    """Flags a brownout after ``k`` consecutive samples below ``fraction * nominal``."""

    def __init__(self, fraction: float = 0.9, k: int = 3):
        if not 0 < fraction <= 1:
            raise ConfigError("brownout fraction must be in (0, 1]")
        if k < 1:
            raise ConfigError("brownout streak length must be >= 1")
        self.fraction = fraction
        self.k = k
        self.streak = 0

    def reset(self) -> None:
        self.streak = 0

    def observe(self, sample: AdcSample, nominal: float) -> Optional[FaultKind]:
        if sample.voltage < self.fraction * nominal:
            self.streak += 1
        else:
            self.streak = 0
        return FaultKind.POWER_BROWNOUT if self.streak >= self.k else None


def monitor_adc(monitor: AdcMonitor, sample: AdcSample, nominal: float) -> Optional[FaultKind]:
    return monitor.observe(sample, nominal)


@dataclass
class RedundancyConfig:
    heartbeat_threshold: VirtualTime = ms(50)
    heartbeat_check_period: VirtualTime = ms(10)
    adc_poll_period: VirtualTime = ms(12)
    brownout_fraction: float = 0.9
    brownout_samples: int = 3
    link_latency: VirtualTime = ms(0.5)
    recovery: dict[FaultKind, VirtualTime] = field(default_factory=lambda: dict(DEFAULT_RECOVERY))

    def __post_init__(self):
        for name in ("heartbeat_threshold", "heartbeat_check_period", "adc_poll_period"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be > 0")
        if self.link_latency < 0:
            raise ConfigError("link_latency must be >= 0")
        if any(v < 0 for v in self.recovery.values()):
            raise ConfigError("recovery durations must be >= 0")

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "RedundancyConfig":
        keys = {
            "heartbeat_threshold_ms": "heartbeat_threshold",
            "heartbeat_check_period_ms": "heartbeat_check_period",
            "adc_poll_period_ms": "adc_poll_period",
            "link_latency_ms": "link_latency",
        }
        unknown = set(data) - set(keys) - {"brownout_fraction", "brownout_samples", "recovery_ms"}
        if unknown:
            raise ConfigError(f"unknown redundancy config keys: {sorted(unknown)}")
        kwargs: dict[str, Any] = {attr: ms(float(data[k])) for k, attr in keys.items() if k in data}
        if "brownout_fraction" in data:
            kwargs["brownout_fraction"] = float(data["brownout_fraction"])
        if "brownout_samples" in data:
            kwargs["brownout_samples"] = int(data["brownout_samples"])
        recovery = dict(DEFAULT_RECOVERY)
        for name, value in (data.get("recovery_ms") or {}).items():
            try:
                recovery[FaultKind(name)] = ms(float(value))
            except ValueError:
                raise ConfigError(f"unknown fault kind {name!r} in recovery_ms") from None
        kwargs["recovery"] = recovery
        return cls(**kwargs)

    def to_dict(self) -> dict[str, Any]:
        return {
            "heartbeat_threshold_ms": to_ms(self.heartbeat_threshold),
            "heartbeat_check_period_ms": to_ms(self.heartbeat_check_period),
            "adc_poll_period_ms": to_ms(self.adc_poll_period),
            "brownout_fraction": self.brownout_fraction,
            "brownout_samples": self.brownout_samples,
            "link_latency_ms": to_ms(self.link_latency),
            "recovery_ms": {k.value: to_ms(v) for k, v in self.recovery.items()},
        }


class Coordinator:
    """Status owner and output merger for a set of nodes.

    The same monitor logic is instantiated once per watched node, so the
    arrangement is symmetric: either node's supervision of its peer is the
    same code path. The merged output stays at EmergencyStop until every
    configured node has delivered a first command (start-up interlock).
    """

    name = "coordinator"

    def __init__(
        self,
        engine: Engine,
        nodes: Mapping[str, ComputeNode],
        config: Optional[RedundancyConfig] = None,
        on_output: Optional[Callable[[MergedOutput], None]] = None,
    ):
        self.engine = engine
        self.nodes = dict(nodes)
        self.config = config or RedundancyConfig()
        self.statuses: dict[str, NodeStatus] = {n: NodeStatus() for n in self.nodes}
        self.latest: dict[str, Optional[SafetyCommand]] = {n: None for n in self.nodes}
        self.hb_monitors = {n: HeartbeatMonitor(self.config.heartbeat_threshold) for n in self.nodes}
        self.adc_monitors = {
            n: AdcMonitor(self.config.brownout_fraction, self.config.brownout_samples) for n in self.nodes
        }
        self._fresh_adc: dict[str, Optional[AdcSample]] = {n: None for n in self.nodes}
        self._seen_first = set()
        self.armed = False
        self.output: Optional[MergedOutput] = None
        self.timeline: list[MergedOutput] = []
        self.on_output = on_output
        self.transitions: list[tuple[VirtualTime, str, str]] = []

        for suffix in ("hb-poll", "adc-poll", "recover"):
            engine.register(f"{self.name}/{suffix}", getattr(self, "_on_" + suffix.replace("-", "_")))

    def start(self) -> None:
        now = self.engine.now
        self.engine.schedule(next_grid(now, self.config.heartbeat_check_period), f"{self.name}/hb-poll")
        self.engine.schedule(next_grid(now, self.config.adc_poll_period), f"{self.name}/adc-poll")
        self._publish()

    # inbound traffic

    def receive_heartbeat(self, hb: Heartbeat) -> str:
        if self.statuses[hb.node_id].healthy:
            self.hb_monitors[hb.node_id].beat(self.engine.now)
            self.statuses[hb.node_id] = replace(self.statuses[hb.node_id], last_heartbeat_at=self.engine.now)
        return f"hb node={hb.node_id} seq={hb.seq}"

    def receive_adc(self, sample: AdcSample) -> str:
        if self.statuses[sample.node_id].healthy:
            self._fresh_adc[sample.node_id] = sample
        return f"adc node={sample.node_id} v={sample.voltage:.3f}"

    def receive_command(self, msg: CommandMessage) -> str:
        if not self.statuses[msg.node_id].healthy:
            return f"cmd node={msg.node_id} ignored"
        self.latest[msg.node_id] = msg.command
        self._seen_first.add(msg.node_id)
        self._publish()
        return f"cmd node={msg.node_id} {msg.command.label}"

    def receive_report(self, report: FaultReport) -> str:
        if self.statuses[report.node_id].healthy:
            self._fault(report.node_id, FaultKind(report.kind), report.detected_at, log=False)
        return f"report node={report.node_id} kind={report.kind}"

    # polls

    def _on_hb_poll(self, _payload) -> str:
        now = self.engine.now
        self.engine.schedule(now + self.config.heartbeat_check_period, f"{self.name}/hb-poll")
        hits = []
        for node_id, monitor in self.hb_monitors.items():
            if self.statuses[node_id].healthy and monitor_heartbeat(monitor, now) is not None:
                hits.append(node_id)
                self._fault(node_id, FaultKind.HEARTBEAT_LOSS, now)
        return "hb-poll" + (" lost=" + ",".join(hits) if hits else "")

    def _on_adc_poll(self, _payload) -> str:
        now = self.engine.now
        self.engine.schedule(now + self.config.adc_poll_period, f"{self.name}/adc-poll")
        hits = []
        for node_id, monitor in self.adc_monitors.items():
            sample = self._fresh_adc[node_id]
            if sample is None or not self.statuses[node_id].healthy:
                continue
            self._fresh_adc[node_id] = None
            self.statuses[node_id] = replace(self.statuses[node_id], last_voltage=sample.voltage)
            nominal = self.nodes[node_id].config.nominal_voltage
            if monitor_adc(monitor, sample, nominal) is not None:
                hits.append(node_id)
                self._fault(node_id, FaultKind.POWER_BROWNOUT, now)
        return "adc-poll" + (" brownout=" + ",".join(hits) if hits else "")

    # status machine

    def _set_status(self, node_id: str, status: NodeStatus) -> None:
        self.statuses[node_id] = status
        self.transitions.append((self.engine.now, node_id, status.describe()))

    def _fault(self, node_id: str, kind: FaultKind, detected_at: VirtualTime, log: bool = True) -> None:
        if log:
            self.engine.log(self.name, f"DETECT node={node_id} kind={kind.value} mechanism={MECHANISM[kind]}")
        self._set_status(node_id, self.statuses[node_id].faulted(kind))
        self.latest[node_id] = None
        self._fresh_adc[node_id] = None
        self.nodes[node_id].halt()
        status = begin_recovery(self.statuses[node_id], kind, detected_at, self.config.recovery)
        self._set_status(node_id, status)
        self.engine.log(self.name, f"RECOVERING node={node_id} kind={kind.value} until={status.until}")
        self.engine.schedule(max(status.until, self.engine.now), f"{self.name}/recover", node_id)
        self._publish()

    def _on_recover(self, node_id: str) -> str:
        now = self.engine.now
        kind = self.statuses[node_id].kind
        self._set_status(node_id, self.statuses[node_id].recovered(now))
        self.hb_monitors[node_id].beat(now)
        self.adc_monitors[node_id].reset()
        node = self.nodes[node_id]
        node.clear_faults()
        node.start(now)
        self.engine.log(self.name, f"RECOVERED node={node_id} kind={kind.value}")
        self._publish()
        return f"recover node={node_id}"

    # output

    def _publish(self) -> None:
        now = self.engine.now
        if not self.armed and self._seen_first >= set(self.nodes):
            self.armed = True
        if self.armed:
            out = merge(self.latest, self.statuses, now)
        else:
            out = MergedOutput(SafetyCommand.EMERGENCY_STOP, frozenset(), now)
        if out.same_output(self.output):
            return
        self.output = out
        self.timeline.append(out)
        if self.on_output is not None:
            self.on_output(out)


def command_at(timeline: Iterable[MergedOutput], t: VirtualTime) -> SafetyCommand:
    """Merged command in force at instant ``t`` (EmergencyStop before the first entry)."""
    current = SafetyCommand.EMERGENCY_STOP
    for out in timeline:
        if out.decided_at > t:
            break
        current = out.command
    return current
