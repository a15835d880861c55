"""One compute node of the redundant pair.

A node runs four time-triggered processes on the shared timeline, each on a
grid of its own period: frame capture, heartbeat transmission, ADC
self-sampling, and the two local watchdogs (inference progress and sensor
staleness). The safety loop itself is free-running: a new cycle starts as
soon as the previous one has emitted its command.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import IntEnum
from typing import Any, Callable, Mapping, Optional

from .distributions import ConfigError, Constant, LatencyDistribution, distribution_from_config, distribution_to_config, sample
from .engine import Engine, EventHandle, VirtualTime, ms, to_ms
from .perception import Calibration, DetectionFrame, ScenarioScript, Zone, classify_zone, next_frame, project_distance
from .rules import SafetyPredicate


class SafetyCommand(IntEnum):
    """Output lattice ordered by conservativeness."""

    FULL_SPEED = 0
    REDUCED_SPEED = 1
    CATEGORY1_STOP = 2
    EMERGENCY_STOP = 3

    @property
    def label(self) -> str:
        return _LABELS[self]

    @classmethod
    def from_label(cls, label: str) -> "SafetyCommand":
        for cmd, text in _LABELS.items():
            if text == label:
                return cmd
        raise ValueError(f"unknown command {label!r}")


_LABELS = {
    SafetyCommand.FULL_SPEED: "FullSpeed",
    SafetyCommand.REDUCED_SPEED: "ReducedSpeed",
    SafetyCommand.CATEGORY1_STOP: "Category1Stop",
    SafetyCommand.EMERGENCY_STOP: "EmergencyStop",
}


class FreshFrameSlot:
    """Depth-one last-in slot: a push overwrites, a pop empties."""

    def __init__(self) -> None:
        self._frame: Optional[Any] = None
        self.dropped_count = 0
        self.produced = 0
        self.consumed = 0

    def push(self, frame: Any) -> None:
        if self._frame is not None:
            self.dropped_count += 1
        self._frame = frame
        self.produced += 1

    def pop(self) -> Optional[Any]:
        frame, self._frame = self._frame, None
        if frame is not None:
            self.consumed += 1
        return frame

    def clear(self) -> None:
        if self._frame is not None:
            self.dropped_count += 1
        self._frame = None

    @property
    def occupied(self) -> bool:
        return self._frame is not None


@dataclass(frozen=True)
class PipelineTiming:
    t_perc: VirtualTime
    t_infer: VirtualTime
    t_post: VirtualTime

    def __post_init__(self):
        if min(self.t_perc, self.t_infer, self.t_post) < 0:
            raise ValueError("stage latencies must be >= 0")

    @property
    def t_stop(self) -> VirtualTime:
        return self.t_perc + self.t_infer + self.t_post


@dataclass(frozen=True)
class Heartbeat:
    node_id: str
    seq: int
    sent_at: VirtualTime


@dataclass(frozen=True)
class AdcSample:
    node_id: str
    voltage: float
    sampled_at: VirtualTime


@dataclass(frozen=True)
class CommandMessage:
    node_id: str
    command: SafetyCommand
    issued_at: VirtualTime


@dataclass(frozen=True)
class FaultReport:
    node_id: str
    kind: str
    detected_at: VirtualTime


def zone_to_command(zone: Zone) -> SafetyCommand:
    return {
        Zone.STOP: SafetyCommand.CATEGORY1_STOP,
        Zone.WARNING: SafetyCommand.REDUCED_SPEED,
        Zone.SAFE: SafetyCommand.FULL_SPEED,
    }[zone]


def guard(adc_stable: bool, t_exec: VirtualTime, limit: VirtualTime) -> bool:
    if limit <= 0:
        raise ValueError("T_limit must be > 0")
    return adc_stable and t_exec < limit


@dataclass
class NodeConfig:
    """Per-node timing and latency model; periods and thresholds in microseconds."""

    t_perc: LatencyDistribution = field(default_factory=lambda: Constant(7.50))
    t_infer: LatencyDistribution = field(default_factory=lambda: Constant(25.05))
    t_post: LatencyDistribution = field(default_factory=lambda: Constant(2.41))
    heartbeat_period: VirtualTime = ms(10)
    adc_period: VirtualTime = ms(12)
    watchdog_period: VirtualTime = ms(2)
    sensor_check_period: VirtualTime = ms(15)
    sensor_staleness: VirtualTime = ms(2000)
    t_limit: Optional[VirtualTime] = None
    nominal_voltage: float = 5.0
    brownout_fraction: float = 0.9
    detection_hold: VirtualTime = ms(100)

    def __post_init__(self):
        for name in ("heartbeat_period", "adc_period", "watchdog_period", "sensor_check_period", "sensor_staleness"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be > 0")
        if self.t_limit is not None and self.t_limit <= 0:
            raise ConfigError("t_limit must be > 0")
        if self.nominal_voltage <= 0:
            raise ConfigError("nominal_voltage must be > 0")
        if not 0 < self.brownout_fraction <= 1:
            raise ConfigError("brownout_fraction must be in (0, 1]")
        if self.detection_hold < 0:
            raise ConfigError("detection_hold must be >= 0")

    _MS_FIELDS = {
        "heartbeat_period_ms": "heartbeat_period",
        "adc_period_ms": "adc_period",
        "watchdog_period_ms": "watchdog_period",
        "sensor_check_period_ms": "sensor_check_period",
        "sensor_staleness_ms": "sensor_staleness",
        "t_limit_ms": "t_limit",
        "detection_hold_ms": "detection_hold",
    }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "NodeConfig":
        kwargs: dict[str, Any] = {}
        known = set(cls._MS_FIELDS) | {"latency", "nominal_voltage", "brownout_fraction", "name"}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown node config keys: {sorted(unknown)}")
        for key, attr in cls._MS_FIELDS.items():
            if data.get(key) is not None:
                kwargs[attr] = ms(float(data[key]))
        for key in ("nominal_voltage", "brownout_fraction"):
            if key in data:
                kwargs[key] = float(data[key])
        latency = data.get("latency", {})
        for stage in ("t_perc", "t_infer", "t_post"):
            if stage in latency:
                kwargs[stage] = distribution_from_config(latency[stage])
        return cls(**kwargs)

    def to_dict(self) -> dict[str, Any]:
        out: dict[str, Any] = {}
        for key, attr in self._MS_FIELDS.items():
            value = getattr(self, attr)
            if value is not None:
                out[key] = to_ms(value)
        out["nominal_voltage"] = self.nominal_voltage
        out["brownout_fraction"] = self.brownout_fraction
        out["latency"] = {s: distribution_to_config(getattr(self, s)) for s in ("t_perc", "t_infer", "t_post")}
        return out


@dataclass
class ActiveFault:
    """Injected fault effect on a node, active on the open interval (start, end)."""

    kind: str
    start: VirtualTime
    end: float = math.inf
    depth: float = 0.2

    def active(self, now: VirtualTime) -> bool:
        return self.start < now < self.end


def next_grid(now: VirtualTime, period: VirtualTime) -> VirtualTime:
    return -(-now // period) * period


Sender = Optional[Callable[[Any], Any]]


class ComputeNode:
    """Simulated compute node running the guarded safety loop."""

    def __init__(
        self,
        node_id: str,
        engine: Engine,
        predicate: SafetyPredicate,
        script: ScenarioScript,
        config: Optional[NodeConfig] = None,
        *,
        send_command: Sender = None,
        send_heartbeat: Sender = None,
        send_adc: Sender = None,
        send_report: Sender = None,
        calibration: Optional[Calibration] = None,
        keep_history: bool = True,
    ):
        self.node_id = node_id
        self.engine = engine
        self.predicate = predicate
        self.script = script
        self.config = config or NodeConfig()
        self.calibration = calibration or script.calibration
        self.t_limit = self.config.t_limit or predicate.t_stop_budget_us
        self.send_command = send_command
        self.send_heartbeat = send_heartbeat
        self.send_adc = send_adc
        self.send_report = send_report
        self.keep_history = keep_history

        self.slot = FreshFrameSlot()
        self.timings: list[PipelineTiming] = []
        self.commands: list[tuple[VirtualTime, SafetyCommand]] = []
        self.heartbeats_sent: list[VirtualTime] = []
        self.cycles = 0
        self.faults: dict[str, ActiveFault] = {}
        self.up = False

        self._perception_rng = engine.rng(f"node-{node_id}/perception")
        self._stage_rng = {s: engine.rng(f"node-{node_id}/{s}") for s in ("t_perc", "t_infer", "t_post")}
        self._hb_seq = 0
        self._frames = 0
        self._handles: list[EventHandle] = []
        self._cycle: Optional[tuple[DetectionFrame, PipelineTiming, VirtualTime]] = None
        self._waiting = False
        self._last_human: Optional[tuple[VirtualTime, float]] = None

        self.name = f"node-{node_id}"
        for proc in ("capture", "cycle", "heartbeat", "adc", "watchdog", "sensor-check"):
            engine.register(f"{self.name}/{proc}", getattr(self, "_on_" + proc.replace("-", "_")))

    # fault effects

    def fault_active(self, kind: str, now: VirtualTime) -> bool:
        fault = self.faults.get(kind)
        return fault is not None and fault.active(now)

    def voltage(self, now: VirtualTime) -> float:
        fault = self.faults.get("PowerBrownout")
        if fault is not None and fault.active(now):
            return self.config.nominal_voltage * (1.0 - fault.depth)
        return self.config.nominal_voltage

    def adc_stable(self, now: VirtualTime) -> bool:
        return self.voltage(now) >= self.config.brownout_fraction * self.config.nominal_voltage

    def npu_progressed(self, window_start: VirtualTime) -> bool:
        """Whether the NPU was alive at some instant of the window ending now."""
        fault = self.faults.get("NpuHang")
        return fault is None or fault.start >= window_start

    def sensor_staleness(self, now: VirtualTime) -> VirtualTime:
        fault = self.faults.get("SensorFault")
        if fault is None or not fault.active(now):
            return 0
        return now - fault.start

    # lifecycle

    def start(self, now: Optional[VirtualTime] = None) -> None:
        if self.up:
            return
        now = self.engine.now if now is None else now
        self.up = True
        self._waiting = True
        self._cycle = None
        self._last_human = None
        cfg = self.config
        self._arm("capture", next_grid(now, self.script.frame_period))
        self._arm("heartbeat", next_grid(now, cfg.heartbeat_period))
        self._arm("adc", next_grid(now, cfg.adc_period))
        self._arm("watchdog", next_grid(now, cfg.watchdog_period))
        self._arm("sensor-check", next_grid(now, cfg.sensor_check_period))

    def halt(self) -> None:
        """Power the node down: every process stops and pending work is lost."""
        self.up = False
        for handle in self._handles:
            handle.cancel()
        self._handles.clear()
        self._cycle = None
        self._waiting = False
        self.slot.clear()

    def clear_faults(self) -> None:
        self.faults.clear()

    def _arm(self, proc: str, at: VirtualTime, payload: Any = None) -> None:
        self._handles = [h for h in self._handles if h.pending]
        self._handles.append(self.engine.schedule(at, f"{self.name}/{proc}", payload))

    # synchronous core

    def capture(self, now: VirtualTime) -> Optional[DetectionFrame]:
        if self.fault_active("SensorFault", now):
            return None
        frame = next_frame(self.script, now, self._perception_rng, self._frames)
        self._frames += 1
        self.slot.push(frame)
        return frame

    def sample_timing(self) -> PipelineTiming:
        cfg = self.config
        return PipelineTiming(
            sample(self._stage_rng["t_perc"], cfg.t_perc),
            sample(self._stage_rng["t_infer"], cfg.t_infer),
            sample(self._stage_rng["t_post"], cfg.t_post),
        )

    def decide(self, frame: DetectionFrame, timing: PipelineTiming, now: VirtualTime) -> SafetyCommand:
        d = project_distance(frame, self.calibration)
        if math.isinf(d):
            # bridge short detection dropouts with the last human sighting
            if self._last_human is not None and frame.captured_at - self._last_human[0] <= self.config.detection_hold:
                d = self._last_human[1]
        else:
            self._last_human = (frame.captured_at, d)
        zone = classify_zone(d, self.predicate).zone
        self.cycles += 1
        if self.keep_history:
            self.timings.append(timing)
        if guard(self.adc_stable(now), timing.t_stop, self.t_limit):
            return zone_to_command(zone)
        return SafetyCommand.EMERGENCY_STOP

    def tick(self, now: VirtualTime) -> Optional[SafetyCommand]:
        """Run one complete loop iteration synchronously at ``now``.

        Captures a frame, consumes the freshest one and returns the guarded
        command. Returns ``None`` when the node is down or has no frame.
        """
        if not self.up:
            return None
        self.capture(now)
        frame = self.slot.pop()
        if frame is None:
            return None
        timing = self.sample_timing()
        return self.decide(frame, timing, now + timing.t_stop)

    # event handlers

    def _on_capture(self, _payload) -> str:
        now = self.engine.now
        frame = self.capture(now)
        self._arm("capture", now + self.script.frame_period)
        if frame is None:
            return "stalled"
        if self._waiting:
            self._begin_cycle()
        return f"frame={frame.frame_id}"

    def _begin_cycle(self) -> None:
        frame = self.slot.pop()
        if frame is None:
            self._waiting = True
            return
        self._waiting = False
        timing = self.sample_timing()
        now = self.engine.now
        self._cycle = (frame, timing, now)
        self._arm("cycle", now + timing.t_stop)

    def _on_cycle(self, _payload) -> str:
        if self._cycle is None:
            return "idle"
        now = self.engine.now
        frame, timing, _started = self._cycle
        hang = self.faults.get("NpuHang")
        if hang is not None and hang.start < now:
            # inference never returns; only the watchdog can notice
            return "inference-hung"
        self._cycle = None
        cmd = self.decide(frame, timing, now)
        if self.keep_history:
            self.commands.append((now, cmd))
        if self.send_command is not None:
            self.send_command(CommandMessage(self.node_id, cmd, now))
        self._begin_cycle()
        return f"frame={frame.frame_id} t_stop={timing.t_stop} cmd={cmd.label}"

    def _on_heartbeat(self, _payload) -> str:
        now = self.engine.now
        self._arm("heartbeat", now + self.config.heartbeat_period)
        if self.fault_active("HeartbeatLoss", now):
            return "silent"
        self._hb_seq += 1
        if self.keep_history:
            self.heartbeats_sent.append(now)
        if self.send_heartbeat is not None:
            self.send_heartbeat(Heartbeat(self.node_id, self._hb_seq, now))
        return f"seq={self._hb_seq}"

    def _on_adc(self, _payload) -> str:
        now = self.engine.now
        self._arm("adc", now + self.config.adc_period)
        volts = self.voltage(now)
        if self.send_adc is not None:
            self.send_adc(AdcSample(self.node_id, volts, now))
        return f"v={volts:.3f}"

    def _on_watchdog(self, _payload) -> str:
        now = self.engine.now
        period = self.config.watchdog_period
        if not self.npu_progressed(now - period):
            self._local_fault("NpuHang", now)
            return "npu-stalled"
        self._arm("watchdog", now + period)
        return "ok"

    def _on_sensor_check(self, _payload) -> str:
        now = self.engine.now
        stale = self.sensor_staleness(now)
        if stale > self.config.sensor_staleness:
            self._local_fault("SensorFault", now)
            return f"stale={stale}"
        self._arm("sensor-check", now + self.config.sensor_check_period)
        return "ok"

    def _local_fault(self, kind: str, now: VirtualTime) -> None:
        self.engine.log(self.name, f"DETECT node={self.node_id} kind={kind} mechanism=SW-Logic")
        self.halt()
        if self.send_report is not None:
            self.send_report(FaultReport(self.node_id, kind, now))
