"""Wiring of nodes, links and the coordinator onto a single engine."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Optional, Sequence

from .engine import Channel, Engine, SimulationTrace, VirtualTime
from .node import ComputeNode, NodeConfig
from .perception import ScenarioScript
from .redundancy import Coordinator, MergedOutput, RedundancyConfig
from .rules import SafetyPredicate


@dataclass
class RunResult:
    trace: SimulationTrace
    timeline: list[MergedOutput]
    nodes: dict[str, ComputeNode]
    coordinator: Coordinator
    end: VirtualTime


class DmrSystem:
    """A redundant cell: one or two nodes sharing a coordinator.

    Each node perceives the same scenario through its own random streams, and
    talks to the coordinator over four fixed-latency links (commands,
    heartbeats, ADC samples, fault reports).
    """

    def __init__(
        self,
        predicate: SafetyPredicate,
        script: ScenarioScript,
        node_configs: Mapping[str, NodeConfig],
        redundancy: Optional[RedundancyConfig] = None,
        seed: int = 0,
        record_dispatches: bool = True,
    ):
        self.engine = Engine(seed=seed, record_dispatches=record_dispatches)
        self.predicate = predicate
        self.script = script
        self.redundancy = redundancy or RedundancyConfig()
        self.nodes: dict[str, ComputeNode] = {}
        latency = self.redundancy.link_latency
        coordinator_ref: list[Coordinator] = []

        def deliver(kind):
            return lambda msg: getattr(coordinator_ref[0], f"receive_{kind}")(msg)

        for node_id in sorted(node_configs):
            links = {
                kind: Channel(self.engine, f"link-{node_id}/{kind}", deliver(kind), latency)
                for kind in ("command", "heartbeat", "adc", "report")
            }
            self.nodes[node_id] = ComputeNode(
                node_id,
                self.engine,
                predicate,
                script,
                node_configs[node_id],
                send_command=links["command"].send,
                send_heartbeat=links["heartbeat"].send,
                send_adc=links["adc"].send,
                send_report=links["report"].send,
            )
        self.coordinator = Coordinator(self.engine, self.nodes, self.redundancy)
        coordinator_ref.append(self.coordinator)
        self._started = False

    def start(self) -> None:
        if self._started:
            return
        self._started = True
        self.coordinator.start()
        for node in self.nodes.values():
            node.start(0)

    def run(self, duration: VirtualTime) -> RunResult:
        self.start()
        self.engine.run_until(duration)
        return RunResult(self.engine.trace, self.coordinator.timeline, self.nodes, self.coordinator, duration)


def build_pair(
    predicate: SafetyPredicate,
    script: ScenarioScript,
    configs: Sequence[NodeConfig] | NodeConfig | None = None,
    redundancy: Optional[RedundancyConfig] = None,
    seed: int = 0,
    node_ids: Sequence[str] = ("A", "B"),
    record_dispatches: bool = True,
) -> DmrSystem:
    if configs is None:
        configs = NodeConfig()
    if isinstance(configs, NodeConfig):
        configs = [configs] * len(node_ids)
    if len(configs) != len(node_ids):
        raise ValueError("one node config per node id is required")
    return DmrSystem(predicate, script, dict(zip(node_ids, configs)), redundancy, seed, record_dispatches)
