"""Discrete-event simulation of a dual-node robot safety loop."""

from .engine import Engine, SimulationTrace, ms, to_ms
from .node import SafetyCommand
from .redundancy import FaultKind
from .rules import SafetyPredicate, compile_source, evaluate

__version__ = "0.1.0"

__all__ = [
    "Engine",
    "FaultKind",
    "SafetyCommand",
    "SafetyPredicate",
    "SimulationTrace",
    "compile_source",
    "evaluate",
    "ms",
    "to_ms",
]
