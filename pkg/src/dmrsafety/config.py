"""YAML config loading for runs, scenarios, nodes and fault plans.

Paths inside a config file are resolved relative to that file. A path of the
form ``builtin:<name>`` refers to a file shipped in ``dmrsafety/data``.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any, Optional, Union

import yaml

from .distributions import ConfigError
from .faults import FaultInjection, load_plan
from .node import NodeConfig
from .perception import ScenarioScript
from .redundancy import RedundancyConfig
from .rules import SafetyPredicate, compile_source

BUILTIN = "builtin:"

PathLike = Union[str, Path]


def builtin_path(name: str) -> Path:
    return Path(str(resources.files("dmrsafety") / "data" / name))


def resolve(path: PathLike, base: Optional[Path] = None) -> Path:
    text = str(path)
    if text.startswith(BUILTIN):
        return builtin_path(text[len(BUILTIN):])
    p = Path(text)
    if not p.is_absolute() and base is not None:
        p = base / p
    return p


def read_text(path: PathLike) -> str:
    return resolve(path).read_text(encoding="utf-8")


def load_yaml(path: PathLike) -> Any:
    try:
        return yaml.safe_load(read_text(path))
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: {exc}") from exc


def load_scenario(path: PathLike) -> ScenarioScript:
    data = load_yaml(path)
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: scenario must be a mapping")
    return ScenarioScript.from_dict(data, name=Path(str(path)).stem)


def load_node_config(path: PathLike) -> NodeConfig:
    data = load_yaml(path) or {}
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: node config must be a mapping")
    return NodeConfig.from_dict(data)


def load_rules(path: PathLike) -> SafetyPredicate:
    return compile_source(read_text(path))


def load_fault_plan(path: PathLike) -> list[FaultInjection]:
    return load_plan(load_yaml(path) or [])


@dataclass
class RunConfig:
    rule_file: Path
    scenario_file: Path
    node_configs: tuple[Path, Path]
    duration_ms: float
    seed: int = 0
    fault_plan: Optional[Path] = None
    output_dir: Path = Path("out")
    redundancy: dict[str, Any] = field(default_factory=dict)
    single_fault: bool = True
    source: Optional[Path] = None

    def __post_init__(self):
        if self.duration_ms <= 0:
            raise ConfigError("duration_ms must be > 0")

    @classmethod
    def from_file(cls, path: PathLike) -> "RunConfig":
        p = resolve(path)
        data = load_yaml(p)
        if not isinstance(data, dict):
            raise ConfigError(f"{path}: run config must be a mapping")
        return cls.from_dict(data, p.parent, source=p)

    @classmethod
    def from_dict(cls, data: dict, base: Optional[Path] = None, source: Optional[Path] = None) -> "RunConfig":
        known = {"rule_file", "scenario_file", "node_configs", "duration_ms", "seed", "fault_plan",
                 "output_dir", "redundancy", "single_fault"}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown run config keys: {sorted(unknown)}")
        try:
            nodes = data["node_configs"]
            if isinstance(nodes, str):
                nodes = [nodes, nodes]
            if len(nodes) != 2:
                raise ConfigError("node_configs must name exactly two node configs (A, B)")
            plan = data.get("fault_plan")
            return cls(
                rule_file=resolve(data["rule_file"], base),
                scenario_file=resolve(data["scenario_file"], base),
                node_configs=(resolve(nodes[0], base), resolve(nodes[1], base)),
                duration_ms=float(data["duration_ms"]),
                seed=int(data.get("seed", 0)),
                fault_plan=None if plan is None else resolve(plan, base),
                output_dir=Path(data.get("output_dir", "out")),
                redundancy=dict(data.get("redundancy") or {}),
                single_fault=bool(data.get("single_fault", True)),
                source=source,
            )
        except KeyError as exc:
            raise ConfigError(f"run config missing {exc.args[0]!r}") from None

    def check_files(self) -> None:
        paths = [self.rule_file, self.scenario_file, *self.node_configs]
        if self.fault_plan is not None:
            paths.append(self.fault_plan)
        for p in paths:
            if not p.is_file():
                raise FileNotFoundError(str(p))

    def content_hash(self) -> str:
        """SHA-256 over the run parameters and the bytes of every referenced file."""
        h = hashlib.sha256()
        meta = {
            "duration_ms": self.duration_ms,
            "seed": self.seed,
            "redundancy": self.redundancy,
            "single_fault": self.single_fault,
        }
        h.update(json.dumps(meta, sort_keys=True).encode())
        paths = [self.rule_file, self.scenario_file, *self.node_configs]
        if self.fault_plan is not None:
            paths.append(self.fault_plan)
        for p in paths:
            h.update(b"\0")
            h.update(p.read_bytes())
        return h.hexdigest()
