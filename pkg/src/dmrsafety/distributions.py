"""Seeded random streams and per-stage latency distributions.

Every stochastic source draws from its own named stream, derived from
``(seed, stream_id)`` through a SHA-256 digest so the mapping does not depend
on Python's salted ``hash``. Durations are returned as integer microseconds.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass
from typing import Any, Mapping, Union

import numpy as np

from .engine import VirtualTime, ms


class ConfigError(ValueError):
    """Invalid configuration, reported at load time."""


class RngStream:
    def __init__(self, seed: int, stream_id: str):
        if not 0 <= seed < 2**64:
            raise ConfigError(f"seed must fit in 64 bits, got {seed}")
        self.seed = seed
        self.stream_id = stream_id
        digest = hashlib.sha256(stream_id.encode("utf-8")).digest()
        words = [int.from_bytes(digest[i:i + 4], "little") for i in range(0, 16, 4)]
        self.generator = np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, *words])))

    def random(self) -> float:
        return float(self.generator.random())

    def normal(self, scale: float) -> float:
        return float(self.generator.normal(0.0, scale)) if scale > 0 else 0.0

    def __repr__(self) -> str:
        return f"RngStream(seed={self.seed}, stream_id={self.stream_id!r})"


@dataclass(frozen=True)
class Constant:
    value_ms: float

    def __post_init__(self):
        if self.value_ms < 0:
            raise ConfigError("constant latency must be >= 0")

    @property
    def bounds_ms(self) -> tuple[float, float]:
        return self.value_ms, self.value_ms

    @property
    def mean_ms(self) -> float:
        return self.value_ms

    def draw_ms(self, rng: RngStream) -> float:
        return self.value_ms


@dataclass(frozen=True)
class Uniform:
    low_ms: float
    high_ms: float

    def __post_init__(self):
        if not 0 <= self.low_ms <= self.high_ms:
            raise ConfigError(f"uniform bounds must satisfy 0 <= low <= high, got {self.low_ms}, {self.high_ms}")

    @property
    def bounds_ms(self) -> tuple[float, float]:
        return self.low_ms, self.high_ms

    @property
    def mean_ms(self) -> float:
        return 0.5 * (self.low_ms + self.high_ms)

    def draw_ms(self, rng: RngStream) -> float:
        return float(rng.generator.uniform(self.low_ms, self.high_ms))


@dataclass(frozen=True)
class TruncatedLognormal:
    """Lognormal matched to a target mean and standard deviation, truncated to [min, max].

    Out-of-range draws are rejected and redrawn; after ``max_redraws``
    consecutive rejections the draw is clipped.
    """

    mean_ms: float
    std_ms: float
    min_ms: float = 0.0
    max_ms: float = math.inf
    max_redraws: int = 64

    def __post_init__(self):
        if self.mean_ms <= 0 or self.std_ms <= 0:
            raise ConfigError("lognormal mean and std must be > 0")
        if not 0 <= self.min_ms <= self.max_ms:
            raise ConfigError(f"truncation bounds out of order: [{self.min_ms}, {self.max_ms}]")
        if not self.min_ms <= self.mean_ms <= self.max_ms:
            raise ConfigError("lognormal mean must lie inside the truncation bounds")

    @property
    def log_sigma(self) -> float:
        return math.sqrt(math.log1p((self.std_ms / self.mean_ms) ** 2))

    @property
    def log_mu(self) -> float:
        return math.log(self.mean_ms) - 0.5 * self.log_sigma**2

    @property
    def bounds_ms(self) -> tuple[float, float]:
        return self.min_ms, self.max_ms

    def draw_ms(self, rng: RngStream) -> float:
        mu, sigma = self.log_mu, self.log_sigma
        x = self.mean_ms
        for _ in range(self.max_redraws):
            x = float(rng.generator.lognormal(mu, sigma))
            if self.min_ms <= x <= self.max_ms:
                return x
        return min(max(x, self.min_ms), self.max_ms)


LatencyDistribution = Union[Constant, Uniform, TruncatedLognormal]


def sample(stream: RngStream, dist: LatencyDistribution) -> VirtualTime:
    """Draw one duration in microseconds, clamped to the distribution's bounds."""
    lo, hi = dist.bounds_ms
    value = ms(dist.draw_ms(stream))
    # rounding to whole microseconds may step just outside the bounds
    lo_us = math.ceil(lo * 1000 - 1e-9)
    if value < lo_us:
        value = lo_us
    if math.isfinite(hi):
        hi_us = math.floor(hi * 1000 + 1e-9)
        if value > hi_us:
            value = hi_us
    return value


def distribution_from_config(entry: Union[float, int, Mapping[str, Any]]) -> LatencyDistribution:
    """Build a distribution from a config mapping.

    A bare number is a constant in milliseconds. Mappings carry ``dist`` set to
    ``constant``, ``uniform`` or ``lognormal``.
    """
    if isinstance(entry, bool):
        raise ConfigError("latency entry must be a number or mapping")
    if isinstance(entry, (int, float)):
        return Constant(float(entry))
    if not isinstance(entry, Mapping):
        raise ConfigError(f"latency entry must be a number or mapping, got {type(entry).__name__}")
    kind = entry.get("dist", "constant")
    try:
        if kind == "constant":
            return Constant(float(entry["value_ms"]))
        if kind == "uniform":
            return Uniform(float(entry["low_ms"]), float(entry["high_ms"]))
        if kind in ("lognormal", "truncated-lognormal"):
            return TruncatedLognormal(
                mean_ms=float(entry["mean_ms"]),
                std_ms=float(entry["std_ms"]),
                min_ms=float(entry.get("min_ms", 0.0)),
                max_ms=float(entry.get("max_ms", math.inf)),
            )
    except KeyError as exc:
        raise ConfigError(f"{kind} distribution missing field {exc.args[0]!r}") from None
    raise ConfigError(f"unknown distribution {kind!r}")


def distribution_to_config(dist: LatencyDistribution) -> dict[str, Any]:
    if isinstance(dist, Constant):
        return {"dist": "constant", "value_ms": dist.value_ms}
    if isinstance(dist, Uniform):
        return {"dist": "uniform", "low_ms": dist.low_ms, "high_ms": dist.high_ms}
    out: dict[str, Any] = {"dist": "lognormal", "mean_ms": dist.mean_ms, "std_ms": dist.std_ms, "min_ms": dist.min_ms}
    if math.isfinite(dist.max_ms):
        out["max_ms"] = dist.max_ms
    return out

