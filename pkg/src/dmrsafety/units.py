"""Exact physical quantities over (length, time) dimensions."""

from __future__ import annotations

import math
from dataclasses import dataclass
from decimal import Decimal
from fractions import Fraction
from numbers import Rational
from typing import Union

Dimension = tuple[int, int]  # (length exponent, time exponent)

DIMENSIONLESS: Dimension = (0, 0)
LENGTH: Dimension = (1, 0)
TIME: Dimension = (0, 1)
SPEED: Dimension = (1, -1)

DIMENSION_NAMES = {
    DIMENSIONLESS: "dimensionless",
    LENGTH: "length",
    TIME: "duration",
    SPEED: "speed",
}

# unit -> (dimension, scale to SI base)
UNITS: dict[str, tuple[Dimension, Fraction]] = {
    "m": (LENGTH, Fraction(1)),
    "cm": (LENGTH, Fraction(1, 100)),
    "mm": (LENGTH, Fraction(1, 1000)),
    "s": (TIME, Fraction(1)),
    "ms": (TIME, Fraction(1, 1000)),
    "m/s": (SPEED, Fraction(1)),
}

MICRO = Fraction(1, 1_000_000)

Number = Union[int, float, Decimal, Fraction]


def dimension_name(dim: Dimension) -> str:
    return DIMENSION_NAMES.get(dim, f"L^{dim[0]} T^{dim[1]}")


class DimensionError(TypeError):
    pass


@dataclass(frozen=True)
class Quantity:
    """A magnitude in SI base units carrying its dimension."""

    magnitude: Fraction
    dimension: Dimension = DIMENSIONLESS

    @classmethod
    def of(cls, value: Number, unit: str = "") -> "Quantity":
        if not unit:
            return cls(exact(value), DIMENSIONLESS)
        dim, scale = UNITS[unit]
        return cls(exact(value) * scale, dim)

    def _same(self, other: "Quantity") -> None:
        if self.dimension != other.dimension:
            raise DimensionError(
                f"cannot combine {dimension_name(self.dimension)} with {dimension_name(other.dimension)}"
            )

    def __add__(self, other: "Quantity") -> "Quantity":
        self._same(other)
        return Quantity(self.magnitude + other.magnitude, self.dimension)

    def __sub__(self, other: "Quantity") -> "Quantity":
        self._same(other)
        return Quantity(self.magnitude - other.magnitude, self.dimension)

    def __mul__(self, other: Union["Quantity", Number]) -> "Quantity":
        if not isinstance(other, Quantity):
            return Quantity(self.magnitude * exact(other), self.dimension)
        dim = (self.dimension[0] + other.dimension[0], self.dimension[1] + other.dimension[1])
        return Quantity(self.magnitude * other.magnitude, dim)

    __rmul__ = __mul__

    def __truediv__(self, other: Union["Quantity", Number]) -> "Quantity":
        if not isinstance(other, Quantity):
            return Quantity(self.magnitude / exact(other), self.dimension)
        dim = (self.dimension[0] - other.dimension[0], self.dimension[1] - other.dimension[1])
        return Quantity(self.magnitude / other.magnitude, dim)

    def __lt__(self, other: "Quantity") -> bool:
        self._same(other)
        return self.magnitude < other.magnitude

    def __le__(self, other: "Quantity") -> bool:
        self._same(other)
        return self.magnitude <= other.magnitude

    def __gt__(self, other: "Quantity") -> bool:
        self._same(other)
        return self.magnitude > other.magnitude

    def __ge__(self, other: "Quantity") -> bool:
        self._same(other)
        return self.magnitude >= other.magnitude

    def __str__(self) -> str:
        unit = {LENGTH: "m", TIME: "s", SPEED: "m/s", DIMENSIONLESS: ""}.get(self.dimension)
        text = decimal_text(self.magnitude)
        return f"{text} {unit}".rstrip() if unit is not None else f"{text} [{dimension_name(self.dimension)}]"


def exact(value: Number) -> Fraction:
    """Exact rational value; floats go through their shortest decimal repr."""
    if isinstance(value, bool):
        raise TypeError("booleans are not quantities")
    if isinstance(value, Fraction):
        return value
    if isinstance(value, Rational):
        return Fraction(value)
    if isinstance(value, Decimal):
        return Fraction(value)
    if isinstance(value, float):
        if not math.isfinite(value):
            raise ValueError("non-finite magnitude")
        return Fraction(repr(value))
    raise TypeError(f"unsupported magnitude type {type(value).__name__}")


def quantize_micro(value: Number) -> Fraction:
    """Round a length or duration to micro-unit resolution (1 um, 1 us)."""
    if isinstance(value, float):
        return Fraction(round(value * 1_000_000), 1_000_000)
    return exact(value)


def decimal_text(value: Fraction) -> str:
    """Finite decimal rendering of a fraction whose denominator divides a power of ten."""
    num, den = value.numerator, value.denominator
    twos = fives = 0
    d = den
    while d % 2 == 0:
        d //= 2
        twos += 1
    while d % 5 == 0:
        d //= 5
        fives += 1
    if d != 1:
        return f"{num}/{den}"
    places = max(twos, fives)
    scaled = num * (10**places // den)
    text = str(Decimal(scaled).scaleb(-places))
    if "E" in text or "e" in text:
        text = format(Decimal(scaled).scaleb(-places), "f")
    if "." in text:
        text = text.rstrip("0").rstrip(".")
    return text
