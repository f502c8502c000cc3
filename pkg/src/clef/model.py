"""Shared types: packets, flow specs, leaky buckets and the blacklist.

Time is integer nanoseconds and sizes are integer bytes.  Rates are kept as
``Fraction`` bytes/second so that rate*time products are exact.
"""
from __future__ import annotations

import threading
from dataclasses import dataclass, field
from fractions import Fraction
from typing import NamedTuple

NS = 1_000_000_000
MAX_PACKET = 1514
LEGIT_PACKET = 1000


class StreamOrderError(ValueError):
    """A packet arrived with a timestamp earlier than its predecessor."""


class ConfigError(ValueError):
    """Invalid configuration value; ``field`` names the offending key."""

    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field


def as_rate(x) -> Fraction:
    """Coerce a rate to an exact Fraction (floats via their decimal repr)."""
    if isinstance(x, Fraction):
        return x
    if isinstance(x, int):
        return Fraction(x)
    return Fraction(str(x))


def seconds(x) -> int:
    """Seconds (int, float or str) to integer nanoseconds, rounded down."""
    return int(as_rate(x) * NS)


def bytes_in(rate: Fraction, ns: int) -> int:
    """floor(rate * ns / 1e9) with exact integer arithmetic."""
    return (rate.numerator * ns) // (rate.denominator * NS)


def duration_for(nbytes, rate: Fraction) -> int:
    """Nanoseconds needed to send ``nbytes`` at ``rate``, rounded down."""
    return int(as_rate(nbytes) * NS / rate)


class Packet(NamedTuple):
    flow: int
    size: int
    time: int


@dataclass(frozen=True)
class FlowSpec:
    """Leaky-bucket descriptor TH(t) = gamma*t + beta."""

    gamma: Fraction
    beta: int

    def __post_init__(self):
        object.__setattr__(self, "gamma", as_rate(self.gamma))
        if self.gamma <= 0:
            raise ConfigError("gamma", "must be positive")
        if int(self.beta) != self.beta or self.beta <= 0:
            raise ConfigError("beta", "must be a positive integer")
        object.__setattr__(self, "beta", int(self.beta))

    @property
    def level_ns(self) -> int:
        """beta/gamma, the time to drain a full bucket."""
        return duration_for(self.beta, self.gamma)


def th(spec: FlowSpec, t_ns: int) -> int:
    if t_ns < 0:
        raise ValueError("duration must be non-negative")
    return bytes_in(spec.gamma, t_ns) + spec.beta


@dataclass(frozen=True)
class LinkConfig:
    rho: Fraction
    spec: FlowSpec

    def __post_init__(self):
        object.__setattr__(self, "rho", as_rate(self.rho))
        if self.rho < self.spec.gamma:
            raise ConfigError("rho", "link capacity must be at least gamma")

    @property
    def n_gamma(self) -> int:
        return int(self.rho // self.spec.gamma)

    def gamma_h(self, m: int) -> Fraction:
        return self.rho / (m + 1)


class LeakyBucket:
    """Lazily drained bucket; the level is stored scaled by 1e9*denominator(rate)."""

    __slots__ = ("rate", "burst", "last_update", "_num", "_scale", "_level")

    def __init__(self, rate, burst: int, now: int = 0):
        self.rate = as_rate(rate)
        self.burst = int(burst)
        self.last_update = now
        self._num = self.rate.numerator
        self._scale = self.rate.denominator * NS
        self._level = 0

    @property
    def level(self) -> Fraction:
        return Fraction(self._level, self._scale)

    def update(self, size: int, now: int) -> bool:
        if now < self.last_update:
            raise StreamOrderError(f"time {now} before {self.last_update}")
        lvl = self._level - (now - self.last_update) * self._num
        if lvl < 0:
            lvl = 0
        lvl += size * self._scale
        self._level = lvl
        self.last_update = now
        return lvl > self.burst * self._scale


class BlacklistFull(RuntimeError):
    pass


@dataclass
class Blacklist:
    """Set of detected flows with their first detection time."""

    capacity: int | None = None
    entries: dict = field(default_factory=dict)

    def __post_init__(self):
        self._lock = threading.Lock()

    def insert(self, flow: int, t: int) -> bool:
        """Record ``flow``; returns True on the first insert only."""
        if flow in self.entries:
            return False
        with self._lock:
            if flow in self.entries:
                return False
            if self.capacity is not None and len(self.entries) >= self.capacity:
                raise BlacklistFull(f"blacklist holds {self.capacity} flows")
            self.entries[flow] = t
        return True

    def __contains__(self, flow: int) -> bool:
        return flow in self.entries

    contains = __contains__

    def __len__(self):
        return len(self.entries)

    def time_of(self, flow: int) -> int | None:
        return self.entries.get(flow)
