"""AMF, Flow Memory with random eviction, and their serial hybrid."""
from __future__ import annotations

import random
from dataclasses import dataclass

from .model import NS, ConfigError, FlowSpec, StreamOrderError
from .rlfd import flow_digest, new_key


@dataclass(frozen=True)
class AmfConfig:
    m: int
    spec: FlowSpec
    stages: int = 4
    conservative: bool = False

    def __post_init__(self):
        if self.stages < 1 or self.m % self.stages or self.m < self.stages:
            raise ConfigError("m", f"{self.m} counters do not split into {self.stages} stages")

    @property
    def width(self) -> int:
        return self.m // self.stages


class Amf:
    """Parallel stages of hashed leaky buckets; flags when every bucket overflows.

    Bucket levels are kept scaled by 1e9*denominator(gamma) so drains are
    integer.  All stage buckets share one timestamp array per stage.
    """

    def __init__(self, config: AmfConfig, seed: int = 0):
        self.config = config
        rng = random.Random(seed)
        self.keys = [new_key(rng) for _ in range(config.stages)]
        w = config.width
        self.width = w
        g = config.spec.gamma
        self._num = g.numerator
        self._scale = g.denominator * NS
        self._cap = config.spec.beta * self._scale
        n = config.stages
        self._level = [[0] * w for _ in range(n)]
        self._last = [[0] * w for _ in range(n)]
        self._idx: dict[int, tuple] = {}
        self._now = 0

    def indices(self, flow: int) -> tuple:
        ix = self._idx.get(flow)
        if ix is None:
            w = self.width
            ix = self._idx[flow] = tuple(flow_digest(k, flow) % w for k in self.keys)
        return ix

    def observe(self, flow: int, size: int, t: int) -> bool:
        if t < self._now:
            raise StreamOrderError(f"time {t} before {self._now}")
        self._now = t
        ix = self._idx.get(flow)
        if ix is None:
            ix = self.indices(flow)
        num, cap = self._num, self._cap
        add = size * self._scale
        if self.config.conservative:
            return self._conservative(ix, add, t)
        flagged = True
        for lv, ls, i in zip(self._level, self._last, ix):
            x = lv[i] - (t - ls[i]) * num
            if x < 0:
                x = 0
            x += add
            lv[i] = x
            ls[i] = t
            if x <= cap:
                flagged = False
        return flagged

    def _conservative(self, ix, add, t) -> bool:
        num = self._num
        cur = []
        for lv, ls, i in zip(self._level, self._last, ix):
            x = lv[i] - (t - ls[i]) * num
            cur.append(x if x > 0 else 0)
        floor = min(cur) + add
        for lv, ls, i, x in zip(self._level, self._last, ix, cur):
            lv[i] = x if x > floor else floor
            ls[i] = t
        return floor > self._cap

    def process(self, pkt):
        return pkt.flow if self.observe(pkt.flow, pkt.size, pkt.time) else None

    def state_size(self) -> dict:
        return {"counters": self.config.m}


@dataclass(frozen=True)
class FmConfig:
    m: int
    spec: FlowSpec

    def __post_init__(self):
        if self.m < 1:
            raise ConfigError("m", "need at least one entry")


class FlowMemory:
    """Per-flow leaky buckets for at most m flows, random eviction on pressure."""

    def __init__(self, config: FmConfig, seed: int = 0, record: bool = False):
        self.config = config
        self.m = config.m
        self.rng = random.Random(seed)
        g = config.spec.gamma
        self._num = g.numerator
        self._scale = g.denominator * NS
        self._cap = config.spec.beta * self._scale
        # flow -> [scaled level, last update]
        self.table: dict[int, list] = {}
        self._order: list[int] = []
        self._slot: dict[int, int] = {}
        self.record = record
        self.admitted_at: dict[int, int] = {}
        self.evictions: list[tuple[int, int, int]] = []
        self._now = 0

    def __contains__(self, flow: int) -> bool:
        return flow in self.table

    def _admit(self, flow: int, t: int) -> bool:
        order = self._order
        if len(order) < self.m:
            self._slot[flow] = len(order)
            order.append(flow)
        else:
            j = self.rng.randrange(self.m + 1)
            if j == self.m:
                return False
            old = order[j]
            del self.table[old]
            del self._slot[old]
            if self.record:
                self.evictions.append((old, self.admitted_at.pop(old), t))
            order[j] = flow
            self._slot[flow] = j
        self.table[flow] = [0, t]
        if self.record:
            self.admitted_at[flow] = t
        return True

    def observe(self, flow: int, size: int, t: int, admit: bool = True) -> bool:
        if t < self._now:
            raise StreamOrderError(f"time {t} before {self._now}")
        self._now = t
        b = self.table.get(flow)
        if b is None:
            if not admit or not self._admit(flow, t):
                return False
            b = self.table[flow]
        x = b[0] - (t - b[1]) * self._num
        if x < 0:
            x = 0
        x += size * self._scale
        b[0] = x
        b[1] = t
        return x > self._cap

    def process(self, pkt):
        return pkt.flow if self.observe(pkt.flow, pkt.size, pkt.time) else None

    def state_size(self) -> dict:
        return {"counters": self.m}


class AmfFm:
    """AMF sees every packet; flagged or already tracked flows go on to FM."""

    def __init__(self, amf: AmfConfig, fm: FmConfig, seed: int = 0):
        self.amf = Amf(amf, seed)
        self.fm = FlowMemory(fm, seed + 1)

    @classmethod
    def with_total(cls, m: int, spec: FlowSpec, seed: int = 0, stages: int = 4):
        return cls(AmfConfig(m // 2, spec, stages), FmConfig(m - m // 2, spec), seed)

    def observe(self, flow: int, size: int, t: int) -> bool:
        flagged = self.amf.observe(flow, size, t)
        if flagged or flow in self.fm.table:
            return self.fm.observe(flow, size, t, admit=flagged)
        return False

    def process(self, pkt):
        return pkt.flow if self.observe(pkt.flow, pkt.size, pkt.time) else None

    def state_size(self) -> dict:
        return {"counters": self.amf.config.m + self.fm.m}
