"""EARDet: byte-weighted Misra-Gries over m counters with idle-link fill.

Counters are stored as ``value + offset`` so a uniform decrement of all
counters is a single addition to ``offset``.  A lazy min-heap finds the
smallest counter; entries go stale when a counter grows and are fixed up
when they reach the top.

Idle link capacity is treated as traffic from fresh unit-size flows (the
"blank" traffic of the original design).  Without it a compliant flow alone
on a quiet link would never be decremented and would eventually be flagged.
"""
from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from heapq import heappop, heappush, heapreplace

from .model import MAX_PACKET, NS, ConfigError, FlowSpec, LinkConfig, StreamOrderError, as_rate


@dataclass(frozen=True)
class EardetConfig:
    m: int
    spec: FlowSpec
    rho: Fraction
    beta_th: int | None = None
    max_backlog: int = 16 * MAX_PACKET

    def __post_init__(self):
        object.__setattr__(self, "rho", as_rate(self.rho))
        if self.m < 1:
            raise ConfigError("m", "need at least one counter")
        if self.gamma_h <= self.spec.gamma:
            raise ConfigError("m", "gamma_h = rho/(m+1) must exceed gamma")
        if self.beta_th is None:
            bt = self.spec.beta + self.gamma_h * self.spec.beta / self.spec.gamma
            object.__setattr__(self, "beta_th", int(bt))

    @classmethod
    def for_link(cls, m: int, link: LinkConfig, **kw) -> "EardetConfig":
        return cls(m=m, spec=link.spec, rho=link.rho, **kw)

    @property
    def gamma_h(self) -> Fraction:
        return self.rho / (self.m + 1)


class Eardet:
    __slots__ = ("config", "m", "beta_th", "_rho_num", "_rho_den", "_max_backlog", "_cap_rem",
                 "_backlog", "_virtual_rem", "_last", "_offset", "_counts", "_heap")

    def __init__(self, config: EardetConfig):
        self.config = config
        self.m = config.m
        self.beta_th = config.beta_th
        self._rho_num = config.rho.numerator
        self._rho_den = config.rho.denominator * NS
        self._max_backlog = config.max_backlog
        self._cap_rem = 0
        self._backlog = 0
        self._virtual_rem = 0
        self._last = None
        self._offset = 0
        self._counts: dict[int, int] = {}
        self._heap: list[tuple[int, int]] = []

    # -- inspection -------------------------------------------------------
    def counters(self) -> dict[int, int]:
        off = self._offset
        return {f: v - off for f, v in self._counts.items()}

    def value(self, flow: int) -> int:
        v = self._counts.get(flow)
        return 0 if v is None else v - self._offset

    def state_size(self) -> dict:
        return {"counters": self.m}

    # -- internals --------------------------------------------------------
    def _min(self):
        """Top of heap after refreshing stale entries: (stored, flow)."""
        heap = self._heap
        counts = self._counts
        while True:
            s, f = heap[0]
            cur = counts[f]
            if cur == s:
                return s, f
            heapreplace(heap, (cur, f))

    def _evict_zeros(self):
        heap = self._heap
        counts = self._counts
        off = self._offset
        while counts:
            s, f = self._min()
            if s != off:
                break
            heappop(heap)
            del counts[f]

    def _fill(self, v: int):
        """Consume ``v`` bytes of idle capacity as unit-size fresh flows."""
        counts = self._counts
        v += self._virtual_rem
        m = self.m
        while counts:
            per = m - len(counts) + 1
            s, _ = self._min()
            need = (s - self._offset) * per
            if v < need:
                step = v // per
                self._offset += step
                v -= step * per
                break
            self._offset = s
            v -= need
            self._evict_zeros()
        self._virtual_rem = v if counts else 0

    # -- packet path ------------------------------------------------------
    def observe(self, flow: int, size: int, t: int) -> bool:
        """Process one packet; True iff ``flow``'s counter exceeds beta_th."""
        counts = self._counts
        if t != self._last:
            last = self._last
            if last is None:
                self._last = t
            elif t < last:
                raise StreamOrderError(f"time {t} before {last}")
            else:
                cap, self._cap_rem = divmod(self._rho_num * (t - last) + self._cap_rem, self._rho_den)
                b = self._backlog
                if cap > b:
                    self._backlog = 0
                    if counts:
                        self._fill(cap - b)
                else:
                    self._backlog = b - cap
                self._last = t
        b = self._backlog + size
        self._backlog = b if b < self._max_backlog else self._max_backlog
        stored = counts.get(flow)
        if stored is not None:
            stored += size
            counts[flow] = stored
            return stored - self._offset > self.beta_th
        heap = self._heap
        if len(counts) < self.m:
            stored = self._offset + size
            counts[flow] = stored
            heappush(heap, (stored, flow))
            return size > self.beta_th
        s, f = heap[0]
        c = counts[f]
        while c != s:
            heapreplace(heap, (c, f))
            s, f = heap[0]
            c = counts[f]
        off = self._offset
        vmin = s - off
        if size < vmin:
            self._offset = off + size
            return False
        # the minimum counter drops to zero and frees its slot
        self._offset = s
        del counts[f]
        resid = size - vmin
        if resid:
            stored = s + resid
            counts[flow] = stored
            heapreplace(heap, (stored, flow))
        else:
            heappop(heap)
        while heap:
            s2, f2 = heap[0]
            if s2 > s:
                break
            c = counts[f2]
            if c != s2:
                heapreplace(heap, (c, f2))
            else:
                heappop(heap)
                del counts[f2]
        return resid > self.beta_th

    def process(self, pkt):
        return pkt.flow if self.observe(pkt.flow, pkt.size, pkt.time) else None
