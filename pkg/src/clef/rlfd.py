"""Recursive large-flow detector over a virtual m-ary counter tree.

Only one tree node (m counters) is resident.  A flow's path through the tree
is a keyed hash; digit k (base m, least significant first) is its counter
index at level k.  For m = 2**s the digit is a bit field and the loaded-node
test is a single AND + compare; other m use the same layout in mixed radix.
"""
from __future__ import annotations

import math
import random
from dataclasses import dataclass
from hashlib import blake2b

from .model import ConfigError, FlowSpec, duration_for, th

MAX_KICKS = 500
N_HASHES = 3


def default_depth(m: int, n: int) -> int:
    """floor(1.2 * log_m(n)) + 1."""
    if n <= 1:
        return 1
    return int(1.2 * math.log(n) / math.log(m)) + 1


def new_key(rng: random.Random) -> bytes:
    return rng.getrandbits(128).to_bytes(16, "little")


def flow_digest(key: bytes, flow: int) -> int:
    """128-bit keyed hash of a flow id."""
    h = blake2b(flow.to_bytes(8, "little"), key=key, digest_size=16)
    return int.from_bytes(h.digest(), "little")


def flow_code(key: bytes, flow: int, m: int, d: int) -> int:
    """Path code: a uniform value in [0, m**d)."""
    x = flow_digest(key, flow) & ((1 << 64) - 1)
    if m & (m - 1) == 0:
        return x & ((1 << (m.bit_length() - 1) * d) - 1)
    return x % m ** d


def level_index(code: int, m: int, k: int) -> int:
    """Counter index of ``code`` at level k (1-based)."""
    return code // m ** (k - 1) % m


@dataclass(frozen=True)
class RlfdConfig:
    m: int
    d: int
    level_ns: int
    spec: FlowSpec
    jitter: float = 0.0
    short_ids: bool = False
    max_kicks: int = MAX_KICKS

    def __post_init__(self):
        if self.m < 2:
            raise ConfigError("m", "need at least two counters")
        if self.d < 1:
            raise ConfigError("d", "depth must be at least 1")
        if self.m ** self.d > 1 << 64:
            raise ConfigError("d", "m**d must fit in 64 bits")
        if self.level_ns <= 0:
            raise ConfigError("level_ns", "must be positive")
        if not 0 <= self.jitter < 1:
            raise ConfigError("jitter", "must lie in [0, 1)")

    @classmethod
    def for_flows(cls, m: int, n: int, spec: FlowSpec, level_ns: int | None = None, **kw):
        if level_ns is None:
            level_ns = spec.level_ns
        return cls(m=m, d=default_depth(m, n), level_ns=level_ns, spec=spec, **kw)

    @property
    def cycle_ns(self) -> int:
        return self.d * self.level_ns

    @property
    def th_rlfd(self) -> int:
        return th(self.spec, self.level_ns)

    @property
    def pow2(self) -> bool:
        return self.m & (self.m - 1) == 0


def cycle_lengths(cycle_ns: int, jitter: float, rng: random.Random):
    """Endless sequence of cycle durations, uniform in cycle*(1 +- jitter)."""
    if jitter == 0:
        while True:
            yield cycle_ns
    lo = cycle_ns * (1 - jitter)
    hi = cycle_ns * (1 + jitter)
    while True:
        yield int(rng.uniform(lo, hi))


class CuckooTable:
    """Fixed-size table of (key -> byte count), one key per slot."""

    def __init__(self, size: int, max_kicks: int, rng: random.Random):
        self.size = size
        self.max_kicks = max_kicks
        self.rng = rng
        self.keys: list = [None] * size
        self.vals = [0] * size
        self.count = 0

    def clear(self):
        self.keys = [None] * self.size
        self.vals = [0] * self.size
        self.count = 0

    def find(self, key, pos) -> int | None:
        keys = self.keys
        for p in pos:
            if keys[p] == key:
                return p
        return None

    def insert(self, key, pos, positions) -> int | None:
        """Place ``key`` (candidate slots ``pos``); None if displacement fails.

        ``positions(k)`` gives candidate slots of an already-placed key.  On
        failure every displaced key is moved back, so the table is unchanged.
        """
        keys, vals = self.keys, self.vals
        for p in pos:
            if keys[p] is None:
                keys[p] = key
                vals[p] = 0
                self.count += 1
                return p
        moves = []
        cur_key, cur_val, cur_pos = key, 0, pos
        for _ in range(self.max_kicks):
            p = self.rng.choice(cur_pos)
            moves.append((p, keys[p], vals[p]))
            keys[p], cur_key = cur_key, keys[p]
            vals[p], cur_val = cur_val, vals[p]
            cur_pos = positions(cur_key)
            for q in cur_pos:
                if keys[q] is None:
                    keys[q] = cur_key
                    vals[q] = cur_val
                    self.count += 1
                    return self.find(key, pos)
        for p, k, v in reversed(moves):
            keys[p] = k
            vals[p] = v
        return None


class Rlfd:
    def __init__(self, config: RlfdConfig, seed: int = 0, start: int = 0):
        self.config = config
        self.m = m = config.m
        self.d = config.d
        self.spec = config.spec
        self.rng = random.Random(seed)
        self._cycles = cycle_lengths(config.cycle_ns, config.jitter, self.rng)
        self._pow2 = config.pow2
        self._s = m.bit_length() - 1
        self.table = CuckooTable(m, config.max_kicks, self.rng)
        self.counters = [0] * m
        self.detected: set[int] = set()
        self.dropped: set[int] = set()
        self.cycles_done = 0
        self._start_cycle(start)

    # -- cycle / level bookkeeping ---------------------------------------
    def _start_cycle(self, t: int):
        self.key = new_key(self.rng)
        self._pos_key = new_key(self.rng)
        self._codes: dict[int, int] = {}
        self._pos: dict[int, tuple] = {}
        self.cycle_start = t
        self.cycle_len = next(self._cycles)
        self.level_len = self.cycle_len // self.d
        # the last level absorbs the rounding remainder
        self.th_bottom = th(self.spec, self.cycle_len - (self.d - 1) * self.level_len)
        self.table.clear()
        self.dropped = set()
        self._set_level(1, 0, t)

    def _set_level(self, k: int, ancestor: int, t: int):
        self.level = k
        self.ancestor = ancestor
        self.level_start = t
        self.level_end = t + self.level_len if k < self.d else self.cycle_start + self.cycle_len
        self.counters = [0] * self.m
        if self._pow2:
            self._mask = (1 << self._s * (k - 1)) - 1
            self._shift = self._s * (k - 1)
            self._low = self.m - 1
        else:
            self._div = self.m ** (k - 1)

    def _argmax(self) -> int:
        c = self.counters
        top = max(c)
        best = [i for i, v in enumerate(c) if v == top]
        return best[0] if len(best) == 1 else self.rng.choice(best)

    def advance(self, now: int) -> list:
        """Apply every level boundary at or before ``now``."""
        events = []
        while now >= self.level_end:
            end = self.level_end
            k = self.level
            if k < self.d:
                idx = self._argmax()
                if self._pow2:
                    anc = self.ancestor | idx << self._s * (k - 1)
                else:
                    anc = self.ancestor + idx * self.m ** (k - 1)
                events.append(("select", k, idx))
                self._set_level(k + 1, anc, end)
            else:
                events.append(("cycle", self.cycles_done))
                self.cycles_done += 1
                self._start_cycle(end)
        return events

    # -- hashing ----------------------------------------------------------
    def code(self, flow: int) -> int:
        c = self._codes.get(flow)
        if c is None:
            c = self._codes[flow] = flow_code(self.key, flow, self.m, self.d)
        return c

    def loaded_index(self, code: int) -> int | None:
        if self._pow2:
            if code & self._mask != self.ancestor:
                return None
            return code >> self._shift & self._low
        if code % self._div != self.ancestor:
            return None
        return code // self._div % self.m

    def _positions(self, key) -> tuple:
        p = self._pos.get(key)
        if p is None:
            x = flow_digest(self._pos_key, key)
            m = self.m
            p = (x % m, (x >> 42) % m, (x >> 84) % m)
            self._pos[key] = p
        return p

    def _table_key(self, flow: int):
        if self.config.short_ids:
            return flow_digest(self._pos_key, flow) >> 80
        return flow

    # -- packet path ------------------------------------------------------
    def observe(self, flow: int, size: int, t: int) -> bool:
        if t >= self.level_end:
            self.advance(t)
        code = self._codes.get(flow)
        if code is None:
            code = self._codes[flow] = flow_code(self.key, flow, self.m, self.d)
        if self._pow2:
            if code & self._mask != self.ancestor:
                return False
            idx = code >> self._shift & self._low
        else:
            if code % self._div != self.ancestor:
                return False
            idx = code // self._div % self.m
        if self.level < self.d:
            self.counters[idx] += size
            return False
        return self._bottom(flow, size)

    def _bottom(self, flow: int, size: int) -> bool:
        if flow in self.dropped:
            return False
        key = self._table_key(flow)
        tab = self.table
        pos = self._positions(key)
        slot = tab.find(key, pos)
        if slot is None:
            slot = tab.insert(key, pos, self._positions)
            if slot is None:
                self.dropped.add(flow)
                return False
        v = tab.vals[slot] + size
        tab.vals[slot] = v
        if v > self.th_bottom:
            self.detected.add(flow)
            return True
        return False

    def process(self, pkt):
        return pkt.flow if self.observe(pkt.flow, pkt.size, pkt.time) else None

    def state_size(self) -> dict:
        return {"counters": len(self.counters), "table_slots": self.table.size}


class ShardedRlfd:
    """R independent detectors; each flow is hashed to one of them."""

    def __init__(self, config: RlfdConfig, shards: int, seed: int = 0, start: int = 0):
        if shards < 1:
            raise ConfigError("shards", "need at least one shard")
        self.shards = [Rlfd(config, seed + i, start) for i in range(shards)]
        self._key = new_key(random.Random(f"shard-{seed}"))
        self._route: dict[int, Rlfd] = {}

    def shard_of(self, flow: int) -> int:
        if len(self.shards) == 1:
            return 0
        return flow_digest(self._key, flow) % len(self.shards)

    def observe(self, flow: int, size: int, t: int) -> bool:
        r = self._route.get(flow)
        if r is None:
            r = self._route[flow] = self.shards[self.shard_of(flow)]
        return r.observe(flow, size, t)

    def advance(self, now: int):
        return [e for s in self.shards for e in s.advance(now)]

    @property
    def detected(self) -> set:
        return set().union(*(s.detected for s in self.shards))

