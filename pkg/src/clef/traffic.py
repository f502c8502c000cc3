"""Packet generators, the simulation loop, damage accounting and trace I/O.

A scenario is a set of *slots*, each with a fixed packet schedule:
background flows at a constant rate, on-off attack flows, and one reserve
legitimate slot per attack flow that switches on when that attacker is
blacklisted.  Schedules are built with numpy, merged by timestamp (attack
slots sort first on ties) and then driven through the detector in one loop.
"""
from __future__ import annotations

import io
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Iterable, Iterator

import numpy as np

from .model import (LEGIT_PACKET, MAX_PACKET, NS, Blacklist, ConfigError, FlowSpec, LinkConfig,
                    Packet, StreamOrderError, as_rate, th)

ATTACK_BASE = 1 << 48
CHUNK = 1 << 20


@dataclass(frozen=True)
class BackgroundConfig:
    n: int
    rate: Fraction
    size: int = LEGIT_PACKET
    replacement: bool = True

    def __post_init__(self):
        object.__setattr__(self, "rate", as_rate(self.rate))
        if self.n < 0:
            raise ConfigError("background.n", "must be non-negative")
        if self.rate <= 0:
            raise ConfigError("background.rate", "must be positive")
        if not 1 <= self.size <= MAX_PACKET:
            raise ConfigError("background.size", f"must lie in [1, {MAX_PACKET}]")

    def check(self, link: LinkConfig):
        if self.n * self.rate > link.rho:
            raise ConfigError("background.n", "aggregate background rate exceeds link capacity")


@dataclass(frozen=True)
class AttackPattern:
    rate: Fraction
    theta: float = 1.0
    period_ns: int = 968_960_000
    start_ns: int = 0
    duration_ns: int | None = None
    size: int = MAX_PACKET

    def __post_init__(self):
        object.__setattr__(self, "rate", as_rate(self.rate))
        if self.rate <= 0:
            raise ConfigError("attack.rate", "must be positive")
        if not 0 < self.theta <= 1:
            raise ConfigError("attack.theta", "must lie in (0, 1]")
        if self.period_ns <= 0 or self.theta * self.period_ns <= 0:
            raise ConfigError("attack.period", "burst length must be positive")

    @property
    def burst_rate(self) -> Fraction:
        return self.rate / as_rate(self.theta)

    def check(self, link: LinkConfig):
        if self.burst_rate > link.rho:
            raise ConfigError("attack.rate", "burst-phase rate exceeds link capacity")


@dataclass
class Scenario:
    link: LinkConfig
    background: BackgroundConfig
    attacks: list[AttackPattern]
    horizon_ns: int

    def __post_init__(self):
        self.background.check(self.link)
        for a in self.attacks:
            a.check(self.link)
        if self.horizon_ns <= 0:
            raise ConfigError("horizon", "must be positive")

    @property
    def spec(self) -> FlowSpec:
        return self.link.spec


@dataclass
class DamageReport:
    d_over: int = 0
    d_fp: int = 0
    detections: list = field(default_factory=list)
    fn_ratio: float = 0.0
    fp_count: int = 0
    attack_flows: int = 0
    packets: int = 0
    delivered_bytes: int = 0
    dropped_bytes: int = 0

    @property
    def damage(self) -> int:
        return self.d_over + self.d_fp


# -- schedules -------------------------------------------------------------

def periodic_times(phase: int, size: int, rate: Fraction, horizon: int) -> np.ndarray:
    """phase + floor(k * size / rate) for every k with time < horizon."""
    num, den = rate.numerator, rate.denominator
    step = size * NS * den
    count = 0 if phase >= horizon else ((horizon - phase) * num - 1) // step + 1
    k = np.arange(count, dtype=np.int64)
    if count and (count - 1) * step >= 1 << 62:
        return np.array([phase + (i * step) // num for i in range(count)], dtype=np.int64)
    return phase + (k * step) // num


def attack_times(p: AttackPattern, phase: int, horizon: int) -> np.ndarray:
    """On-off schedule: packets at the burst rate, mapped into the on windows.

    Packet j sits at cumulative on-time j*size/burst_rate; the map to wall
    time keeps the emitted bytes within one packet of rate*t.
    """
    end = horizon if p.duration_ns is None else min(horizon, p.start_ns + p.duration_ns)
    start = p.start_ns + phase
    if start >= end:
        return np.zeros(0, dtype=np.int64)
    on = p.theta * p.period_ns
    gap = float(p.size * NS / p.burst_rate)
    span = end - start
    n_on = span / p.period_ns * on + on
    j = np.arange(int(n_on / gap) + 2, dtype=np.float64)
    tau = j * gap
    k = np.floor(tau / on)
    t = start + np.floor(k * p.period_ns + (tau - k * on)).astype(np.int64)
    return t[t < end]


def _phases(rng: np.random.Generator, n: int, gap_ns: int) -> np.ndarray:
    return rng.integers(0, max(gap_ns, 1), size=n, dtype=np.int64)


def gen_background(cfg: BackgroundConfig, horizon: int, rng: np.random.Generator,
                   first_id: int = 1) -> Iterator[Packet]:
    gap = int(cfg.size * NS / cfg.rate)
    phases = _phases(rng, cfg.n, gap)
    times = [periodic_times(int(ph), cfg.size, cfg.rate, horizon) for ph in phases]
    yield from _merge([(first_id + i, cfg.size, t) for i, t in enumerate(times)])


def gen_attack(p: AttackPattern, horizon: int, rng: np.random.Generator,
               flow: int = ATTACK_BASE) -> Iterator[Packet]:
    phase = int(rng.integers(0, p.period_ns if p.theta < 1 else max(1, int(p.size * NS / p.rate))))
    yield from _merge([(flow, p.size, attack_times(p, phase, horizon))])


def _merge(sources) -> Iterator[Packet]:
    if not sources:
        return
    times = np.concatenate([t for _, _, t in sources])
    idx = np.concatenate([np.full(len(t), i, dtype=np.int64) for i, (_, _, t) in enumerate(sources)])
    order = np.lexsort((idx, times))
    flows = [f for f, _, _ in sources]
    sizes = [s for _, s, _ in sources]
    for i, t in zip(idx[order].tolist(), times[order].tolist()):
        yield Packet(flows[i], sizes[i], t)


# -- damage ----------------------------------------------------------------

def overuse_damage(sent: int, first_ns: int, end_ns: int, spec: FlowSpec) -> int:
    return max(0, sent - th(spec, max(0, end_ns - first_ns)))


def fp_damage(rate: Fraction, detect_ns: int, horizon_ns: int) -> int:
    return int(as_rate(rate) * max(0, horizon_ns - detect_ns) / NS)


def compute_damage(sent: int, first_ns: int, detect_ns: int | None, horizon_ns: int,
                   spec: FlowSpec, attack: bool, rate=None) -> tuple[int, int]:
    """(d_over, d_fp) contribution of one flow."""
    if attack:
        end = horizon_ns if detect_ns is None else min(detect_ns, horizon_ns)
        return overuse_damage(sent, first_ns, end, spec), 0
    if detect_ns is None:
        return 0, 0
    return 0, fp_damage(spec.gamma if rate is None else rate, detect_ns, horizon_ns)


# -- simulation ------------------------------------------------------------

@dataclass
class _Slots:
    flow: list            # current flow id per slot, -1 while a reserve is idle
    size: list
    attack: int           # slots [0, attack) are attackers
    reserve_of: dict      # attack slot -> reserve slot


def _build(scn: Scenario, rng: np.random.Generator):
    bg = scn.background
    horizon = scn.horizon_ns
    parts = []
    na = len(scn.attacks)
    for j, p in enumerate(scn.attacks):
        span = p.period_ns if p.theta < 1 else max(1, int(p.size * NS / p.rate))
        phase = int(rng.integers(0, span))
        parts.append(attack_times(p, phase, horizon))
    gap = int(bg.size * NS / bg.rate)
    reserve = na if bg.replacement else 0
    phases = _phases(rng, reserve + bg.n, gap)
    for ph in phases.tolist():
        parts.append(periodic_times(ph, bg.size, bg.rate, horizon))
    flows = [ATTACK_BASE + j for j in range(na)]
    flows += [-1] * reserve
    flows += list(range(1, bg.n + 1))
    sizes = [p.size for p in scn.attacks] + [bg.size] * (reserve + bg.n)
    slots = _Slots(flows, sizes, na, {j: na + j for j in range(reserve)})
    lens = [len(p) for p in parts]
    times = np.concatenate(parts) if parts else np.zeros(0, dtype=np.int64)
    sid = np.repeat(np.arange(len(parts), dtype=np.int64), lens)
    order = np.lexsort((sid, times))
    return times[order], sid[order], slots


class Recorder:
    """Collects the offered packet stream, e.g. to write a trace."""

    def __init__(self):
        self.packets: list[Packet] = []

    def __call__(self, flow, size, t):
        self.packets.append(Packet(flow, size, t))


def simulate(detector, scn: Scenario, rng: np.random.Generator, record=None,
             audit: dict | None = None) -> DamageReport:
    """Drive ``detector`` over the scenario; returns the damage report.

    ``record(flow, size, t)`` sees every offered packet.  If ``audit`` is a
    dict it is filled with per-flow generated/delivered/dropped byte counts.
    """
    times, sids, slots = _build(scn, rng)
    bl = getattr(detector, "blacklist", None)
    if bl is None:
        bl = Blacklist()
    entries = bl.entries
    observe = detector.observe
    horizon = scn.horizon_ns
    spec = scn.spec
    flow_of = slots.flow
    size_of = slots.size
    na = slots.attack
    next_id = scn.background.n + 1
    replace = scn.background.replacement
    sent = [0] * na
    first = [None] * na
    fp = []
    delivered = dropped = 0
    if audit is not None:
        for k in ("generated", "delivered", "dropped"):
            audit.setdefault(k, {})
        gen_a, del_a, drop_a = audit["generated"], audit["delivered"], audit["dropped"]
    n = len(times)
    for lo in range(0, n, CHUNK):
        for t, s in zip(times[lo:lo + CHUNK].tolist(), sids[lo:lo + CHUNK].tolist()):
            f = flow_of[s]
            if f < 0:
                continue
            sz = size_of[s]
            if record is not None:
                record(f, sz, t)
            if audit is not None:
                gen_a[f] = gen_a.get(f, 0) + sz
            if f in entries:
                dropped += sz
                if audit is not None:
                    drop_a[f] = drop_a.get(f, 0) + sz
                continue
            delivered += sz
            if audit is not None:
                del_a[f] = del_a.get(f, 0) + sz
            if s < na:
                sent[s] += sz
                if first[s] is None:
                    first[s] = t
            if observe(f, sz, t):
                bl.insert(f, t)
                if s < na:
                    r = slots.reserve_of.get(s)
                    if r is not None:
                        flow_of[r] = next_id
                        next_id += 1
                else:
                    fp.append((f, t))
                    if replace:
                        flow_of[s] = next_id
                        next_id += 1
    rep = DamageReport(packets=n, delivered_bytes=delivered, dropped_bytes=dropped,
                       attack_flows=na)
    missed = 0
    for j in range(na):
        f = ATTACK_BASE + j
        det = bl.time_of(f)
        if det is None:
            missed += 1
        if first[j] is not None:
            rep.d_over += compute_damage(sent[j], first[j], det, horizon, spec, True)[0]
    for f, t in fp:
        rep.d_fp += fp_damage(scn.background.rate, t, horizon)
    rep.fp_count = len(fp)
    rep.fn_ratio = missed / na if na else 0.0
    rep.detections = sorted(bl.entries.items(), key=lambda x: (x[1], x[0]))
    return rep


def run_stream(detector, packets: Iterable[Packet], spec: FlowSpec, horizon_ns: int,
               legit_rate=None, is_attack=lambda f: f >= ATTACK_BASE) -> DamageReport:
    """Replay a fixed packet stream (no replacement); attack flows by id."""
    bl = getattr(detector, "blacklist", None)
    if bl is None:
        bl = Blacklist()
    entries = bl.entries
    observe = detector.observe
    sent: dict[int, int] = {}
    first: dict[int, int] = {}
    fp = []
    n = delivered = dropped = 0
    last = None
    for f, sz, t in packets:
        if last is not None and t < last:
            raise StreamOrderError(f"time {t} before {last}")
        last = t
        n += 1
        if t >= horizon_ns:
            break
        if f in entries:
            dropped += sz
            continue
        delivered += sz
        atk = is_attack(f)
        if atk:
            sent[f] = sent.get(f, 0) + sz
            first.setdefault(f, t)
        if observe(f, sz, t):
            bl.insert(f, t)
            if not atk:
                fp.append((f, t))
    rep = DamageReport(packets=n, delivered_bytes=delivered, dropped_bytes=dropped,
                       attack_flows=len(first))
    missed = 0
    for f in first:
        det = bl.time_of(f)
        missed += det is None
        rep.d_over += compute_damage(sent[f], first[f], det, horizon_ns, spec, True)[0]
    rate = spec.gamma if legit_rate is None else legit_rate
    rep.d_fp = sum(fp_damage(rate, t, horizon_ns) for _, t in fp)
    rep.fp_count = len(fp)
    rep.fn_ratio = missed / len(first) if first else 0.0
    rep.detections = sorted(bl.entries.items(), key=lambda x: (x[1], x[0]))
    return rep


# -- traces ----------------------------------------------------------------

class TraceError(ValueError):
    def __init__(self, line: int, message: str):
        super().__init__(f"line {line}: {message}")
        self.line = line


def write_trace(packets: Iterable[Packet], path, header: bool = True):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        if header:
            fh.write("flow_id,timestamp_ns,size_bytes\n")
        for f, sz, t in packets:
            fh.write(f"{f},{t},{sz}\n")


def read_trace(path, max_packet: int = MAX_PACKET) -> Iterator[Packet]:
    """Parse and order-check a trace file lazily."""
    with open(path, encoding="utf-8") as fh:
        yield from parse_trace(fh, max_packet)


def parse_trace(lines: Iterable[str] | io.TextIOBase, max_packet: int = MAX_PACKET) -> Iterator[Packet]:
    last = 0
    for no, raw in enumerate(lines, 1):
        line = raw.strip()
        if not line:
            continue
        if no == 1 and line.startswith("flow_id"):
            continue
        parts = line.split(",")
        if len(parts) != 3:
            raise TraceError(no, f"expected 3 fields, got {len(parts)}")
        try:
            f, t, sz = (int(p) for p in parts)
        except ValueError:
            raise TraceError(no, f"non-integer field in {line!r}") from None
        if f < 0 or f >= 1 << 64:
            raise TraceError(no, "flow id out of range")
        if t < 0:
            raise TraceError(no, "negative timestamp")
        if not 1 <= sz <= max_packet:
            raise TraceError(no, f"packet size {sz} outside [1, {max_packet}]")
        if t < last:
            raise StreamOrderError(f"line {no}: timestamp {t} before {last}")
        last = t
        yield Packet(f, sz, t)


def replay_trace(path) -> Iterator[Packet]:
    return read_trace(path)


def load_trace(path: str | Path) -> list[Packet]:
    return list(read_trace(path))
