"""Twin-RLFD and the CLEF composition (EARDet + two RLFDs, shared blacklist)."""
from __future__ import annotations

import csv
import random
from dataclasses import dataclass, replace
from importlib import resources

from .eardet import Eardet, EardetConfig
from .model import Blacklist, ConfigError, LinkConfig, as_rate, seconds
from .rlfd import Rlfd, RlfdConfig, cycle_lengths, default_depth


def twin_cycle2(d: int, gamma_h, alpha_target, gamma, cycle1_ns: int) -> int:
    """Second cycle length 2*d*gamma_h/(alpha*gamma) * T_c1, in ns."""
    gamma_h, alpha_target, gamma = as_rate(gamma_h), as_rate(alpha_target), as_rate(gamma)
    for name, v in (("d", d), ("gamma_h", gamma_h), ("alpha_target", alpha_target),
                    ("gamma", gamma), ("cycle1", cycle1_ns)):
        if v <= 0:
            raise ConfigError(name, "must be positive")
    return int(2 * d * gamma_h / (alpha_target * gamma) * cycle1_ns)


def twin_randomize_cycles(cycle_ns: int, jitter: float, rng: random.Random, count: int) -> list[int]:
    gen = cycle_lengths(cycle_ns, jitter, rng)
    return [next(gen) for _ in range(count)]


@dataclass(frozen=True)
class PresetRow:
    m: int
    level_s: float
    rlfd_d: int
    rlfd_cycle_s: float
    twin_d: int
    twin_cycle1_s: float
    twin_cycle2_s: float


def load_presets() -> dict[int, PresetRow]:
    text = resources.files("clef").joinpath("data/presets.csv").read_text()
    rows = {}
    for r in csv.DictReader(text.splitlines()):
        row = PresetRow(int(r["m"]), float(r["level_s"]), int(r["rlfd_d"]), float(r["rlfd_cycle_s"]),
                        int(r["twin_d"]), float(r["twin_cycle1_s"]), float(r["twin_cycle2_s"]))
        rows[row.m] = row
    return rows


@dataclass(frozen=True)
class TwinRlfdConfig:
    rlfd1: RlfdConfig
    rlfd2: RlfdConfig

    def __post_init__(self):
        if self.rlfd2.cycle_ns <= self.rlfd1.cycle_ns:
            raise ConfigError("rlfd2", "second cycle must be longer than the first")


class TwinRlfd:
    def __init__(self, config: TwinRlfdConfig, seed: int = 0, start: int = 0):
        self.config = config
        self.r1 = Rlfd(config.rlfd1, seed, start)
        self.r2 = Rlfd(config.rlfd2, seed + 1, start)

    def observe(self, flow: int, size: int, t: int) -> bool:
        a = self.r1.observe(flow, size, t)
        b = self.r2.observe(flow, size, t)
        return a or b

    def advance(self, now: int):
        return self.r1.advance(now) + self.r2.advance(now)

    def state_size(self) -> dict:
        return {"counters": self.config.rlfd1.m + self.config.rlfd2.m}


@dataclass(frozen=True)
class ClefConfig:
    eardet: EardetConfig
    twin: TwinRlfdConfig

    @property
    def m(self) -> int:
        return self.eardet.m + self.twin.rlfd1.m + self.twin.rlfd2.m

    @classmethod
    def build(cls, m: int, link: LinkConfig, n: int | None = None, jitter: float = 0.1,
              alpha_target=100, preset: PresetRow | None = None, beta_th: int | None = None):
        """Split m counters: m/2 to EARDet, the rest to two RLFDs.

        With a preset the depth and both cycle lengths come from the table
        verbatim; otherwise depth follows the default rule for n flows and the
        second cycle is derived from ``alpha_target``.
        """
        if m < 8:
            raise ConfigError("m", "CLEF needs at least 8 counters")
        n = link.n_gamma if n is None else n
        me = m // 2
        m1 = (m - me) // 2
        m2 = m - me - m1
        ecfg = EardetConfig.for_link(me, link, beta_th=beta_th)
        spec = link.spec
        if preset is not None:
            d = preset.twin_d
            c1 = seconds(preset.twin_cycle1_s)
            c2 = seconds(preset.twin_cycle2_s)
        else:
            d = default_depth(min(m1, m2), n)
            c1 = d * spec.level_ns
            c2 = twin_cycle2(d, ecfg.gamma_h, alpha_target, spec.gamma, c1)
        r1 = RlfdConfig(m=m1, d=d, level_ns=c1 // d, spec=spec, jitter=jitter)
        r2 = RlfdConfig(m=m2, d=d, level_ns=c2 // d, spec=spec, jitter=jitter)
        return cls(ecfg, TwinRlfdConfig(r1, r2))


class Clef:
    """Union of EARDet and Twin-RLFD; the first component to fire wins."""

    def __init__(self, config: ClefConfig, seed: int = 0, blacklist: Blacklist | None = None,
                 start: int = 0):
        self.config = config
        self.eardet = Eardet(config.eardet)
        self.twin = TwinRlfd(config.twin, seed, start)
        self.blacklist = Blacklist() if blacklist is None else blacklist
        self.detected_by: dict[int, str] = {}
        self._entries = self.blacklist.entries
        self._parts = (self.eardet.observe, self.twin.r1.observe, self.twin.r2.observe)

    def observe(self, flow: int, size: int, t: int) -> bool:
        if flow in self._entries:
            return False
        pe, p1, p2 = self._parts
        e = pe(flow, size, t)
        a = p1(flow, size, t)
        b = p2(flow, size, t)
        if e or a or b:
            self.blacklist.insert(flow, t)
            self.detected_by[flow] = "eardet" if e else ("rlfd1" if a else "rlfd2")
            return True
        return False

    def process(self, pkt):
        return pkt.flow if self.observe(pkt.flow, pkt.size, pkt.time) else None

    def state_size(self) -> dict:
        return {"counters": self.config.m}


def with_jitter(cfg: ClefConfig, jitter: float) -> ClefConfig:
    t = cfg.twin
    return ClefConfig(cfg.eardet, TwinRlfdConfig(replace(t.rlfd1, jitter=jitter),
                                                 replace(t.rlfd2, jitter=jitter)))

