"""Experiment configuration, detector factory and sweep runner."""
from __future__ import annotations

import csv
import json
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from fractions import Fraction
from pathlib import Path

import numpy as np
import tomli

from . import __version__
from .baselines import Amf, AmfConfig, AmfFm, FlowMemory, FmConfig
from .eardet import Eardet, EardetConfig
from .hybrid import Clef, ClefConfig, TwinRlfd, TwinRlfdConfig, load_presets, twin_cycle2
from .model import MAX_PACKET, NS, ConfigError, FlowSpec, LinkConfig, as_rate, seconds
from .rlfd import Rlfd, RlfdConfig, default_depth
from .traffic import (AttackPattern, BackgroundConfig, DamageReport, Recorder, Scenario,
                      read_trace, run_stream, simulate, write_trace)

DETECTORS = ("eardet", "rlfd", "twin_rlfd", "clef", "amf", "fm", "amf_fm")
RUN_COLUMNS = ["run_id", "detector", "m", "R_atk_bytes_s", "theta", "T_b_ns", "d_over", "d_fp",
               "fn_ratio", "fp_count", "seed"]
SUMMARY_COLUMNS = ["detector", "m", "R_atk_bytes_s", "theta", "T_b_ns", "repeats", "d_over",
                   "d_fp", "damage", "fn_ratio", "fp_count"]


@dataclass
class LinkSection:
    rho: float = 125_000_000
    gamma: float = 12_500
    beta: int = 3028
    max_packet: int = MAX_PACKET


@dataclass
class BackgroundSection:
    rate: float | None = None          # None: gamma ("full-use")
    size: int = 1000
    flows: int | None = None           # None: n_gamma minus attack flows
    replacement: bool = True


@dataclass
class DetectorSection:
    names: list = field(default_factory=lambda: ["clef"])
    m: int = 200
    preset: str = "builtin"            # "builtin" or "formula"
    jitter: float = 0.1
    alpha_target: float = 100
    stages: int = 4
    beta_th: int | None = None
    expected_flows: int | None = None  # None: n_gamma


@dataclass
class AttackSection:
    flows: int = 10
    rates: list = field(default_factory=lambda: [1, 3, 10, 30, 100, 300, 1000])  # multiples of gamma
    thetas: list = field(default_factory=lambda: [1.0])
    period: float | None = None        # seconds; None: 4*beta/gamma
    size: int = MAX_PACKET


@dataclass
class RunSection:
    horizon: float = 200.0
    repeats: int = 50
    seed: int = 0
    workers: int = 1
    engine: str = "auto"               # "auto", "python" or "compiled"


@dataclass
class BoundsSection:
    m: int = 100
    n_gamma: float = 100_000
    n: list = field(default_factory=lambda: [100_000, 1_000_000])
    alphas: list = field(default_factory=lambda: [10, 50, 100, 152, 303, 500])
    theta: float = 1.0
    # twin-damage inputs; defaults are the 40 Gbps / 400 Kbps example
    twin_m: int = 50
    twin_gamma: float = 50_000
    twin_rho: float = 5e9
    twin_eardet_m: int = 100
    twin_d: int = 4
    twin_cycle1: float = 0.1
    twin_cycle2: float = 7.92
    twin_theta: float = 0.25
    twin_alphas: list = field(default_factory=lambda: [10, 30, 99, 250])


@dataclass
class OracleSection:
    m: list = field(default_factory=lambda: [32, 100])
    n: list = field(default_factory=lambda: [1000, 10_000, 100_000])
    alphas: list | None = None         # None: alpha_half/2, alpha_half, alpha_one, 2*alpha_one
    profiles: list = field(default_factory=lambda: [1.0])  # legit rate in units of gamma
    trials: int = 2000


@dataclass
class ExperimentConfig:
    link: LinkSection = field(default_factory=LinkSection)
    background: BackgroundSection = field(default_factory=BackgroundSection)
    detector: DetectorSection = field(default_factory=DetectorSection)
    attack: AttackSection = field(default_factory=AttackSection)
    run: RunSection = field(default_factory=RunSection)
    bounds: BoundsSection = field(default_factory=BoundsSection)
    oracle: OracleSection = field(default_factory=OracleSection)

    # -- derived ------------------------------------------------------------
    @property
    def spec(self) -> FlowSpec:
        return FlowSpec(as_rate(self.link.gamma), self.link.beta)

    @property
    def link_config(self) -> LinkConfig:
        return LinkConfig(as_rate(self.link.rho), self.spec)

    @property
    def period_ns(self) -> int:
        if self.attack.period is None:
            return 4 * self.spec.level_ns
        return seconds(self.attack.period)

    @property
    def horizon_ns(self) -> int:
        return seconds(self.run.horizon)

    def background_config(self) -> BackgroundConfig:
        b = self.background
        rate = self.spec.gamma if b.rate is None else as_rate(b.rate)
        n = b.flows
        if n is None:
            n = int(self.link_config.rho // rate) - self.attack.flows
        return BackgroundConfig(max(n, 0), rate, b.size, b.replacement)

    def validate(self):
        link = self.link_config
        if not self.attack.rates:
            raise ConfigError("attack.rates", "grid is empty")
        if not self.attack.thetas:
            raise ConfigError("attack.thetas", "grid is empty")
        if not self.detector.names:
            raise ConfigError("detector.names", "no detector selected")
        for name in self.detector.names:
            if name not in DETECTORS:
                raise ConfigError("detector.names", f"unknown detector {name!r}")
        if self.detector.preset not in ("builtin", "formula"):
            raise ConfigError("detector.preset", "must be 'builtin' or 'formula'")
        if self.run.engine not in ("auto", "python", "compiled"):
            raise ConfigError("run.engine", "must be auto, python or compiled")
        if self.run.repeats < 1:
            raise ConfigError("run.repeats", "must be at least 1")
        if self.run.horizon <= 0:
            raise ConfigError("run.horizon", "must be positive")
        if self.attack.flows < 0:
            raise ConfigError("attack.flows", "must be non-negative")
        self.background_config().check(link)
        for r in self.attack.rates:
            for th_ in self.attack.thetas:
                self.pattern(r, th_).check(link)
        for name in self.detector.names:
            make_detector(name, self, seed=0)

    def pattern(self, rate_mult, theta) -> AttackPattern:
        return AttackPattern(as_rate(rate_mult) * self.spec.gamma, theta, self.period_ns,
                             size=self.attack.size)

    def scenario(self, rate_mult, theta) -> Scenario:
        return Scenario(self.link_config, self.background_config(),
                        [self.pattern(rate_mult, theta)] * self.attack.flows, self.horizon_ns)

    def to_dict(self) -> dict:
        return asdict(self)


def _section(cls, data: dict, name: str):
    known = {f.name for f in fields(cls)}
    extra = set(data) - known
    if extra:
        raise ConfigError(f"{name}.{sorted(extra)[0]}", "unknown key")
    proto = cls()
    for k, v in data.items():
        _check_type(f"{name}.{k}", getattr(proto, k), v)
    return cls(**data)


def _check_type(key: str, default, value):
    number = (int, float)
    if value is None and default is None:
        return
    if isinstance(default, bool) or isinstance(value, bool):
        if not (isinstance(default, bool) and isinstance(value, bool)):
            raise ConfigError(key, f"expected {type(default).__name__}, got {value!r}")
    elif isinstance(default, list):
        if not isinstance(value, list):
            raise ConfigError(key, "expected a list")
        if not all(isinstance(x, (str,) + number) for x in value):
            raise ConfigError(key, "list entries must be numbers or strings")
    elif isinstance(default, str):
        if not isinstance(value, str):
            raise ConfigError(key, "expected a string")
    elif isinstance(default, int) and not isinstance(default, bool):
        if not isinstance(value, int):
            raise ConfigError(key, "expected an integer")
    elif isinstance(default, float) or default is None:
        if not isinstance(value, number + (list,)):
            raise ConfigError(key, "expected a number")


def config_from_dict(data: dict) -> ExperimentConfig:
    sections = {"link": LinkSection, "background": BackgroundSection,
                "detector": DetectorSection, "attack": AttackSection, "run": RunSection,
                "bounds": BoundsSection, "oracle": OracleSection}
    extra = set(data) - set(sections)
    if extra:
        raise ConfigError(sorted(extra)[0], "unknown section")
    try:
        parts = {k: _section(cls, data.get(k, {}), k) for k, cls in sections.items()}
    except TypeError as e:
        raise ConfigError("config", str(e)) from None
    return ExperimentConfig(**parts)


def load_config(path) -> ExperimentConfig:
    try:
        with open(path, "rb") as fh:
            data = tomli.load(fh)
    except tomli.TOMLDecodeError as e:
        raise ConfigError(str(path), f"parse error: {e}") from None
    return config_from_dict(data)


# -- detectors -------------------------------------------------------------

def _preset(cfg: ExperimentConfig, m: int):
    if cfg.detector.preset != "builtin":
        return None
    return load_presets().get(m)


def make_detector(name: str, cfg: ExperimentConfig, seed: int):
    link = cfg.link_config
    spec = link.spec
    d = cfg.detector
    m = d.m
    n = d.expected_flows or link.n_gamma
    if name == "eardet":
        return Eardet(EardetConfig.for_link(m, link, beta_th=d.beta_th))
    if name == "rlfd":
        row = _preset(cfg, m)
        if row is not None:
            rc = RlfdConfig(m=m, d=row.rlfd_d, level_ns=seconds(row.rlfd_cycle_s) // row.rlfd_d,
                            spec=spec)
        else:
            rc = RlfdConfig.for_flows(m, n, spec)
        return Rlfd(rc, seed)
    if name == "twin_rlfd":
        m1 = m // 2
        depth = default_depth(m1, n)
        c1 = depth * spec.level_ns
        c2 = twin_cycle2(depth, link.gamma_h(m - m1), d.alpha_target, spec.gamma, c1)
        tc = TwinRlfdConfig(RlfdConfig(m1, depth, c1 // depth, spec, d.jitter),
                            RlfdConfig(m - m1, depth, c2 // depth, spec, d.jitter))
        return TwinRlfd(tc, seed)
    if name == "clef":
        cc = ClefConfig.build(m, link, n, d.jitter, d.alpha_target, _preset(cfg, m), d.beta_th)
        return Clef(cc, seed)
    if name == "amf":
        return Amf(AmfConfig(m, spec, d.stages), seed)
    if name == "fm":
        return FlowMemory(FmConfig(m, spec), seed)
    if name == "amf_fm":
        return AmfFm.with_total(m, spec, seed, d.stages)
    raise ConfigError("detector.names", f"unknown detector {name!r}")


def run_simulation(detector, scn: Scenario, rng, engine: str = "auto") -> DamageReport:
    if engine != "python":
        from .fastpath import simulate_fast, supports
        if supports(detector):
            return simulate_fast(detector, scn, rng)
        if engine == "compiled":
            raise ConfigError("run.engine", f"no compiled path for {type(detector).__name__}")
    return simulate(detector, scn, rng)


# -- sweep -----------------------------------------------------------------

@dataclass(frozen=True)
class RunSpec:
    run_id: int
    detector: str
    rate_mult: float
    theta: float
    repeat: int
    seed: int


def run_seed(master: int, rate_idx: int, theta_idx: int, repeat: int) -> int:
    ss = np.random.SeedSequence([master, rate_idx, theta_idx, repeat])
    return int(ss.generate_state(1, dtype=np.uint64)[0] >> 1)


def expand(cfg: ExperimentConfig) -> list[RunSpec]:
    runs = []
    for name in cfg.detector.names:
        for ri, r in enumerate(cfg.attack.rates):
            for ti, th_ in enumerate(cfg.attack.thetas):
                for k in range(cfg.run.repeats):
                    runs.append(RunSpec(len(runs), name, r, th_, k,
                                        run_seed(cfg.run.seed, ri, ti, k)))
    return runs


def row_for(cfg: ExperimentConfig, spec: RunSpec, rep: DamageReport) -> dict:
    return {
        "run_id": spec.run_id,
        "detector": spec.detector,
        "m": cfg.detector.m,
        "R_atk_bytes_s": _num(as_rate(spec.rate_mult) * cfg.spec.gamma),
        "theta": spec.theta,
        "T_b_ns": cfg.period_ns,
        "d_over": rep.d_over,
        "d_fp": rep.d_fp,
        "fn_ratio": rep.fn_ratio,
        "fp_count": rep.fp_count,
        "seed": spec.seed,
    }


def _num(x: Fraction):
    return int(x) if x.denominator == 1 else float(x)


def run_one(cfg: ExperimentConfig, spec: RunSpec, trace_dir=None) -> dict:
    """Run one grid cell; with ``trace_dir`` the offered stream is saved too."""
    scn = cfg.scenario(spec.rate_mult, spec.theta)
    det = make_detector(spec.detector, cfg, spec.seed)
    rng = np.random.default_rng(spec.seed)
    if trace_dir is not None:
        rec = Recorder()
        rep = simulate(det, scn, rng, record=rec)
        write_trace(rec.packets, Path(trace_dir) / f"run_{spec.run_id}.csv")
    else:
        rep = run_simulation(det, scn, rng, cfg.run.engine)
    return row_for(cfg, spec, rep)


def _run_packed(args):
    cfg_dict, spec, trace_dir = args
    return run_one(config_from_dict(cfg_dict), spec, trace_dir)


def run_experiment(cfg: ExperimentConfig, workers: int | None = None,
                   trace_dir=None) -> list[dict]:
    cfg.validate()
    runs = expand(cfg)
    workers = cfg.run.workers if workers is None else workers
    if trace_dir is not None:
        Path(trace_dir).mkdir(parents=True, exist_ok=True)
    if workers <= 1:
        return [run_one(cfg, s, trace_dir) for s in runs]
    payload = [(cfg.to_dict(), s, trace_dir) for s in runs]
    with ProcessPoolExecutor(max_workers=workers) as ex:
        rows = list(ex.map(_run_packed, payload))
    return sorted(rows, key=lambda r: r["run_id"])


def summarize(rows: list[dict]) -> list[dict]:
    groups: dict[tuple, list[dict]] = {}
    for r in rows:
        key = (r["detector"], r["m"], r["R_atk_bytes_s"], r["theta"], r["T_b_ns"])
        groups.setdefault(key, []).append(r)
    out = []
    for key, rs in groups.items():
        k = len(rs)
        d_over = sum(r["d_over"] for r in rs) / k
        d_fp = sum(r["d_fp"] for r in rs) / k
        out.append(dict(zip(SUMMARY_COLUMNS[:5], key), repeats=k, d_over=d_over, d_fp=d_fp,
                        damage=d_over + d_fp, fn_ratio=sum(r["fn_ratio"] for r in rs) / k,
                        fp_count=sum(r["fp_count"] for r in rs) / k))
    return out


def metadata(cfg: ExperimentConfig | None, extra: dict | None = None) -> list[str]:
    lines = [f"tool: clef {__version__}"]
    if cfg is not None:
        lines.append(f"seed: {cfg.run.seed}")
        lines.append("config: " + json.dumps(cfg.to_dict(), sort_keys=True))
        lines.append("fp_damage: blocked from detection until horizon")
    for k, v in (extra or {}).items():
        lines.append(f"{k}: {v}")
    return lines


def write_csv(path, rows: list[dict], columns: list[str], meta: list[str], trailer: list[str] = ()):
    path = Path(path)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        for line in meta:
            fh.write(f"# {line}\n")
        w = csv.DictWriter(fh, fieldnames=columns, lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({c: r[c] for c in columns})
        for line in trailer:
            fh.write(f"# {line}\n")


def read_csv_rows(path) -> list[dict]:
    with open(path, encoding="utf-8") as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    return list(csv.DictReader(lines))


def replay(cfg: ExperimentConfig, trace, seed: int) -> tuple[list[dict], float]:
    """Run every configured detector over a trace; returns rows and packets/s."""
    rows = []
    rate = cfg.attack.rates[0]
    theta = cfg.attack.thetas[0]
    packets = list(read_trace(trace, cfg.link.max_packet))
    legit_rate = cfg.background_config().rate
    elapsed = 0.0
    for name in cfg.detector.names:
        det = make_detector(name, cfg, seed)
        t0 = time.perf_counter()
        rep = run_stream(det, packets, cfg.spec, cfg.horizon_ns, legit_rate)
        elapsed += time.perf_counter() - t0
        spec = RunSpec(len(rows), name, rate, theta, 0, seed)
        rows.append(row_for(cfg, spec, rep))
    pps = len(packets) * len(cfg.detector.names) / elapsed if elapsed > 0 else float("inf")
    return rows, pps


# -- bounds and oracle tables ---------------------------------------------

BOUNDS_COLUMNS = ["kind", "m", "n", "n_gamma", "alpha", "theta", "value", "status"]
ORACLE_COLUMNS = ["m", "n", "alpha", "profile", "estimate", "stderr", "bound", "bound_satisfied"]


def bounds_rows(sec: BoundsSection) -> list[dict]:
    from . import bounds as bd
    rows = []

    def add(kind, value, status="ok", **kw):
        row = dict.fromkeys(BOUNDS_COLUMNS, "")
        row.update(kind=kind, value=value, status=status, **kw)
        rows.append(row)

    m, ng = sec.m, sec.n_gamma
    add("alpha_half", bd.alpha_half(m, ng), m=m, n=ng, n_gamma=ng)
    add("alpha_one", bd.alpha_one(m, ng), m=m, n=ng, n_gamma=ng)
    for a in sec.alphas:
        add("single_level", bd.single_level_bound(m, ng, a), m=m, n=ng, n_gamma=ng, alpha=a)
        for n in sec.n:
            add("total_detection", bd.total_detection_bound(m, n, ng, a), m=m, n=n, n_gamma=ng,
                alpha=a)
    rho = sec.twin_rho
    for a in sec.twin_alphas:
        for tb_label, tb in (("short", sec.twin_cycle1), ("long", 4 * sec.twin_cycle1 / sec.twin_theta)):
            kw = dict(m=sec.twin_m, n=rho / sec.twin_gamma, n_gamma=rho / sec.twin_gamma,
                      alpha=a, theta=sec.twin_theta)
            try:
                b = bd.BoundInputs(sec.twin_m, rho / sec.twin_gamma, rho / sec.twin_gamma, a,
                                   sec.twin_theta, tb, sec.twin_d, sec.twin_cycle1,
                                   sec.twin_cycle2, sec.twin_gamma,
                                   rho / (sec.twin_eardet_m + 1), rho)
                add(f"twin_damage_{tb_label}", bd.twin_damage_bound(b), **kw)
            except bd.DomainError as e:
                add(f"twin_damage_{tb_label}", "", status=f"precondition: {e}", **kw)
    for k, v in bd.r_min_curves(m, ng, sec.theta, float(as_rate(rho))).items():
        add(f"r_min_{k}", v, m=m, n_gamma=ng, theta=sec.theta)
    return rows


def oracle_alphas(m: int, n: float) -> list[float]:
    from .bounds import alpha_half, alpha_one
    return [alpha_half(m, n) / 2, alpha_half(m, n), alpha_one(m, n), 2 * alpha_one(m, n)]


def oracle_rows(sec: OracleSection, seed: int) -> list[dict]:
    from .bounds import monte_carlo_single_level, single_level_bound
    if sec.trials < 100:
        raise ConfigError("oracle.trials", "need at least 100 trials")
    rows = []
    for i, (m, n) in enumerate((m, n) for m in sec.m for n in sec.n):
        alphas = sec.alphas if sec.alphas is not None else oracle_alphas(m, n)
        for j, a in enumerate(alphas):
            bound = single_level_bound(m, n, a)
            for k, prof in enumerate(sec.profiles):
                rng = np.random.default_rng(np.random.SeedSequence([seed, i, j, k]))
                est, se = monte_carlo_single_level(m, n, a, prof, sec.trials, rng)
                rows.append({"m": m, "n": n, "alpha": a, "profile": prof, "estimate": est,
                             "stderr": se, "bound": bound,
                             "bound_satisfied": est >= bound - 3 * se - 0.02})
    return rows


__all__ = ["ExperimentConfig", "load_config", "config_from_dict", "make_detector", "expand",
           "run_experiment", "run_one", "summarize", "write_csv", "replay", "NS"]
