"""Command-line front end: simulate, bounds, oracle and replay."""
from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .experiment import (BOUNDS_COLUMNS, ORACLE_COLUMNS, RUN_COLUMNS, SUMMARY_COLUMNS,
                         ExperimentConfig, bounds_rows, load_config, metadata, oracle_rows, replay,
                         run_experiment, summarize, write_csv)
from .model import ConfigError, StreamOrderError
from .traffic import TraceError

EXIT_OK, EXIT_CONFIG, EXIT_IO, EXIT_INTERNAL = 0, 2, 3, 4


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="clef", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", type=Path, help="TOML experiment file")
        sp.add_argument("--out", type=Path, default=Path("out"), help="output directory")
        sp.add_argument("--seed", type=int, help="master seed (overrides config)")
        sp.add_argument("--repeats", type=int)
        sp.add_argument("--workers", type=int)
        sp.add_argument("--horizon-seconds", type=float)
        return sp

    s = common(sub.add_parser("simulate", help="run the attack sweep"))
    s.add_argument("--write-traces", action="store_true",
                   help="also save each run's offered packet stream under OUT/traces")
    common(sub.add_parser("bounds", help="evaluate analytical bounds"))
    o = common(sub.add_parser("oracle", help="Monte-Carlo estimates against the bound"))
    o.add_argument("--trials", type=int)
    r = common(sub.add_parser("replay", help="run detectors over a packet trace"))
    r.add_argument("--trace", type=Path, required=True)
    return p


def _config(args) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    if args.seed is not None:
        if not 0 <= args.seed < 1 << 64:
            raise ConfigError("seed", "must fit in an unsigned 64-bit integer")
        cfg.run.seed = args.seed
    if args.repeats is not None:
        cfg.run.repeats = args.repeats
    if args.workers is not None:
        cfg.run.workers = args.workers
    if args.horizon_seconds is not None:
        cfg.run.horizon = args.horizon_seconds
    if getattr(args, "trials", None) is not None:
        cfg.oracle.trials = args.trials
    return cfg


def _outdir(path: Path) -> Path:
    path.mkdir(parents=True, exist_ok=True)
    probe = path / ".write-test"
    probe.write_text("")
    probe.unlink()
    return path


def cmd_simulate(cfg: ExperimentConfig, out: Path, traces: bool = False) -> int:
    cfg.validate()
    out = _outdir(out)
    rows = run_experiment(cfg, trace_dir=out / "traces" if traces else None)
    meta = metadata(cfg)
    write_csv(out / "runs.csv", rows, RUN_COLUMNS, meta)
    write_csv(out / "summary.csv", summarize(rows), SUMMARY_COLUMNS, meta)
    return EXIT_OK


def cmd_bounds(cfg: ExperimentConfig, out: Path) -> int:
    out = _outdir(out)
    write_csv(out / "bounds.csv", bounds_rows(cfg.bounds), BOUNDS_COLUMNS, metadata(cfg))
    return EXIT_OK


def cmd_oracle(cfg: ExperimentConfig, out: Path) -> int:
    rows = oracle_rows(cfg.oracle, cfg.run.seed)
    out = _outdir(out)
    write_csv(out / "oracle.csv", rows, ORACLE_COLUMNS, metadata(cfg))
    return EXIT_OK


def cmd_replay(cfg: ExperimentConfig, out: Path, trace: Path) -> int:
    cfg.validate()
    out = _outdir(out)
    rows, pps = replay(cfg, trace, cfg.run.seed)
    write_csv(out / "replay.csv", rows, RUN_COLUMNS, metadata(cfg, {"trace": trace.name}),
              trailer=[f"packets_per_second: {pps:.1f}"])
    return EXIT_OK


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = _config(args)
        if args.command == "simulate":
            return cmd_simulate(cfg, args.out, args.write_traces)
        if args.command == "bounds":
            return cmd_bounds(cfg, args.out)
        if args.command == "oracle":
            return cmd_oracle(cfg, args.out)
        return cmd_replay(cfg, args.out, args.trace)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (TraceError, StreamOrderError) as e:
        print(f"trace error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as e:
        print(f"I/O error: {e}", file=sys.stderr)
        return EXIT_IO
    except Exception as e:  # invariant violations and bugs
        print(f"internal error: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
