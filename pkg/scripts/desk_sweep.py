"""Run the desk-scale flat and bursty sweeps and print a per-cell table."""
import argparse
import time
from pathlib import Path

from clef.experiment import load_config, run_experiment, summarize

ROOT = Path(__file__).resolve().parents[1]


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("configs", nargs="*", type=Path,
                   default=[ROOT / "configs" / "desk_flat.toml", ROOT / "configs" / "desk_bursty.toml"])
    p.add_argument("--repeats", type=int)
    p.add_argument("--workers", type=int)
    args = p.parse_args()
    for path in args.configs:
        cfg = load_config(path)
        if args.repeats:
            cfg.run.repeats = args.repeats
        t0 = time.time()
        rows = summarize(run_experiment(cfg, workers=args.workers))
        gamma = cfg.link.gamma
        print(f"{path.name}: {time.time() - t0:.0f}s")
        print(f"{'detector':<8} {'R/gamma':>8} {'theta':>6} {'damage':>10} {'fn':>5}")
        for r in rows:
            print(f"{r['detector']:<8} {r['R_atk_bytes_s'] / gamma:>8g} {r['theta']:>6g} "
                  f"{r['damage']:>10.3g} {r['fn_ratio']:>5.2f}")


if __name__ == "__main__":
    main()
