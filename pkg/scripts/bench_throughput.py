"""Time CLEF (m=200, preset row) over a synthetic saturated 1 Gbps link."""
import argparse
import time

import numpy as np

from clef.fastpath import simulate_fast
from clef.hybrid import Clef, ClefConfig, load_presets
from clef.model import NS, FlowSpec, LinkConfig
from clef.traffic import AttackPattern, BackgroundConfig, Scenario


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--seconds", type=float, default=81.0, help="simulated horizon")
    p.add_argument("--seed", type=int, default=0)
    args = p.parse_args()
    link = LinkConfig(125_000_000, FlowSpec(12_500, 3028))
    cfg = ClefConfig.build(200, link, preset=load_presets()[200])
    scn = Scenario(link, BackgroundConfig(link.n_gamma - 10, 12_500),
                   [AttackPattern(100 * 12_500)] * 10, int(args.seconds * NS))
    # first call compiles the kernels
    simulate_fast(Clef(cfg, args.seed), Scenario(link, scn.background, scn.attacks, NS),
                  np.random.default_rng(args.seed))
    t0 = time.perf_counter()
    rep = simulate_fast(Clef(cfg, args.seed), scn, np.random.default_rng(args.seed))
    dt = time.perf_counter() - t0
    print(f"{rep.packets} packets in {dt:.2f}s: {rep.packets / dt / 1e6:.2f} M packets/s")


if __name__ == "__main__":
    main()
