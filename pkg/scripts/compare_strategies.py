#!/usr/bin/env python3
"""Compare the three split strategies on the mountain-car benchmark.

Prints a table of region counts, verdict volumes, simulator calls, and
wall time per strategy at matched settings.
"""

import argparse
import collections
import time

import numpy as np

from cverify.boxopt import OptimizerCfg
from cverify.partition import STRATEGIES, PartitionConfig, root_region, verify
from cverify.signals import ParamBox
from cverify.sim import builtin
from cverify.stl import parse

SPEC = "F[0,10] (x0 > 0.45)"
BOX = ParamBox(np.array([-0.7, -0.5]), np.array([0.2, 0.5]))


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--alpha", type=float, default=0.05)
    ap.add_argument("--sims-per-region", type=int, default=100)
    ap.add_argument("--delta-min", type=float, default=0.05)
    ap.add_argument("--max-regions", type=int, default=4000)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--workers", type=int, default=1)
    args = ap.parse_args()

    sim = builtin("mountain-car")
    phi = parse(SPEC)

    header = (f"{'strategy':24s} {'regions':>8s} {'sims':>9s} {'time':>7s} "
              f"{'safe%':>7s} {'unsafe%':>8s} {'unknown%':>9s} {'exhausted':>10s}")
    print(header)
    print("-" * len(header))
    for strategy in STRATEGIES:
        cfg = PartitionConfig(
            alpha=args.alpha,
            sims_per_region=args.sims_per_region,
            strategy=strategy,
            delta_min=args.delta_min,
            max_regions=args.max_regions,
            seed=args.seed,
            workers=args.workers,
            optimizer=OptimizerCfg(starts=16, sweeps=6),
        )
        t0 = time.time()
        result = verify(sim, phi, root_region(BOX), cfg)
        elapsed = time.time() - t0
        vol = collections.defaultdict(float)
        for r in result.regions:
            vol[r.verdict] += r.region.box.volume() / BOX.volume()
        print(f"{strategy:24s} {len(result.regions):8d} "
              f"{result.total_sims:9d} {elapsed:6.1f}s "
              f"{100 * vol['Safe']:6.2f}% {100 * vol['Unsafe']:7.2f}% "
              f"{100 * vol['Unknown']:8.2f}% {str(result.exhausted):>10s}")


if __name__ == "__main__":
    main()
