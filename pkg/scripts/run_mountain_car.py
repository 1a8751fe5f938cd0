#!/usr/bin/env python3
"""Verify the bundled mountain-car benchmark and score against ground truth.

Runs the partition pipeline on F[0,10] (x0 > 0.45) over the initial-state
box [-0.7, 0.2] x [-0.5, 0.5], then compares the Safe-labeled regions to a
dense simulation grid. Writes result files to --out-dir.
"""

import argparse
import collections
import time

import numpy as np

from cverify.boxopt import OptimizerCfg
from cverify.partition import PartitionConfig, root_region, verify
from cverify.report import write_outputs
from cverify.signals import ParamBox
from cverify.sim import builtin, sample_times
from cverify.stl import parse

SPEC = "F[0,10] (x0 > 0.45)"
BOX = ParamBox(np.array([-0.7, -0.5]), np.array([0.2, 0.5]))


def ground_truth_grid(n: int = 200) -> tuple[np.ndarray, np.ndarray]:
    sim = builtin("mountain-car")
    xs = np.linspace(BOX.lower[0], BOX.upper[0], n)
    vs = np.linspace(BOX.lower[1], BOX.upper[1], n)
    grid = np.stack(np.meshgrid(xs, vs, indexing="ij"), axis=-1).reshape(-1, 2)
    out = sim.simulate_batch(grid, sample_times(10.0))
    rho = out[:, :, 0].max(axis=1) - 0.45
    return grid, rho


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--alpha", type=float, default=0.05)
    ap.add_argument("--sims-per-region", type=int, default=100)
    ap.add_argument("--strategy", default="naive",
                    choices=("naive", "greatest-uncertainty", "root-split"))
    ap.add_argument("--delta-min", type=float, default=0.02)
    ap.add_argument("--max-regions", type=int, default=6000)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--workers", type=int, default=1)
    ap.add_argument("--out-dir", default="out/mountain-car")
    ap.add_argument("--skip-truth", action="store_true",
                    help="skip the dense ground-truth comparison")
    args = ap.parse_args()

    cfg = PartitionConfig(
        alpha=args.alpha,
        sims_per_region=args.sims_per_region,
        strategy=args.strategy,
        delta_min=args.delta_min,
        max_regions=args.max_regions,
        seed=args.seed,
        workers=args.workers,
        optimizer=OptimizerCfg(starts=16, sweeps=6),
    )
    t0 = time.time()
    result = verify(builtin("mountain-car"), parse(SPEC), root_region(BOX), cfg)
    elapsed = time.time() - t0

    counts = collections.Counter(r.verdict for r in result.regions)
    vol = collections.defaultdict(float)
    for r in result.regions:
        vol[r.verdict] += r.region.box.volume() / BOX.volume()
    print(f"{len(result.regions)} regions in {elapsed:.1f}s "
          f"({result.total_sims} sims, exhausted={result.exhausted})")
    for verdict in ("Safe", "Unsafe", "Unknown", "Failed"):
        if counts[verdict]:
            print(f"  {verdict:8s} {counts[verdict]:6d} regions  "
                  f"{100 * vol[verdict]:6.2f}% volume")

    paths = write_outputs(result, BOX, args.out_dir)
    print("wrote", ", ".join(paths))

    if not args.skip_truth:
        grid, rho = ground_truth_grid()
        truth_safe = rho > 0
        in_safe = np.zeros(len(grid), dtype=bool)
        for r in result.regions:
            if r.verdict == "Safe":
                b = r.region.box
                in_safe |= ((grid >= b.lower) & (grid <= b.upper)).all(axis=1)
        print(f"ground truth: {truth_safe.mean():.1%} of the box is safe")
        print(f"  truth-safe points inside Safe regions: "
              f"{in_safe[truth_safe].mean():.1%}")
        if in_safe.any():
            print(f"  Safe-region purity: {truth_safe[in_safe].mean():.1%}")


if __name__ == "__main__":
    main()
