"""Every regularizer against the baseline on the synthetic novel split.

Prints seed-averaged PredCls R@1 on trainval (seen categories) and test
(novel categories) with the change relative to the baseline, plus the
union-branch contribution (full score minus the union-free score).
Takes about three minutes on one core for five seeds.
"""

import argparse
import logging

from adglab.experiment import VARIANTS, compare_variants

ap = argparse.ArgumentParser()
ap.add_argument("--seeds", type=int, default=5)
ap.add_argument("--steps", type=int, default=None)
args = ap.parse_args()
logging.basicConfig(level=logging.WARNING)

overrides = {"steps": args.steps} if args.steps else None
cmp = compare_variants(VARIANTS, range(args.seeds), train_overrides=overrides,
                       progress=lambda seed, v, row: print(f"seed {seed} {v:9s} test R@1 {row[('test', 'triplet')]:.3f}"))
print()
print(cmp.table())
print(f"\n{cmp.seconds / 60:.1f} min")
