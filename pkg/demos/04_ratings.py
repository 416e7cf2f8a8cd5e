"""Held-out NMAE on a ratings matrix.

With a MovieLens directory (holding u1.base and u1.test) the real split is
used; otherwise a synthetic 1-5 star matrix stands in.

Run:  python demos/04_ratings.py [movielens_dir]
"""

import sys

import numpy as np

from noisymc import SparseObservations
from noisymc.harness import RatingsDataset, eval_real, load_movielens


def synthetic_ratings(seed=0, users=300, items=200, rank=3):
    rng = np.random.default_rng(seed)
    taste = rng.standard_normal((users, rank)) @ rng.standard_normal((rank, items)) / np.sqrt(rank)
    stars = np.clip(np.rint(3.5 + taste + 0.3 * rng.standard_normal(taste.shape)), 1, 5)
    seen = rng.random(stars.shape) < 0.15
    test = (~seen) & (rng.random(stars.shape) < 0.03)
    return RatingsDataset(
        "synthetic",
        SparseObservations.from_dense(stars, seen),
        SparseObservations.from_dense(stars, test),
        1.0,
        5.0,
    )


def main(path=None):
    if path:
        ds = load_movielens(f"{path}/u1.base", f"{path}/u1.test")
    else:
        ds = synthetic_ratings()
    print(f"{ds.name}: {ds.shape[0]} users x {ds.shape[1]} items, "
          f"{ds.train.size} training / {ds.test.size} test ratings")
    for solver in ("midpoint", "optspace", "incremental_optspace", "admira", "fpca"):
        report, row = eval_real(ds, solver)
        print(f"{solver:>22}: NMAE {report.nmae:.4f}  rank {report.rank_used:>3}  {report.seconds:6.1f}s")


if __name__ == "__main__":
    main(sys.argv[1] if len(sys.argv) > 1 else None)
