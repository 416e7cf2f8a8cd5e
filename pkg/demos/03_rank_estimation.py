"""Look at the spectrum the rank estimator works from.

The cost R(i) is small where a large singular value is followed by a small
one; its minimizer is the rank guess.

Run:  python demos/03_rank_estimation.py
"""

import numpy as np

from noisymc import NoiseSpec, estimate_rank, make_instance, trim
from noisymc.core import truncated_svd
from noisymc.spectral import rank_cost


def main():
    n, r = 300, 4
    for eps in (20.0, 40.0, 80.0):
        inst = make_instance("standard", n, r, eps, NoiseSpec("standard_gaussian", 4.0), master_seed=3)
        obs = trim(inst.observations).trimmed
        s, _, _ = truncated_svd(obs, 10)
        cost = rank_cost(s, n, n, obs.size, count=9)
        print(f"eps={eps:g}: estimated rank {estimate_rank(inst.observations)} (true {r})")
        print("  top singular values:", np.array2string(s[:7], precision=1))
        print("  cost R(1..7):       ", np.array2string(cost[:7], precision=3))


if __name__ == "__main__":
    main()
