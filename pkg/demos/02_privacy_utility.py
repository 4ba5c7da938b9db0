"""Sweep the Laplace scale and watch accuracy fall as the noise grows.

Each value is trained over a few seeds on the same dataset; single runs
wander by a few hundredths of HR@10, so the averages are what to read.

    python demos/02_privacy_utility.py [--seeds 3]
"""

import argparse

import numpy as np

from privcdr.datasets import SyntheticSpec, generate_synthetic_cdr, prepare_dataset
from privcdr.model import TrainConfig
from privcdr.training import fit


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--seeds", type=int, default=3)
    parser.add_argument("--grid", type=float, nargs="+", default=[0.0, 0.01, 0.1, 1.0])
    args = parser.parse_args()

    raw = generate_synthetic_cdr(SyntheticSpec(seed=0))
    data = prepare_dataset(raw.tables, raw.features, k=5, seed=0)

    print("lambda  mean_HR@10  per-seed")
    for lam in args.grid:
        hrs = [fit(data, TrainConfig(seed=s, lam=lam)).mean_hr for s in range(args.seeds)]
        print(f"{lam:<7g} {np.mean(hrs):.4f}      {' '.join(f'{h:.3f}' for h in hrs)}", flush=True)


if __name__ == "__main__":
    main()
