"""Censoring-type percentages for the three simulation presets at large n.

    python3 scripts/censoring_repartition.py --n 100000 --pi-event 0
"""

import argparse

import numpy as np

from phmpl.simulator import censoring_repartition, preset


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=100_000)
    ap.add_argument("--pi-event", type=float, default=0.0)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    print("percent of censored subjects")
    print(f"{'scenario':>8} {'left':>7} {'interval':>9} {'right':>7}")
    for sid in (1, 2, 3):
        rep = censoring_repartition(preset(sid, n=args.n, pi_event=args.pi_event),
                                    np.random.default_rng([args.seed, sid]))
        print(f"{sid:>8} {100 * rep['left']:7.2f} "
              f"{100 * rep['interval']:9.2f} {100 * rep['right']:7.2f}")


if __name__ == "__main__":
    main()
