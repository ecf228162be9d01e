"""Tail bound vs Hoeffding vs Monte-Carlo frequency over a grid of p and n."""
import argparse

import numpy as np

from probecount.statbounds import BoundQuery, concentration_bound, empirical_tail, hoeffding_bound


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--phi", type=float, default=0.1)
    ap.add_argument("--n", type=int, nargs="+", default=[100, 1000, 10000])
    ap.add_argument("--grid", type=int, default=9)
    ap.add_argument("--trials", type=int, default=100_000)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    print(f"{'n':>6} {'p':>6} {'bound':>11} {'hoeffding':>11} {'empirical':>11} {'ratio':>8}")
    for n in args.n:
        for i, p in enumerate(np.linspace(0, 1, args.grid + 2)[1:-1]):
            q = BoundQuery(float(p), n, args.phi)
            b, h = concentration_bound(q), hoeffding_bound(q)
            e = empirical_tail(q.p, n, args.phi, args.trials, [args.seed, n, i]).frequency
            print(f"{n:6d} {p:6.3f} {b:11.4e} {h:11.4e} {e:11.4e} {b / h:8.3f}")


if __name__ == "__main__":
    main()
