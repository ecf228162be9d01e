"""Building scenarios: full coverage, partial coverage and drifting coverage.

Prints the fitted factor against the known one and writes the weekly table
for the drifting case.
"""
import argparse
import datetime as dt
from pathlib import Path

from probecount.calibration import calibrate, fit_windowed, write_window_table
from probecount.scenarios import building_count_series, daily_occupancy, opening_timestamps
from probecount.types import PopulationSpec, mean_tx_probability

MIXTURE = [(0.0, 0.15), (0.25, 0.45), (0.5, 0.4)]


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--weeks", type=int, default=9)
    ap.add_argument("--peak", type=int, default=300)
    ap.add_argument("--seeds", type=int, default=5)
    ap.add_argument("--out", type=Path, default=Path("out") / "calibration")
    args = ap.parse_args()
    args.out.mkdir(parents=True, exist_ok=True)

    p = mean_tx_probability(PopulationSpec(1, MIXTURE))
    ts = opening_timestamps(dt.date(2019, 4, 8), 7 * args.weeks)
    occ = daily_occupancy(ts, args.peak)
    print(f"p = {p:.4f}, beta = {1 / p:.4f}, {len(ts)} samples")

    for seed in range(args.seeds):
        rep = calibrate(building_count_series(MIXTURE, ts, occ, 2, [0, 1], seed=seed), beta=1 / p)
        print(f"full coverage seed {seed}: beta_tilde {rep.beta_tilde:.4f} "
              f"(x p = {rep.beta_tilde * p:.4f}) mape {rep.mape:.2f}%")

    rep = calibrate(building_count_series(MIXTURE, ts, occ, 8, [0, 1, 2], seed=11), beta=1 / p)
    print(f"3 of 8 floors: kappa {rep.kappa:.4f} (expected {8 / 3:.4f}) mape {rep.mape:.2f}%")

    t0 = int(ts[0])

    def drifting(t):
        share = 0.5 - 0.03 * ((t - t0) // (7 * 86400))
        return (share, 1 - share)

    pair = building_count_series(MIXTURE, ts, occ, 2, [0], seed=12, floor_weights=drifting)
    win = fit_windowed(pair, "week")
    write_window_table(win, args.out / "weekly.csv")
    print(f"drifting coverage: weekly average mape {win.average['mape']:.2f}% "
          f"vs global {win.global_fit.mape:.2f}%  (table: {args.out / 'weekly.csv'})")


if __name__ == "__main__":
    main()
