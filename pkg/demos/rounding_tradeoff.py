#!/usr/bin/env python3
"""What grid rounding costs, and why finer grids buy calibration room.

The forecaster never commits to a raw probability. Every proposal p is
replaced by a two-point mix of its neighboring grid values, chosen so the
mean is exactly p. The mix pays extra squared loss against every outcome,
but never more than (p - z_i)(z_{i+1} - p) <= 1/(4 N^2), independent of the
outcome. This script measures that envelope empirically across grid sizes.
"""

import numpy as np

from swapcal.core import make_grid
from swapcal.forecaster import rround


def worst_excess(n, samples=2001):
    grid = make_grid(n)
    z = grid.points
    worst = 0.0
    for p in np.linspace(0.0, 1.0, samples):
        w = rround(float(p), grid)
        mean = float(w @ z)
        assert abs(mean - p) < 1e-12, "rounding must preserve the mean"
        for y in (0.0, 1.0):
            excess = float(w @ (z - y) ** 2) - (p - y) ** 2
            worst = max(worst, excess)
    return worst


def main():
    print(f"{'N':>4}  {'worst excess':>14}  {'1/(4N^2)':>12}  {'1/N^2':>10}")
    for n in (1, 2, 4, 8, 16, 32, 64):
        w = worst_excess(n)
        print(f"{n:>4}  {w:>14.6f}  {1 / (4 * n * n):>12.6f}  "
              f"{1 / (n * n):>10.6f}")
    print()
    print("the observed worst case tracks 1/(4N^2): rounding cost fades")
    print("quadratically while the number of calibration cells grows only")
    print("linearly, which is the trade the grid-size rules exploit")


if __name__ == "__main__":
    main()
