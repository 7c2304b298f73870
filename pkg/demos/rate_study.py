#!/usr/bin/env python3
"""Fit empirical growth exponents for calibration and swap regret.

Smoke-scale version of the sweeps in the acceptance checklist: shorter
horizons and three repetitions per point, so it finishes in well under a
minute. Expect noisier slopes than the checklist reports; the smallest
horizons still carry cold-start cost and the median over three seeds is
rough.
"""

import sys
import tempfile
from pathlib import Path

from swapcal.harness import SweepConfig, fit_rate, run_sweep


def study(metric, n_rule, reps, out_dir):
    out = str(Path(out_dir) / f"{metric.replace(':', '_')}.csv")
    cfg = SweepConfig(T_list=[128, 256, 512, 1024, 2048], d=2, reps=reps,
                      metric=metric, n_rule=n_rule, seed_base=0, out=out)
    rows = run_sweep(cfg)
    fit = fit_rate(rows, metric)
    meds = ", ".join(f"{t}:{m:.1f}" for t, m in zip(fit.t_values, fit.medians))
    print(f"{metric:<14} slope {fit.slope:+.3f} +/- {fit.stderr:.3f}   "
          f"medians {meds}")


def main():
    reps = int(sys.argv[1]) if len(sys.argv) > 1 else 3
    print(f"sweeping T in 128..2048, d=2, {reps} reps per point")
    with tempfile.TemporaryDirectory() as out_dir:
        study("smcal2:ball1", "auto-smcal", reps, out_dir)
        study("sreg:ball4", "auto-sreg", reps, out_dir)


if __name__ == "__main__":
    main()
