#!/usr/bin/env python3
"""Run the online forecaster on a synthetic stream and print its report card."""

import json
import sys

from swapcal.harness import AdversarySpec, evaluate_metric, resolve_n, simulate_run


def main():
    T = int(sys.argv[1]) if len(sys.argv) > 1 else 2000
    seed = int(sys.argv[2]) if len(sys.argv) > 2 else 0
    d = 2
    n = resolve_n("auto-smcal", T, d)
    spec = AdversarySpec(kind="iid-logistic", noise=0.05)

    print(f"simulating T={T} rounds, d={d}, grid size N={n}, seed={seed}")
    tr = simulate_run(spec, T, d, n, seed=seed)

    for name in ("cal2", "smcal2", "psmcal2", "sreg", "somni"):
        report = evaluate_metric(tr, name)
        print(json.dumps(report.as_dict()))

    # the sampled prediction is one of N+1 grid values; show the usage mix
    counts = [int((tr.sampled_indices == i).sum()) for i in range(n + 1)]
    print("grid usage:", dict(zip(map(float, tr.grid.points), counts)))


if __name__ == "__main__":
    main()
