"""Energy-norm convergence at a re-entrant corner.

The exact solution behaves like r^(2/3) near the corner, which caps
what any fixed mesh can deliver.  Refining a shrinking ball of elements
around the corner recovers a steepening error curve, and raising the
order on the same marking steepens it further.  Compare the slope
columns of the two runs.
"""

import argparse

import numpy as np

from overlayfem.benchmarks import RunConfig, run_benchmark


def run(marking, steps, p):
    cfg = RunConfig(benchmark="lshape", res=8, steps=steps, p=p, ranks=2,
                    marking=marking, tol=1e-10)
    rows, _ = run_benchmark(cfg)
    return [(r["dofs"], r["error"]) for r in rows]


def print_table(name, rows):
    print(f"\n{name}")
    print(f"{'dofs':>8} {'energy error':>14} {'slope':>7}")
    prev = None
    for dofs, err in rows:
        slope = ""
        if prev is not None:
            slope = f"{(np.log(err) - np.log(prev[1])) / (np.log(dofs) - np.log(prev[0])):7.2f}"
        print(f"{dofs:>8} {err:>14.4e} {slope:>7}")
        prev = (dofs, err)


parser = argparse.ArgumentParser()
parser.add_argument("--steps", type=int, default=5)
args = parser.parse_args()

print_table("ball marking around the corner, order 1",
            run("ball", args.steps, 1))
print_table("ball marking around the corner, order 2",
            run("ball", args.steps, 2))
