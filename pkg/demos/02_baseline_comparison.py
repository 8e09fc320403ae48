"""Compare the four analytic baselines on a small scenario and plot the
coverage-vs-time curves.

LSAP re-solves the global assignment every step; CAPT plans constant-velocity
simultaneous-arrival trajectories once; the d-hop policies are decentralized
(0-hop = greedy nearest goal, 1-hop = local assignment over the neighborhood).

Run: python3 demos/02_baseline_comparison.py   (writes demos/out/baselines/)
"""

import csv
import os

from swarmplan.harness import simulate_command
from swarmplan.plotting import line_chart_svg
from swarmplan.world import SimParams

out_dir = os.path.join(os.path.dirname(__file__), "out", "baselines")
params = SimParams.from_density(20, 1.0)  # 20 agents at density 1
policies = ["lsap", "capt", "dhop:0", "dhop:1"]

summaries = simulate_command(policies, params, base_seed=0, episodes=5,
                             out_dir=out_dir, write_traces=False)

print(f"{'policy':8s} {'disc.cov':>9s} {'step-pair':>10s} {'events':>7s}")
for s in summaries:
    print(f"{s['policy']:8s} {s['discounted_coverage_mean']:9.3f} "
          f"{s['collisions_step_pair_mean']:10.1f} "
          f"{s['collisions_events_mean']:7.1f}")

# Render the coverage curves that simulate_command wrote.
with open(os.path.join(out_dir, "coverage_vs_time.csv")) as fh:
    rows = list(csv.DictReader(fh))
series = []
for name in policies:
    series.append({
        "label": name,
        "x": [int(r["step"]) for r in rows],
        "mean": [float(r[f"{name}_mean"]) for r in rows],
        "std": [float(r[f"{name}_std"]) for r in rows],
    })
svg = line_chart_svg(series, "step", "coverage", "Baseline coverage vs time")
with open(os.path.join(out_dir, "coverage_vs_time.svg"), "w") as fh:
    fh.write(svg)
print(f"\nwrote {out_dir}/coverage_vs_time.svg")
