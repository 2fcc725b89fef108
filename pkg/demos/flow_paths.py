"""Deterministic paths of the mean-field flow x' = h(x).

Starting points on both sides of the repelling even split run off to the
two attractors.  Paths are written as CSV, one file per start.
"""
from pathlib import Path

import numpy as np

from polyaurn import catalogue, drift_h, flow_integrate

rule = catalogue.get("4.1.5").rule
out = Path("out/flow")
out.mkdir(parents=True, exist_ok=True)

for x0 in (0.3, 0.49, 0.51, 0.7):
    traj = flow_integrate(rule, [x0, 1 - x0], horizon=40.0)
    traj.to_csv(out / f"start_{x0:.2f}.csv")
    end = traj.terminal
    print(f"x0={x0:.2f} -> {end.round(4)}  |h| at end {np.abs(drift_h(rule, end)).max():.1e}")
