"""Two colours, three balls per draw, and two attracting compositions.

The rule pushes the urn towards 90/10 or 10/90 and away from the even
split.  Each replication settles near one of the two, and the fluctuations
around either one shrink like 1/sqrt(n).
"""
from pathlib import Path

import numpy as np

from polyaurn import catalogue
from polyaurn.experiment import analyze, simulate, write_simulation
from polyaurn.montecarlo import clt_check, estimate_limits

cfg = catalogue.get("4.1.5").with_overrides(n_reps=2000, n_steps=20_000, output_dir="out/bimodal")
an = analyze(cfg)
for z in an.zeros:
    print(z.zero.location.round(4), z.zero.stability.name)

res = simulate(cfg)
est = estimate_limits(res, [z.zero.location for z in an.stable])
print("fraction near each stable zero:", np.round(est.frequencies, 3))

for z in an.stable:
    cmp = clt_check(res, z.zero.location, z.clt)
    # robust spread: sample moments are inflated by late deciders
    print(z.zero.location.round(2), "predicted", cmp.predicted.round(4).tolist(),
          "quantile", cmp.quantile_cov.round(4).tolist(), "reps", cmp.n_assigned)

write_simulation(cfg, res, Path(cfg.output_dir))  # terminal.csv, summary.csv, metadata.ini
