"""End-to-end experiment: scan, calibrate, track, simulate, image, report.

Runs a reduced point-target experiment in a temporary directory and prints
the report.  The full experiments live in point.cfg and humanoid.cfg and
run through ``misar pipeline --config <file> --out <dir>``.
"""

import tempfile
from pathlib import Path

from misar.pipeline import point_target_spec, run_experiment

spec = point_target_spec(n_bursts=16, grid_dims=(24, 24, 16))
with tempfile.TemporaryDirectory() as tmp:
    res = run_experiment(spec, Path(tmp))
    print(sorted(p.name for p in Path(tmp).iterdir()))
    for key in ("calib.converged", "before.psl_db", "after.psl_db", "compare.psl_improvement_db",
                "track.rmse_m"):
        print(f"{key}: {res.value(key)}")
