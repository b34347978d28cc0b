"""
The whole pipeline from one config
==================================

The experiment harness chains sampling, PCA, the low-dimensional
initializer and refinement, and writes JSON and CSV artifacts for each
stage.  The same config run twice gives the same record.
"""

import json
import tempfile
from pathlib import Path

from artifact import harness

config = {
    "pipeline": "full",
    "seed": 2,
    "mixture": {"generate": {"k": 2, "d": 6, "c": 4}},
    "samples": {"n": 300_000},
    "init": {"spacing": 0.1, "ball_radius": 0.4, "eps0": 0.5},
    "refine": {"delta": 1e-3, "n_jacobian": 50_000, "iterations": 4},
}

with tempfile.TemporaryDirectory() as tmp:
    rec = harness.run(harness.validate_config(config), Path(tmp))
    print("artifacts:", sorted(p.name for p in Path(tmp).iterdir()))
    print(json.dumps(rec.metrics, indent=2, default=str)[:800])
    for row in harness.read_csv(Path(tmp) / "newton-trace.csv"):
        print(f"iteration {row['iteration']}: max error {float(row['max_error']):.4f}")
