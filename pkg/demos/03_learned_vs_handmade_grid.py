"""Learned grid versus a hand-made one on the constrained arm.

Joints 1 and 2 can only move within [-0.5, 0.5]. MAP-Elites keeps the grid it
would use for the unconstrained arm, so many of its cells are unreachable.
VQ-Elites learns its cells from what the policies actually reach.
Both get 400 cells and are scored against the same ground-truth grid of the
constrained arm.
"""
import tempfile
from pathlib import Path

from qd_forge.harness import preset_config, run_experiment

common = {"iterations": 150, "population": 64, "archive_size": 400, "store_capacity": 2000}
runs = {
    "VQ-Elites": preset_config("arm_constrained", algorithm=dict(common)),
    "MAP-Elites (unconstrained grid)": preset_config(
        "arm_constrained", algorithm=dict(common, algorithm="map-elites", grid="unconstrained")),
}

with tempfile.TemporaryDirectory() as tmp:
    for label, cfg in runs.items():
        art = run_experiment(cfg, Path(tmp) / label.split()[0])
        last = art.result.metrics[-1]
        print(f"{label:32s} coverage {last.coverage:.3f}  QD-score {last.pqd:7.2f}  "
              f"valid members {last.valid_size}/{last.archive_size}")
