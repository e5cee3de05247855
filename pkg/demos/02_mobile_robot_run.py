"""A short VQ-Elites run on the obstacle-free mobile robot task.

The learned grid has one cell per codebook entry. Coverage is measured by
projecting the archive onto a fixed 15x15 grid of final robot positions, which
is also what the SVG render shows: one coloured square per occupied cell,
blue for low fitness and red for high.

Usage: python demos/02_mobile_robot_run.py [output-dir]
"""
import sys
from pathlib import Path

from qd_forge.harness import preset_config, run_experiment
from qd_forge.harness.render import render_decoded_centers, render_elite_grid

out = Path(sys.argv[1] if len(sys.argv) > 1 else "demo-mobile")
cfg = preset_config(
    "mobile_free",
    algorithm={"iterations": 100, "population": 64, "archive_size": 100},
    metrics={"bins": (15, 15), "interval": 20},
)
art = run_experiment(cfg, out)

print("iteration  coverage  QD-score   EDR")
for r in art.result.metrics:
    print(f"{r.iteration:9d}  {r.coverage:8.3f}  {r.pqd:8.1f}  {r.edr:5.2f}")
print(f"\n{len(art.result.updates)} model updates, "
      f"{sum(u.mismatched_cells for u in art.result.updates)} members left in a stale cell")

render_elite_grid(art.result.archive.members(), [(0, 600), (0, 600)], out / "elites.svg", bins=(15, 15))
render_decoded_centers(art.result.state.model, out / "centers.svg")
print(f"wrote {out / 'elites.svg'} and {out / 'centers.svg'}")
