"""Run a tiny experiment grid and build its report.

    python demos/03_small_grid.py [out_dir]

Two methods, one interval, two seeds, a handful of training episodes.  The
report lands in ``out_dir`` as runs.csv, summary.csv and SVG figures; the
same grid can be run from a JSON file with ``cyclelab grid --config``.
"""

import sys
from pathlib import Path

from cyclelab.experiment import GridConfig, run_experiment_grid
from cyclelab.scenarios import synthetic

out = Path(sys.argv[1] if len(sys.argv) > 1 else "runs/demo-grid")
config = GridConfig(
    scenarios=[synthetic("int1", route="varying", horizon_s=3600, seed=0, detector_window_s=300)],
    methods=["aap-ccda", "asp", "ft30"],
    delta_ts=[300],
    seeds=[0, 1],
    train={"episodes": 8, "batch_size": 32, "lr": 3e-4, "gamma": 0.9},
    eval_episodes=2,
    out_dir=out,
)
records = run_experiment_grid(config)
for rec in records:
    print(f"{rec.cell_id:40s} {rec.status:6s} m_q {rec.m_q:6.2f}  m_s {rec.m_s:.4f}")
print("report:", sorted(str(p.relative_to(out)) for p in out.rglob("*") if p.suffix in (".csv", ".svg")))
print((out / "summary.csv").read_text())
