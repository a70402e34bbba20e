"""
Running on your own segment table
=================================

Any piecewise-stationary click log can be summarised as a CSV with columns
``start,end,w1,...,wL``. Here we write a small table by hand, scale it the
way sparse real click rates often are, and run the restart policies on it.
"""

import tempfile
from pathlib import Path

from glrt_cascade import ExperimentConfig, load_segments_csv, run_experiment

rows = [
    "start,end,w1,w2,w3,w4,w5,w6",
    "1,10000,0.040,0.030,0.020,0.010,0.010,0.010",
    "10001,20000,0.010,0.030,0.020,0.050,0.010,0.010",
    "20001,30000,0.010,0.010,0.020,0.050,0.060,0.010",
]
path = Path(tempfile.mkdtemp()) / "segments.csv"
path.write_text("\n".join(rows) + "\n")

# %%
spec = load_segments_csv(path, K=2, scale=10.0)
print(spec.attractions)

# %%
config = ExperimentConfig(env="csv", csv_path=str(path), scale=10.0, K=2, trials=5,
                          policies=("swucb", "glrt-ucb", "glrt-klucb", "oracle-klucb"))
summary = run_experiment(config)
for name, ps in summary.policies.items():
    print(f"{name:>13}  {ps.final_mean:7.1f} +/- {ps.final_std:5.1f}")
for d in summary.policies["glrt-klucb"].detections:
    print(f"change at {d.change_point}: detected at {d.mean:.0f} on average, missed {d.missed}")
