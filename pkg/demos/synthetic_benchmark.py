"""
Eight policies on the alternating synthetic environment
=======================================================

Ten segments of 2500 slots: the top three items stay fixed while three of the
other seven are boosted to 0.9 in every second segment. Run with a handful of
trials for a quick look (the full benchmark uses 100).
"""

import sys

from glrt_cascade import ExperimentConfig, check_assumption2, make_synthetic, run_experiment
from glrt_cascade.policies import default_p

trials = int(sys.argv[1]) if len(sys.argv) > 1 else 10

spec = make_synthetic(0)
print(spec.attractions.round(3))

# %%
# The segments are far shorter than the detection guarantee needs.
report = check_assumption2(spec, default_p(spec.T, spec.N), 1 / spec.T)
print("\n".join(report.lines()[-3:]))

# %%
summary = run_experiment(ExperimentConfig(env="synthetic", trials=trials))
for name, ps in sorted(summary.policies.items(), key=lambda kv: kv[1].final_mean):
    print(f"{name:>13}  {ps.final_mean:8.1f} +/- {ps.final_std:6.1f}")

# %%
# Detection times of the two restart policies. Boost onsets are only seen
# through forced exploration and take longer than offsets.
for name in ("glrt-ucb", "glrt-klucb"):
    print(name)
    for d in summary.policies[name].detections:
        print(f"  change at {d.change_point:5d}: {d.mean:9.1f} +/- {d.std:6.1f}  missed {d.missed}")

# %%
try:
    import matplotlib.pyplot as plt
except ImportError:
    sys.exit(0)
for name, ps in summary.policies.items():
    plt.plot(ps.checkpoints, ps.curve_mean, label=name)
plt.xlabel("time slot")
plt.ylabel("cumulative regret")
plt.legend()
plt.show()
