"""
The randomised hard instance
============================

Every item sits at 1/2 except one slightly better item per block. The gap is
so small that no policy can tell the blocks apart quickly.
"""

from glrt_cascade import ExperimentConfig, make_hard_instance, run_experiment
from glrt_cascade.environment import hard_instance_gap

L, K, N, T = 10, 3, 10, 25_000
print(f"gap = {hard_instance_gap(L, T):.5f}")

spec = make_hard_instance(L, K, N, T, seed=1)
print("best item per block:", spec.attractions.argmax(axis=1).tolist())

# %%
# Regret scales like sqrt(T) here whatever the policy does.
config = ExperimentConfig(env="hard", env_seed=1, L=L, K=K, N=N, T=T, trials=5,
                          policies=("ucb1", "glrt-ucb", "oracle-ucb1"))
for name, ps in run_experiment(config).policies.items():
    print(f"{name:>12}  {ps.final_mean:7.1f} +/- {ps.final_std:5.1f}  false alarms {ps.false_alarms}")
