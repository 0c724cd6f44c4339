"""Small closed-loop shoot-out: the optimization expert against a quickly
trained imitation policy, on shared scenarios."""

import numpy as np

from mgempc import grid, harness, imitation, mlp, scenario
from mgempc.empc import EmpcConfig, ExpertController

params = grid.reference_params()
train_scen = scenario.sample_scenarios(params, n_real=3, seed=21)
test_scen = scenario.sample_scenarios(params, n_real=2, seed=22)
cfg = EmpcConfig(horizon=4)
fcfg = imitation.FeatureConfig(n_beta=3, t_w=4)

print("training a small imitation policy ...")
ds = imitation.collect_dataset(
    params, train_scen, cfg, fcfg,
    imitation.default_noise_config(params, scale=1.0, seed=21),
    fc_cfg=scenario.default_forecast_config(4), t_sim=12)
bundle, _ = imitation.train_policy(
    ds, train_cfg=mlp.TrainConfig(max_epochs=400, patience=80), seed=0)

controllers = [
    ("empc", lambda: ExpertController(params, cfg)),
    ("learned", lambda: imitation.LearnedController(bundle, params)),
]
sim = harness.SimConfig(t_sim=12, horizon=4)
print(f"running {len(controllers)} controllers x {len(test_scen)} episodes ...")
report = harness.run_batch(controllers, test_scen, params, sim, reference="empc")

for row in report.summary():
    print(f"  {row['controller']:8s}: median J_eco ${row['j_eco_median']:8.2f}, "
          f"median J_time {row['j_time_median'] * 1e3:8.2f} ms, "
          f"eco ratio {row['j_eco_ratio_median']:.3f}, "
          f"time ratio {row['j_time_ratio_median']:.4f}, "
          f"SoC violations {row['soc_violations']}")
files = harness.export_report(report, "/tmp/mgempc_demo_report")
print("report files:", ", ".join(files))
