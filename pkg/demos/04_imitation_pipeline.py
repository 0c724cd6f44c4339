"""Miniature imitation pipeline: roll out the noisy expert, train the policy
network on the recorded pairs, and deploy the clipped network."""

import numpy as np

from mgempc import grid, imitation, mlp, scenario
from mgempc.empc import EmpcConfig

params = grid.reference_params()
scen = scenario.sample_scenarios(params, n_real=3, seed=11)
cfg = EmpcConfig(horizon=4)
fcfg = imitation.FeatureConfig(n_beta=3, t_w=4)
noise = imitation.default_noise_config(params, scale=1.0, seed=11)

print(f"collecting noisy-expert rollouts over {len(scen)} scenarios ...")
ds = imitation.collect_dataset(params, scen, cfg, fcfg, noise,
                               fc_cfg=scenario.default_forecast_config(4),
                               t_sim=12)
print(f"dataset: {ds.n_rows} rows, {ds.features.shape[1]} features, "
      f"{len(ds.failed_scenarios)} failed scenarios")

bundle, log = imitation.train_policy(
    ds, train_cfg=mlp.TrainConfig(max_epochs=300, patience=60), seed=0)
print(f"trained for {len(log)} epochs, best val MSE "
      f"{min(r['val_mse'] for r in log):.4f}")

ctrl = imitation.LearnedController(bundle, params)
state = grid.initial_state(params, 48.0)
fcs = scenario.forecast(scen[0], 0, 4, scenario.default_forecast_config(4),
                        params.load_res)
u = ctrl(state, fcs)
print(f"\npolicy output at episode start: gen={np.round(u.gen_power, 2)}, "
      f"exchange={u.p_exg:.2f} kW, curtail={u.beta:.4f} "
      f"({ctrl.last_solve_time * 1e6:.0f} microseconds)")
print("inside the admissible box:",
      grid.input_box(params, state).contains(u.as_array()))
