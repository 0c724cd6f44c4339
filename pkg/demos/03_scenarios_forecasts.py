"""Scenario machinery: daily shapes, randomized realizations, bounded-noise
forecasts, and fluctuating prices."""

import numpy as np

from mgempc import grid, scenario

params = grid.reference_params()

pv, wind, load = scenario.nominal_profiles(48)
print("nominal daily shapes (kW):")
print("  hour:", " ".join(f"{h:5d}" for h in range(0, 24, 3)))
print("  pv  :", " ".join(f"{pv[h]:5.1f}" for h in range(0, 24, 3)))
print("  wind:", " ".join(f"{wind[h]:5.1f}" for h in range(0, 24, 3)))
print("  load:", " ".join(f"{load[h]:5.1f}" for h in range(0, 24, 3)))

scen = scenario.sample_scenarios(params, n_real=3, seed=7)
print(f"\n{len(scen)} scenarios (3 realizations x 4 initial SoC), "
      f"{scen[0].n_steps} steps each")
s = scen[0]
print(f"scenario 0: soc0={s.soc0} kWh, mean load {s.true_load.values.mean():.1f} kW, "
      f"mean res {s.true_res.values.mean():.1f} kW")
print(f"prices: buy {s.prices_buy.values.min():.3f}-{s.prices_buy.values.max():.3f}, "
      f"sell {s.prices_sell.values.min():.3f}-{s.prices_sell.values.max():.3f} $/kWh")

cfg = scenario.default_forecast_config(6)
print(f"\nforecast noise half-widths per lookahead step: {cfg.rel_band}")
fcs = scenario.forecast(s, t=8, depth=6, cfg=cfg, lr=params.load_res)
truth = s.true_load.values[8:14]
print("load truth   :", " ".join(f"{v:6.1f}" for v in truth))
print("load forecast:", " ".join(f"{f.p_load:6.1f}" for f in fcs))
err = [abs(f.p_load - t) / t * 100 for f, t in zip(fcs, truth)]
print("abs error (%):", " ".join(f"{e:6.2f}" for e in err))
