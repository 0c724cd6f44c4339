"""Tour of the microgrid component models: stage costs, battery dynamics,
the bus balance, and admissible-input boxes."""

import numpy as np

from mgempc import grid

params = grid.reference_params()
print("reference configuration valid:", grid.validate_params(params) == [])
print(f"  {params.n_fg} generators, battery {params.ess.soc_min}-"
      f"{params.ess.soc_max} kWh at +-{params.ess.p_max} kW, "
      f"exchange +-{params.exchange.p_max} kW")

# one generator, one step: fuel + running cost + startup
g = params.generators[0]
cost = grid.generator_stage_cost(g, p=10.0, on=1, prev_on=0)
print(f"\ngenerator 0 at 10 kW from cold: ${cost:.2f} "
      f"(fuel {g.theta1 * 10 + g.theta2 * 100:.2f}, running {g.o_fg:.2f}, "
      f"startup {g.s_on:.2f})")

# the battery absorbs whatever the bus balance leaves over
w = grid.Disturbance(p_res=30.0, p_load=90.0)
u = grid.ControlInput(gen_power=(10.0, 0.0), p_exg=40.0, beta=0.1)
p_ess = grid.ess_power_from_balance(u.gen_power, u.p_exg, u.beta, w)
print(f"\nbalance: gen 10 + res 30 + import 40 - served load "
      f"{(1 - u.beta) * w.p_load:.0f} -> battery {p_ess:+.1f} kW")

state = grid.initial_state(params, soc0=50.0)
nxt = grid.augmented_step(params, state, u, w)
print(f"SoC 50.0 -> {nxt.soc:.3f} kWh after one hour "
      f"(charge efficiency {params.ess.eta_c}, degradation {params.ess.x_dg} kWh/h)")

# admissible inputs depend on the previous generator operating points
state_on = grid.GridState(soc=50.0, prev_gen_power=(10.0, 0.0), prev_gen_on=(1, 0))
box = grid.input_box(params, state_on)
print(f"\ninput box with generator 0 running at 10 kW:")
print(f"  gen 0 axis: {{0}} u [{box.lo[0]:.0f}, {box.hi[0]:.0f}] kW "
      f"(ramp-limited), gen 1 axis: {{0}} u [{box.lo[1]:.0f}, {box.hi[1]:.0f}] kW")
noisy = np.array([-3.0, 2.0, 400.0, 0.9])
proj = grid.clip_array_to_box(noisy, box)
print(f"  clipping {noisy} -> {proj}")
