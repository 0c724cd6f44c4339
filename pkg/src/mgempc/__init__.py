"""Microgrid energy management: economic MPC with an embedded MIQP solver,
plus imitation-learned fast approximations evaluated in closed loop."""

from mgempc import empc, grid, harness, imitation, miqp, mlp, scenario  # noqa: F401

__version__ = "0.1.0"
