"""Microgrid physics and economics: component parameters, stage costs,
battery dynamics, power balance, and admissible-input boxes.

All functions are pure; parameter and state objects are frozen dataclasses,
safe to share across threads. Units are kW, kWh, hours and dollars.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

# ON threshold for the generator status indicator: a generator is ON iff its
# power exceeds this (feasible schedules have power 0 or >= p_min >> TOL_ON).
TOL_ON = 1e-9

# Slack used when checking numeric preconditions, so solver output that sits
# on a bound within solver accuracy is not rejected.
CHECK_TOL = 1e-6


class ContractViolation(ValueError):
    """An operation was called with arguments violating its precondition."""


@dataclass(frozen=True)
class GeneratorParams:
    theta1: float  # linear fuel cost ($/kWh)
    theta2: float  # quadratic fuel cost ($/kW^2 h)
    o_fg: float    # per-step ON operating cost ($)
    s_on: float    # startup cost ($)
    s_off: float   # shutdown cost ($)
    p_min: float   # minimum ON power (kW)
    p_max: float   # maximum power (kW)
    dp_max: float  # max per-step power change (kW)


@dataclass(frozen=True)
class EssParams:
    eta_c: float    # charging efficiency, (0, 1]
    eta_d: float    # discharging efficiency, (0, 1]
    x_dg: float     # constant degradation (kWh/h)
    o_ess: float    # throughput cost ($/kWh)
    p_max: float    # |P_ess| bound (kW)
    soc_min: float  # kWh
    soc_max: float  # kWh


@dataclass(frozen=True)
class ExchangeParams:
    c_p: float    # nominal purchase price ($/kWh)
    c_s: float    # nominal sale price ($/kWh)
    p_max: float  # |P_exg| bound (kW)


@dataclass(frozen=True)
class LoadResParams:
    rho: float         # curtailment penalty ($/kWh)
    beta_max: float    # max curtail fraction, [0, 1]
    p_load_min: float  # kW
    p_load_max: float  # kW
    p_res_min: float   # kW
    p_res_max: float   # kW


@dataclass(frozen=True)
class MicrogridParams:
    generators: tuple[GeneratorParams, ...]
    ess: EssParams
    exchange: ExchangeParams
    load_res: LoadResParams
    ts: float  # sampling period (h)

    def __post_init__(self):
        object.__setattr__(self, "generators", tuple(self.generators))

    @property
    def n_fg(self) -> int:
        return len(self.generators)


@dataclass(frozen=True)
class GridState:
    """Augmented plant state: battery SoC plus previous generator outputs."""

    soc: float
    prev_gen_power: tuple[float, ...]
    prev_gen_on: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "prev_gen_power", tuple(float(p) for p in self.prev_gen_power))
        object.__setattr__(self, "prev_gen_on", tuple(int(d) for d in self.prev_gen_on))
        if len(self.prev_gen_power) != len(self.prev_gen_on):
            raise ContractViolation("prev_gen_power and prev_gen_on length mismatch")
        for p, d in zip(self.prev_gen_power, self.prev_gen_on):
            if d not in (0, 1):
                raise ContractViolation(f"prev_gen_on entries must be 0/1, got {d}")
            if (d == 1) != (p > TOL_ON):
                raise ContractViolation(f"inconsistent (prev_on={d}, prev_power={p})")


def initial_state(params: MicrogridParams, soc0: float) -> GridState:
    """Episode-start state: all generators OFF."""
    n = params.n_fg
    return GridState(soc=soc0, prev_gen_power=(0.0,) * n, prev_gen_on=(0,) * n)


@dataclass(frozen=True)
class ControlInput:
    gen_power: tuple[float, ...]
    p_exg: float
    beta: float

    def __post_init__(self):
        object.__setattr__(self, "gen_power", tuple(float(p) for p in self.gen_power))
        vals = (*self.gen_power, self.p_exg, self.beta)
        if not all(np.isfinite(vals)):
            raise ContractViolation(f"non-finite control input {vals}")
        if not -CHECK_TOL <= self.beta <= 1.0 + CHECK_TOL:
            raise ContractViolation(f"beta={self.beta} outside [0, 1]")

    def as_array(self) -> np.ndarray:
        return np.array([*self.gen_power, self.p_exg, self.beta], dtype=float)

    @staticmethod
    def from_array(x, n_fg: int) -> "ControlInput":
        x = np.asarray(x, dtype=float)
        if x.shape != (n_fg + 2,):
            raise ContractViolation(f"control vector must have length {n_fg + 2}, got {x.shape}")
        return ControlInput(gen_power=tuple(x[:n_fg]), p_exg=float(x[n_fg]), beta=float(x[n_fg + 1]))


@dataclass(frozen=True)
class Disturbance:
    p_res: float
    p_load: float


@dataclass(frozen=True)
class PriceSample:
    c_p: float
    c_s: float


# ---------------------------------------------------------------------------
# Stage costs
# ---------------------------------------------------------------------------

def generator_stage_cost(g: GeneratorParams, p: float, on: int, prev_on: int) -> float:
    """Fuel + operating + switching cost of one generator for one step.

    Requires the ON flag to be consistent with the power (on == 1 iff p > 0).
    """
    if on not in (0, 1) or prev_on not in (0, 1):
        raise ContractViolation(f"on flags must be 0/1, got ({on}, {prev_on})")
    if (on == 1) != (p > TOL_ON):
        raise ContractViolation(f"inconsistent (on={on}, p={p}) pair")
    return (g.theta1 * p + g.theta2 * p * p + g.o_fg * on
            + g.s_on * on * (1 - prev_on) + g.s_off * prev_on * (1 - on))


def ess_stage_cost(e: EssParams, p_ess: float, check: bool = True) -> float:
    """Battery throughput cost o_ess * |P_ess| for one step."""
    if check and abs(p_ess) > e.p_max + CHECK_TOL:
        raise ContractViolation(f"|p_ess|={abs(p_ess)} exceeds bound {e.p_max}")
    return e.o_ess * abs(p_ess)


def load_stage_cost(lr: LoadResParams, beta: float, p_load: float) -> float:
    """Curtailment penalty rho * beta * P_load for one step."""
    if not -CHECK_TOL <= beta <= lr.beta_max + CHECK_TOL:
        raise ContractViolation(f"beta={beta} outside [0, {lr.beta_max}]")
    return lr.rho * beta * p_load


def exchange_stage_cost(price: PriceSample, p_exg: float) -> float:
    """Trading cost: purchases priced at c_p, sales (negative p_exg) at c_s."""
    if not np.isfinite(p_exg):
        raise ContractViolation(f"non-finite p_exg={p_exg}")
    return price.c_p * p_exg if p_exg >= 0 else price.c_s * p_exg


def ess_power_from_balance(gen_power, p_exg: float, beta: float, w: Disturbance) -> float:
    """Battery power implied by the bus balance: generation plus import minus
    served load. The balance residual is zero by construction."""
    return float(np.sum(gen_power)) + w.p_res + p_exg - (1.0 - beta) * w.p_load


def total_stage_cost(params: MicrogridParams, state: GridState, u: ControlInput,
                     w: Disturbance, price: PriceSample, check: bool = True) -> float:
    """Sum of generator, battery, curtailment and trading costs for one step.

    ON flags are inferred from the commanded generator powers; the battery
    power is derived from the bus balance. With ``check=False`` the battery
    power-rating precondition is skipped (used when scoring policies that may
    violate it, where the excursion is flagged rather than rejected).
    """
    cost = 0.0
    for g, p, prev_on in zip(params.generators, u.gen_power, state.prev_gen_on):
        cost += generator_stage_cost(g, p, int(p > TOL_ON), prev_on)
    p_ess = ess_power_from_balance(u.gen_power, u.p_exg, u.beta, w)
    cost += ess_stage_cost(params.ess, p_ess, check=check)
    cost += load_stage_cost(params.load_res, u.beta, w.p_load)
    cost += exchange_stage_cost(price, u.p_exg)
    return cost


# ---------------------------------------------------------------------------
# Dynamics
# ---------------------------------------------------------------------------

def soc_update(e: EssParams, ts: float, soc: float, p_ess: float) -> float:
    """One-step SoC recursion; charging uses eta_c, discharging 1/eta_d, and
    a constant degradation drain applies either way. No bound checks."""
    if p_ess >= 0:
        return soc + ts * e.eta_c * p_ess - ts * e.x_dg
    return soc + ts * p_ess / e.eta_d - ts * e.x_dg


def ess_step(e: EssParams, ts: float, soc: float, p_ess: float) -> float:
    """SoC after one step under battery power p_ess (within the rating)."""
    if abs(p_ess) > e.p_max + CHECK_TOL:
        raise ContractViolation(f"|p_ess|={abs(p_ess)} exceeds bound {e.p_max}")
    return soc_update(e, ts, soc, p_ess)


def augmented_step(params: MicrogridParams, state: GridState, u: ControlInput,
                   w: Disturbance) -> GridState:
    """Advance (soc, previous generator outputs) one step under applied input
    u and realized disturbance w.

    The battery absorbs the balance residual; its rating and the SoC bounds
    are intentionally NOT enforced here — closed-loop policies may violate
    them and the caller flags (never repairs) such excursions.
    """
    p_ess = ess_power_from_balance(u.gen_power, u.p_exg, u.beta, w)
    new_soc = soc_update(params.ess, params.ts, state.soc, p_ess)
    on = tuple(int(p > TOL_ON) for p in u.gen_power)
    return GridState(soc=new_soc, prev_gen_power=u.gen_power, prev_gen_on=on)


# ---------------------------------------------------------------------------
# Input box
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class InputBox:
    """Axis-aligned admissible-input set: per-generator intervals (optionally
    with the isolated OFF point {0} adjoined), the exchange interval and the
    curtailment interval."""

    lo: np.ndarray             # length n_fg + 2
    hi: np.ndarray             # length n_fg + 2
    zero_adjoined: np.ndarray  # bool, length n_fg + 2 (True only on gen axes)

    @property
    def n_axes(self) -> int:
        return self.lo.shape[0]

    def contains(self, x, tol: float = CHECK_TOL) -> bool:
        x = np.asarray(x, dtype=float)
        in_interval = (x >= self.lo - tol) & (x <= self.hi + tol)
        at_zero = self.zero_adjoined & (np.abs(x) <= tol)
        return bool(np.all(in_interval | at_zero))


def input_box(params: MicrogridParams, state: GridState, strict_eq28: bool = False) -> InputBox:
    """Admissible-input box for the current state.

    Each generator axis is [p_min, p_max] intersected with the ramp interval
    around its previous output. Since p_min > 0 that interval never contains
    0, so by default the OFF point {0} is adjoined to every generator axis;
    ``strict_eq28=True`` keeps the bare interval.
    """
    n = params.n_fg
    lo = np.empty(n + 2)
    hi = np.empty(n + 2)
    zero = np.zeros(n + 2, dtype=bool)
    for i, (g, prev) in enumerate(zip(params.generators, state.prev_gen_power)):
        lo[i] = max(g.p_min, prev - g.dp_max)
        hi[i] = min(g.p_max, prev + g.dp_max)
        if lo[i] > hi[i] + CHECK_TOL:
            raise ContractViolation(
                f"empty generator interval [{lo[i]}, {hi[i]}] for generator {i}")
        zero[i] = not strict_eq28
    lo[n], hi[n] = -params.exchange.p_max, params.exchange.p_max
    lo[n + 1], hi[n + 1] = 0.0, params.load_res.beta_max
    return InputBox(lo=lo, hi=hi, zero_adjoined=zero)


def clip_array_to_box(x, box: InputBox) -> np.ndarray:
    """Axis-wise projection of a raw input vector onto the box. On a
    generator axis with {0} adjoined, the nearer of 0 and the interval
    projection wins; ties go to the interval."""
    x = np.asarray(x, dtype=float)
    if x.shape != (box.n_axes,):
        raise ContractViolation(f"input has shape {x.shape}, box has {box.n_axes} axes")
    proj = np.clip(x, box.lo, box.hi)
    take_zero = box.zero_adjoined & (np.abs(x) < np.abs(x - proj))
    proj[take_zero] = 0.0
    return proj


def clip_to_box(u: ControlInput, box: InputBox) -> ControlInput:
    """Project a control input onto the box, axis by axis."""
    proj = clip_array_to_box(u.as_array(), box)
    n_fg = box.n_axes - 2
    return ControlInput(gen_power=tuple(proj[:n_fg]), p_exg=float(proj[n_fg]),
                        beta=float(proj[n_fg + 1]))


# ---------------------------------------------------------------------------
# Validation and configuration
# ---------------------------------------------------------------------------

def validate_params(params: MicrogridParams) -> list[str]:
    """Check all structural parameter requirements, including the viability
    inequalities guaranteeing the balance equation can always be met.

    Returns the list of violated predicates (empty means valid).
    """
    v: list[str] = []
    if params.n_fg < 1:
        v.append("at least one generator is required")
    if params.ts <= 0:
        v.append(f"ts={params.ts} must be > 0")
    for i, g in enumerate(params.generators):
        if not 0 < g.p_min <= g.p_max:
            v.append(f"generator {i}: requires 0 < p_min <= p_max, got [{g.p_min}, {g.p_max}]")
        if not 0 < g.p_min <= g.dp_max:
            v.append(f"generator {i}: requires 0 < p_min <= dp_max (startup always allowed), "
                     f"got p_min={g.p_min}, dp_max={g.dp_max}")
        if g.theta2 < 0:
            v.append(f"generator {i}: theta2={g.theta2} must be >= 0 (convexity)")
        for name in ("theta1", "o_fg", "s_on", "s_off"):
            if getattr(g, name) < 0:
                v.append(f"generator {i}: {name}={getattr(g, name)} must be >= 0")
    e = params.ess
    if not 0 < e.eta_c <= 1:
        v.append(f"eta_c={e.eta_c} must be in (0, 1]")
    if not 0 < e.eta_d <= 1:
        v.append(f"eta_d={e.eta_d} must be in (0, 1]")
    if not e.soc_min < e.soc_max:
        v.append(f"requires soc_min < soc_max, got [{e.soc_min}, {e.soc_max}]")
    if e.p_max <= 0:
        v.append(f"ess p_max={e.p_max} must be > 0")
    if e.x_dg < 0:
        v.append(f"x_dg={e.x_dg} must be >= 0")
    if e.o_ess < 0:
        v.append(f"o_ess={e.o_ess} must be >= 0")
    x = params.exchange
    if not x.c_p >= x.c_s >= 0:
        v.append(f"requires c_p >= c_s >= 0, got c_p={x.c_p}, c_s={x.c_s}")
    if x.p_max <= 0:
        v.append(f"exchange p_max={x.p_max} must be > 0")
    lr = params.load_res
    if not 0 <= lr.beta_max <= 1:
        v.append(f"beta_max={lr.beta_max} must be in [0, 1]")
    if not 0 <= lr.p_load_min <= lr.p_load_max:
        v.append(f"load bounds invalid: [{lr.p_load_min}, {lr.p_load_max}]")
    if not 0 <= lr.p_res_min <= lr.p_res_max:
        v.append(f"RES bounds invalid: [{lr.p_res_min}, {lr.p_res_max}]")
    if lr.rho < 0:
        v.append(f"rho={lr.rho} must be >= 0")
    if v:
        return v  # viability checks below assume well-formed scalars

    # Viability: manageable inputs can always close the balance.
    sum_pmax = sum(g.p_max for g in params.generators)
    sum_pmin = sum(g.p_min for g in params.generators)
    if not sum_pmax + x.p_max >= e.p_max + lr.p_load_max - lr.p_res_min:
        v.append("viability (surplus capacity): sum(p_max) + p_exg_max >= "
                 "p_ess_max + p_load_max - p_res_min violated")
    if not sum_pmin - x.p_max <= -e.p_max + (1 - lr.beta_max) * lr.p_load_min - lr.p_res_max:
        v.append("viability (absorption capacity): sum(p_min) - p_exg_max <= "
                 "-p_ess_max + (1 - beta_max) * p_load_min - p_res_max violated")
    return v


def reference_params() -> MicrogridParams:
    """Default two-generator configuration used throughout the examples and
    tests; satisfies validate_params."""
    return MicrogridParams(
        generators=(
            GeneratorParams(theta1=0.30, theta2=0.002, o_fg=1.0, s_on=2.0, s_off=1.0,
                            p_min=5.0, p_max=60.0, dp_max=20.0),
            GeneratorParams(theta1=0.40, theta2=0.003, o_fg=1.2, s_on=2.5, s_off=1.5,
                            p_min=5.0, p_max=80.0, dp_max=25.0),
        ),
        ess=EssParams(eta_c=0.95, eta_d=0.95, x_dg=0.2, o_ess=0.05, p_max=30.0,
                      soc_min=10.0, soc_max=90.0),
        exchange=ExchangeParams(c_p=0.20, c_s=0.10, p_max=150.0),
        load_res=LoadResParams(rho=0.8, beta_max=0.3, p_load_min=20.0, p_load_max=150.0,
                               p_res_min=0.0, p_res_max=120.0),
        ts=1.0,
    )


_GEN_FIELDS = ("theta1", "theta2", "o_fg", "s_on", "s_off", "p_min", "p_max", "dp_max")
_ESS_FIELDS = ("eta_c", "eta_d", "x_dg", "o_ess", "p_max", "soc_min", "soc_max")
_EXG_FIELDS = ("c_p", "c_s", "p_max")
_LR_FIELDS = ("rho", "beta_max", "p_load_min", "p_load_max", "p_res_min", "p_res_max")


def _take(section: dict, fields, where: str) -> dict:
    unknown = set(section) - set(fields)
    if unknown:
        raise ValueError(f"unknown keys {sorted(unknown)} in {where}")
    missing = set(fields) - set(section)
    if missing:
        raise ValueError(f"missing keys {sorted(missing)} in {where}")
    return {k: float(section[k]) for k in fields}


def params_from_dict(doc: dict) -> MicrogridParams:
    """Build MicrogridParams from a config document, rejecting unknown keys."""
    top = {"generators", "ess", "exchange", "load_res", "ts"}
    unknown = set(doc) - top
    if unknown:
        raise ValueError(f"unknown top-level keys {sorted(unknown)}")
    missing = top - set(doc)
    if missing:
        raise ValueError(f"missing top-level keys {sorted(missing)}")
    gens = tuple(GeneratorParams(**_take(g, _GEN_FIELDS, f"generators[{i}]"))
                 for i, g in enumerate(doc["generators"]))
    params = MicrogridParams(
        generators=gens,
        ess=EssParams(**_take(doc["ess"], _ESS_FIELDS, "ess")),
        exchange=ExchangeParams(**_take(doc["exchange"], _EXG_FIELDS, "exchange")),
        load_res=LoadResParams(**_take(doc["load_res"], _LR_FIELDS, "load_res")),
        ts=float(doc["ts"]),
    )
    violations = validate_params(params)
    if violations:
        raise ValueError("invalid microgrid config:\n  " + "\n  ".join(violations))
    return params


def params_to_dict(params: MicrogridParams) -> dict:
    return {
        "generators": [{k: getattr(g, k) for k in _GEN_FIELDS} for g in params.generators],
        "ess": {k: getattr(params.ess, k) for k in _ESS_FIELDS},
        "exchange": {k: getattr(params.exchange, k) for k in _EXG_FIELDS},
        "load_res": {k: getattr(params.load_res, k) for k in _LR_FIELDS},
        "ts": params.ts,
    }


def load_params(path) -> MicrogridParams:
    with open(path, "r", encoding="utf-8") as f:
        return params_from_dict(json.load(f))


def save_params(params: MicrogridParams, path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        json.dump(params_to_dict(params), f, indent=2)
        f.write("\n")
