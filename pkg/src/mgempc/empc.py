"""Expert economic MPC: translate the microgrid model over a prediction
horizon into a mixed-integer QP (big-M / logical reformulation) and expose
the receding-horizon expert policy.

Per stage the decision variables are the generator powers, the exchange
power, the curtailment fraction, the battery power, and the two auxiliary
products z_ess = d_ess * P_ess and z_exg = d_exg * P_exg; the binaries are
the generator ON flags, the charge/discharge flag, the purchase/sale flag,
and the ON-product binaries used to linearize switching costs. Battery SoC
states close the chain.
"""

from __future__ import annotations

import time
import warnings
from dataclasses import dataclass

import numpy as np

from mgempc import grid, miqp
from mgempc.grid import (ControlInput, Disturbance, GridState, MicrogridParams,
                         PriceSample, clip_to_box, input_box)


class InfeasibleProblemError(RuntimeError):
    """The expert MIQP has no feasible point; ``stage`` locates the first
    conflicting prediction step when it can be identified."""

    def __init__(self, message: str, stage: int | None = None):
        super().__init__(message if stage is None else f"{message} (stage {stage})")
        self.stage = stage


@dataclass(frozen=True)
class InfoTuple:
    """Everything parameterizing one expert solve: measured SoC, previous
    generator outputs/status, and the forecast disturbances over the horizon."""

    soc0: float
    prev_gen_power: tuple[float, ...]
    prev_gen_on: tuple[int, ...]
    forecasts: tuple[Disturbance, ...]

    def __post_init__(self):
        object.__setattr__(self, "prev_gen_power", tuple(self.prev_gen_power))
        object.__setattr__(self, "prev_gen_on", tuple(int(d) for d in self.prev_gen_on))
        object.__setattr__(self, "forecasts", tuple(self.forecasts))
        for p, d in zip(self.prev_gen_power, self.prev_gen_on):
            if d not in (0, 1) or (d == 1) != (p > grid.TOL_ON):
                raise ValueError(f"inconsistent previous generator fields ({p}, {d})")


def info_from_state(state: GridState, forecasts) -> InfoTuple:
    return InfoTuple(soc0=state.soc, prev_gen_power=state.prev_gen_power,
                     prev_gen_on=state.prev_gen_on, forecasts=tuple(forecasts))


@dataclass(frozen=True)
class EmpcConfig:
    horizon: int = 6
    c_p: float | None = None        # nominal prices; None = take from params
    c_s: float | None = None
    mip_gap: float = 1e-6
    time_limit: float | None = None
    allow_shutdown: bool = False    # relax the ramp rows so ON units may stop

    def __post_init__(self):
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")
        if self.mip_gap < 0:
            raise ValueError("mip_gap must be >= 0")

    def nominal_prices(self, params: MicrogridParams) -> PriceSample:
        return PriceSample(
            c_p=params.exchange.c_p if self.c_p is None else self.c_p,
            c_s=params.exchange.c_s if self.c_s is None else self.c_s)


def stage_width(n_fg: int) -> int:
    return 3 * n_fg + 7


def build_layout(n_fg: int, horizon: int) -> dict:
    """Column layout: stage-major, continuous block then binary block per
    stage, SoC states last."""
    layout = {}
    w = stage_width(n_fg)
    for k in range(horizon):
        base = k * w
        for i in range(n_fg):
            layout[(f"p_fg{i}", k)] = base + i
        layout[("p_exg", k)] = base + n_fg
        layout[("beta", k)] = base + n_fg + 1
        layout[("p_ess", k)] = base + n_fg + 2
        layout[("z_ess", k)] = base + n_fg + 3
        layout[("z_exg", k)] = base + n_fg + 4
        for i in range(n_fg):
            layout[(f"d_fg{i}", k)] = base + n_fg + 5 + i
        layout[("d_ess", k)] = base + 2 * n_fg + 5
        layout[("d_exg", k)] = base + 2 * n_fg + 6
        for i in range(n_fg):
            layout[(f"zb_fg{i}", k)] = base + 2 * n_fg + 7 + i
    soc_base = horizon * w
    for k in range(horizon + 1):
        layout[("soc", k)] = soc_base + k
    return layout


def build_empc_miqp(params: MicrogridParams, info: InfoTuple,
                    cfg: EmpcConfig) -> miqp.MiqpProblem:
    """Assemble the horizon problem for one information tuple.

    The SoC band is imposed on every predicted state soc_1..soc_T; the
    measured soc_0 enters as data, so a measured excursion outside the band
    is steered back rather than declared infeasible.
    """
    bad = grid.validate_params(params)
    if bad:
        raise ValueError("invalid microgrid parameters:\n  " + "\n  ".join(bad))
    T = cfg.horizon
    if len(info.forecasts) != T:
        raise ValueError(f"expected {T} forecast steps, got {len(info.forecasts)}")
    n_fg = params.n_fg
    if len(info.prev_gen_power) != n_fg:
        raise ValueError("prev_gen_power length mismatch")
    price = cfg.nominal_prices(params)
    e, lr, ts = params.ess, params.load_res, params.ts
    pbar_ess, pbar_exg = e.p_max, params.exchange.p_max

    layout = build_layout(n_fg, T)
    n = T * stage_width(n_fg) + T + 1
    Q = np.zeros((n, n))
    c = np.zeros(n)
    const0 = 0.0
    lb = np.full(n, -np.inf)
    ub = np.full(n, np.inf)
    binary_idx = []

    res_hat = np.array([w.p_res for w in info.forecasts])
    load_hat = np.array([w.p_load for w in info.forecasts])

    eq_rows, eq_rhs, eq_tags = [], [], []
    in_rows, in_rhs, in_tags = [], [], []

    def add_eq(cols, vals, rhs, tag):
        row = np.zeros(n)
        row[cols] = vals
        eq_rows.append(row)
        eq_rhs.append(rhs)
        eq_tags.append(tag)

    def add_in(cols, vals, rhs, tag):
        row = np.zeros(n)
        row[cols] = vals
        in_rows.append(row)
        in_rhs.append(rhs)
        in_tags.append(tag)

    L = layout
    for k in range(T):
        pfg = [L[(f"p_fg{i}", k)] for i in range(n_fg)]
        dfg = [L[(f"d_fg{i}", k)] for i in range(n_fg)]
        zbf = [L[(f"zb_fg{i}", k)] for i in range(n_fg)]
        pexg, beta = L[("p_exg", k)], L[("beta", k)]
        pess, zess, zexg = L[("p_ess", k)], L[("z_ess", k)], L[("z_exg", k)]
        dess, dexg = L[("d_ess", k)], L[("d_exg", k)]
        soc_k, soc_k1 = L[("soc", k)], L[("soc", k + 1)]
        binary_idx += dfg + [dess, dexg] + zbf

        # objective
        for i, g in enumerate(params.generators):
            Q[pfg[i], pfg[i]] += 2.0 * g.theta2
            c[pfg[i]] += g.theta1
            c[dfg[i]] += g.o_fg + g.s_on
            c[zbf[i]] += -(g.s_on + g.s_off)
            if k == 0:
                const0 += g.s_off * info.prev_gen_on[i]
            else:
                c[L[(f"d_fg{i}", k - 1)]] += g.s_off
        c[zess] += 2.0 * e.o_ess
        c[pess] += -e.o_ess
        c[zexg] += price.c_p - price.c_s
        c[pexg] += price.c_s
        c[beta] += lr.rho * load_hat[k]

        # SoC dynamics (charging efficiency enters through z_ess)
        add_eq([soc_k1, soc_k, zess, pess],
               [1.0, -1.0, -ts * (e.eta_c - 1.0 / e.eta_d), -ts / e.eta_d],
               -ts * e.x_dg, ("dyn", k))
        # bus power balance under forecast disturbances
        add_eq(pfg + [pexg, pess, beta],
               [1.0] * n_fg + [1.0, -1.0, load_hat[k]],
               load_hat[k] - res_hat[k], ("bal", k))

        for i, g in enumerate(params.generators):
            add_in([dfg[i], pfg[i]], [g.p_min, -1.0], 0.0, ("fg_lo", i, k))
            add_in([pfg[i], dfg[i]], [1.0, -g.p_max], 0.0, ("fg_hi", i, k))
            # ramp rows; with allow_shutdown the budget follows
            # max(d(k), d(k-1)) = d(k) + d(k-1) - zb(k)
            if k == 0:
                prev_p = info.prev_gen_power[i]
                prev_d = info.prev_gen_on[i]
                if cfg.allow_shutdown:
                    add_in([pfg[i], dfg[i], zbf[i]], [1.0, -g.dp_max, g.dp_max],
                           prev_p + g.dp_max * prev_d, ("ramp_up", i, k))
                    add_in([pfg[i], dfg[i], zbf[i]], [-1.0, -g.dp_max, g.dp_max],
                           -prev_p + g.dp_max * prev_d, ("ramp_dn", i, k))
                else:
                    add_in([pfg[i], dfg[i]], [1.0, -g.dp_max], prev_p, ("ramp_up", i, k))
                    add_in([pfg[i], dfg[i]], [-1.0, -g.dp_max], -prev_p, ("ramp_dn", i, k))
            else:
                pfg_prev = L[(f"p_fg{i}", k - 1)]
                dfg_prev = L[(f"d_fg{i}", k - 1)]
                if cfg.allow_shutdown:
                    add_in([pfg[i], pfg_prev, dfg[i], dfg_prev, zbf[i]],
                           [1.0, -1.0, -g.dp_max, -g.dp_max, g.dp_max], 0.0,
                           ("ramp_up", i, k))
                    add_in([pfg[i], pfg_prev, dfg[i], dfg_prev, zbf[i]],
                           [-1.0, 1.0, -g.dp_max, -g.dp_max, g.dp_max], 0.0,
                           ("ramp_dn", i, k))
                else:
                    add_in([pfg[i], pfg_prev, dfg[i]], [1.0, -1.0, -g.dp_max], 0.0,
                           ("ramp_up", i, k))
                    add_in([pfg[i], pfg_prev, dfg[i]], [-1.0, 1.0, -g.dp_max], 0.0,
                           ("ramp_dn", i, k))
            # ON-product binary zb = d(k) * d(k-1)
            add_in([zbf[i], dfg[i]], [1.0, -1.0], 0.0, ("zb_le_d", i, k))
            if k == 0:
                add_in([zbf[i]], [1.0], float(info.prev_gen_on[i]), ("zb_le_prev", i, k))
                add_in([dfg[i], zbf[i]], [1.0, -1.0], 1.0 - info.prev_gen_on[i],
                       ("zb_ge", i, k))
            else:
                add_in([zbf[i], L[(f"d_fg{i}", k - 1)]], [1.0, -1.0], 0.0,
                       ("zb_le_prev", i, k))
                add_in([dfg[i], L[(f"d_fg{i}", k - 1)], zbf[i]], [1.0, 1.0, -1.0], 1.0,
                       ("zb_ge", i, k))
            if not cfg.allow_shutdown:
                # the literal ramp rule forbids shutting an ON unit down, so
                # the ON flag is nondecreasing along the horizon; stating it
                # explicitly keeps relaxations tight once a unit is committed
                if k == 0:
                    add_in([dfg[i]], [-1.0], -float(info.prev_gen_on[i]),
                           ("fg_mono", i, k))
                else:
                    add_in([L[(f"d_fg{i}", k - 1)], dfg[i]], [1.0, -1.0], 0.0,
                           ("fg_mono", i, k))

        # z_ess = d_ess * P_ess and the charge/discharge sign link
        add_in([zess, dess], [1.0, -pbar_ess], 0.0, ("zess_cap_hi", k))
        add_in([zess, dess], [-1.0, -pbar_ess], 0.0, ("zess_cap_lo", k))
        add_in([pess, zess, dess], [1.0, -1.0, pbar_ess], pbar_ess, ("zess_link_hi", k))
        add_in([zess, pess, dess], [1.0, -1.0, pbar_ess], pbar_ess, ("zess_link_lo", k))
        add_in([pess, dess], [1.0, -pbar_ess], 0.0, ("ess_sign_hi", k))
        add_in([pess, dess], [-1.0, pbar_ess], pbar_ess, ("ess_sign_lo", k))
        # implied by the sign logic at integral d_ess (z = max(0, P) there);
        # closes the relaxation to the hull of the disjunction, which keeps
        # branch-and-bound trees small
        add_in([zess], [-1.0], 0.0, ("zess_hull_nonneg", k))
        add_in([pess, zess], [1.0, -1.0], 0.0, ("zess_hull_gep", k))

        # z_exg = d_exg * P_exg and the purchase/sale sign link
        add_in([zexg, dexg], [1.0, -pbar_exg], 0.0, ("zexg_cap_hi", k))
        add_in([zexg, dexg], [-1.0, -pbar_exg], 0.0, ("zexg_cap_lo", k))
        add_in([pexg, zexg, dexg], [1.0, -1.0, pbar_exg], pbar_exg, ("zexg_link_hi", k))
        add_in([zexg, pexg, dexg], [1.0, -1.0, pbar_exg], pbar_exg, ("zexg_link_lo", k))
        add_in([pexg, dexg], [1.0, -pbar_exg], 0.0, ("exg_sign_hi", k))
        add_in([pexg, dexg], [-1.0, pbar_exg], pbar_exg, ("exg_sign_lo", k))
        add_in([zexg], [-1.0], 0.0, ("zexg_hull_nonneg", k))
        add_in([pexg, zexg], [1.0, -1.0], 0.0, ("zexg_hull_gep", k))

        # variable bounds
        for i, g in enumerate(params.generators):
            lb[pfg[i]], ub[pfg[i]] = 0.0, g.p_max
        lb[pexg], ub[pexg] = -pbar_exg, pbar_exg
        lb[beta], ub[beta] = 0.0, lr.beta_max
        lb[pess], ub[pess] = -pbar_ess, pbar_ess
        lb[zess], ub[zess] = -pbar_ess, pbar_ess
        lb[zexg], ub[zexg] = -pbar_exg, pbar_exg

    for j in binary_idx:
        lb[j], ub[j] = 0.0, 1.0
    lb[L[("soc", 0)]] = ub[L[("soc", 0)]] = info.soc0
    for k in range(1, T + 1):
        lb[L[("soc", k)]] = e.soc_min
        ub[L[("soc", k)]] = e.soc_max

    prob = miqp.MiqpProblem(
        Q=Q, c=c, const0=const0,
        A_eq=np.asarray(eq_rows).reshape(len(eq_rows), n), b_eq=np.asarray(eq_rhs),
        A_in=np.asarray(in_rows).reshape(len(in_rows), n), b_in=np.asarray(in_rhs),
        lb=lb, ub=ub, binary_idx=np.array(sorted(binary_idx), dtype=int),
        layout=layout, row_tags={"eq": eq_tags, "in": in_tags})
    prob.validate()
    return prob


# ---------------------------------------------------------------------------
# Decoding solver output back into trajectories
# ---------------------------------------------------------------------------

def decode_stages(prob: miqp.MiqpProblem, x: np.ndarray, n_fg: int, horizon: int) -> dict:
    """Read per-stage variable values out of a solution vector."""
    L = prob.layout
    g = lambda name, k: x[L[(name, k)]]
    return {
        "p_fg": np.array([[g(f"p_fg{i}", k) for i in range(n_fg)] for k in range(horizon)]),
        "d_fg": np.array([[g(f"d_fg{i}", k) for i in range(n_fg)] for k in range(horizon)]),
        "zb_fg": np.array([[g(f"zb_fg{i}", k) for i in range(n_fg)] for k in range(horizon)]),
        "p_exg": np.array([g("p_exg", k) for k in range(horizon)]),
        "beta": np.array([g("beta", k) for k in range(horizon)]),
        "p_ess": np.array([g("p_ess", k) for k in range(horizon)]),
        "z_ess": np.array([g("z_ess", k) for k in range(horizon)]),
        "z_exg": np.array([g("z_exg", k) for k in range(horizon)]),
        "d_ess": np.array([g("d_ess", k) for k in range(horizon)]),
        "d_exg": np.array([g("d_exg", k) for k in range(horizon)]),
        "soc": np.array([g("soc", k) for k in range(horizon + 1)]),
    }


def decode_objective(params: MicrogridParams, info: InfoTuple, cfg: EmpcConfig,
                     prob: miqp.MiqpProblem, x: np.ndarray) -> float:
    """Re-price a solution through the plain stage-cost functions (forecast
    disturbances, nominal prices). Independent of the quadratic-form data, so
    it cross-checks the objective assembly."""
    T = cfg.horizon
    st = decode_stages(prob, x, params.n_fg, T)
    price = cfg.nominal_prices(params)
    total = 0.0
    prev_on = list(info.prev_gen_on)
    for k in range(T):
        for i, gp in enumerate(params.generators):
            on = int(round(st["d_fg"][k, i]))
            p = st["p_fg"][k, i] if on else 0.0
            total += grid.generator_stage_cost(gp, p, on, prev_on[i])
        total += grid.ess_stage_cost(params.ess, st["p_ess"][k])
        total += grid.load_stage_cost(params.load_res, st["beta"][k],
                                      info.forecasts[k].p_load)
        total += grid.exchange_stage_cost(price, st["p_exg"][k])
        prev_on = [int(round(d)) for d in st["d_fg"][k]]
    return total


# ---------------------------------------------------------------------------
# Expert policy
# ---------------------------------------------------------------------------

@dataclass
class SolveStats:
    solve_time: float
    nodes: int
    gap: float
    objective: float
    status: str


def _first_conflict_stage(prob: miqp.MiqpProblem, opts: miqp.SolverOptions) -> int | None:
    sol = miqp.solve_qp_relaxation(prob, {}, opts)
    if sol.infeasible_row is None:
        return None
    kind, row = sol.infeasible_row
    tags = prob.row_tags.get(kind)
    if tags is not None and 0 <= row < len(tags):
        return tags[row][-1]
    return None


def expert_action(params: MicrogridParams, info: InfoTuple, cfg: EmpcConfig,
                  opts: miqp.SolverOptions | None = None,
                  strict_eq28: bool = False,
                  warm=None) -> tuple[ControlInput, SolveStats, tuple]:
    """Solve the horizon problem and return the first-stage input.

    Only the branch-and-bound call is timed; problem construction is not.
    """
    base = opts or miqp.SolverOptions()
    opts = miqp.SolverOptions(
        tol_kkt=base.tol_kkt, tol_feas=base.tol_feas, tol_int=base.tol_int,
        mip_gap=cfg.mip_gap, node_limit=base.node_limit,
        time_limit=cfg.time_limit if cfg.time_limit is not None else base.time_limit,
        branching=base.branching, node_order=base.node_order)
    prob = build_empc_miqp(params, info, cfg)

    warm_active, warm_x = warm if warm else (None, None)
    t0 = time.perf_counter()
    res = miqp.solve_bnb(prob, opts, warm_active=warm_active, warm_x=warm_x)
    dt = time.perf_counter() - t0

    if res.incumbent is None:
        stage = _first_conflict_stage(prob, opts)
        raise InfeasibleProblemError(
            f"expert horizon problem infeasible (soc0={info.soc0:.3f})", stage)
    if res.status in ("time_limit", "node_limit"):
        warnings.warn(f"branch and bound hit {res.status}; returning best incumbent "
                      f"with relative gap {res.gap:.3g}")

    L = prob.layout
    gen = []
    for i, g in enumerate(params.generators):
        p = float(res.incumbent[L[(f"p_fg{i}", 0)]])
        gen.append(0.0 if p < g.p_min / 2 else p)
    u = ControlInput(gen_power=tuple(gen),
                     p_exg=float(res.incumbent[L[("p_exg", 0)]]),
                     beta=float(np.clip(res.incumbent[L[("beta", 0)]], 0.0, 1.0)))
    state = GridState(soc=info.soc0, prev_gen_power=info.prev_gen_power,
                      prev_gen_on=info.prev_gen_on)
    u = clip_to_box(u, input_box(params, state, strict_eq28=strict_eq28))
    stats = SolveStats(solve_time=dt, nodes=res.nodes_explored, gap=res.gap,
                       objective=res.objective, status=res.status)
    return u, stats, (res.root_active, res.root_x)


class ExpertController:
    """Receding-horizon expert policy: maps (state, forecasts) to the applied
    input by solving the horizon problem afresh each call.

    ``last_solve_time`` reports only the most recent solver wall time (problem
    construction excluded), which is the convention used for timing metrics.
    """

    name = "empc"

    def __init__(self, params: MicrogridParams, cfg: EmpcConfig,
                 opts: miqp.SolverOptions | None = None, strict_eq28: bool = False):
        self.params = params
        self.cfg = cfg
        self.opts = opts or miqp.SolverOptions()
        self.strict_eq28 = strict_eq28
        self.last_solve_time: float | None = None
        self.last_stats: SolveStats | None = None
        self.total_solve_time = 0.0
        self.calls = 0
        self._warm = None

    def __call__(self, state: GridState, forecasts) -> ControlInput:
        info = info_from_state(state, forecasts)
        u, stats, self._warm = expert_action(self.params, info, self.cfg, self.opts,
                                             strict_eq28=self.strict_eq28,
                                             warm=self._warm)
        self.last_solve_time = stats.solve_time
        self.last_stats = stats
        self.total_solve_time += stats.solve_time
        self.calls += 1
        return u


def empc_policy_closure(params: MicrogridParams, cfg: EmpcConfig,
                        opts: miqp.SolverOptions | None = None,
                        strict_eq28: bool = False) -> ExpertController:
    return ExpertController(params, cfg, opts, strict_eq28)
