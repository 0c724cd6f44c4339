"""Closed-loop receding-horizon simulation of a controller over scenario
batches, with economic and computation-time metrics and comparison reports.

Controllers are callables (state, forecasts) -> ControlInput; if the
controller exposes ``last_solve_time`` that value is used as the per-step
decision time (the expert reports pure solver time there, excluding problem
construction), otherwise the wall time around the call is used.
"""

from __future__ import annotations

import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from mgempc.empc import InfeasibleProblemError
from mgempc.grid import (MicrogridParams, PriceSample, augmented_step,
                         ess_power_from_balance, initial_state,
                         total_stage_cost)
from mgempc.scenario import ForecastConfig, Scenario, default_forecast_config, forecast

_VIOL_TOL = 1e-9


@dataclass(frozen=True)
class SimConfig:
    t_sim: int = 24
    horizon: int = 6
    forecast_cfg: ForecastConfig | None = None
    timing: str = "wall"       # "wall" | "off" (zeroes recorded times)

    def __post_init__(self):
        if self.t_sim < 1:
            raise ValueError("t_sim must be >= 1")
        if self.timing not in ("wall", "off"):
            raise ValueError(f"unknown timing mode {self.timing!r}")
        if self.forecast_cfg is None:
            object.__setattr__(self, "forecast_cfg",
                               default_forecast_config(self.horizon))


@dataclass
class StepRecord:
    t: int
    soc_before: float
    u: tuple
    w: tuple                   # (p_res, p_load) realized
    price: tuple               # (c_p, c_s) realized
    p_ess: float
    stage_cost: float
    delta_t: float
    soc_after: float
    soc_violation: bool
    ess_power_violation: bool


@dataclass
class EpisodeResult:
    scenario_id: int
    steps: list[StepRecord]
    j_eco: float
    j_time: float
    n_soc_violations: int
    max_soc_excursion: float
    aborted: bool = False
    error: str | None = None


def simulate_episode(controller, s: Scenario, params: MicrogridParams,
                     cfg: SimConfig) -> EpisodeResult:
    """Run one closed-loop episode.

    Each step: build the forecast window, query the controller (timed),
    derive the battery power from the bus balance, price the step with the
    realized disturbances and prices, and advance the state. Battery limit
    and SoC-band excursions are flagged, never repaired; an infeasible
    expert problem aborts the episode with a diagnostic.
    """
    if s.n_steps < cfg.t_sim + cfg.horizon:
        raise ValueError(f"scenario {s.id} has {s.n_steps} steps; needs "
                         f">= {cfg.t_sim + cfg.horizon}")
    e = params.ess
    state = initial_state(params, s.soc0)
    steps: list[StepRecord] = []
    j_eco = 0.0
    j_time = 0.0
    nviol = 0
    excursion = 0.0
    for t in range(cfg.t_sim):
        fcs = forecast(s, t, cfg.horizon, cfg.forecast_cfg, params.load_res)
        t0 = time.perf_counter()
        try:
            u = controller(state, fcs)
        except InfeasibleProblemError as err:
            return EpisodeResult(scenario_id=s.id, steps=steps, j_eco=j_eco,
                                 j_time=j_time, n_soc_violations=nviol,
                                 max_soc_excursion=excursion, aborted=True,
                                 error=f"step {t}: {err}")
        wall = time.perf_counter() - t0
        delta = getattr(controller, "last_solve_time", None)
        if delta is None:
            delta = wall
        if cfg.timing == "off":
            delta = 0.0

        w = s.disturbance(t)
        price = PriceSample(c_p=float(s.prices_buy.values[t]),
                            c_s=float(s.prices_sell.values[t]))
        p_ess = ess_power_from_balance(u.gen_power, u.p_exg, u.beta, w)
        cost = total_stage_cost(params, state, u, w, price, check=False)
        new_state = augmented_step(params, state, u, w)
        soc_bad = (new_state.soc < e.soc_min - _VIOL_TOL
                   or new_state.soc > e.soc_max + _VIOL_TOL)
        exc = max(e.soc_min - new_state.soc, new_state.soc - e.soc_max, 0.0)
        ess_bad = abs(p_ess) > e.p_max + _VIOL_TOL
        steps.append(StepRecord(t=t, soc_before=state.soc,
                                u=tuple(u.as_array()),
                                w=(w.p_res, w.p_load),
                                price=(price.c_p, price.c_s), p_ess=p_ess,
                                stage_cost=cost, delta_t=delta,
                                soc_after=new_state.soc,
                                soc_violation=soc_bad,
                                ess_power_violation=ess_bad))
        j_eco += cost
        j_time += delta
        nviol += int(soc_bad)
        excursion = max(excursion, exc)
        state = new_state
    return EpisodeResult(scenario_id=s.id, steps=steps, j_eco=j_eco,
                         j_time=j_time, n_soc_violations=nviol,
                         max_soc_excursion=excursion)


@dataclass
class ComparisonReport:
    controllers: list[str]
    reference: str
    episodes: dict                      # name -> {scenario_id: EpisodeResult}
    failures: dict = field(default_factory=dict)  # name -> list of (sid, error)

    def metric(self, name: str, key: str) -> dict:
        out = {}
        for sid, ep in self.episodes[name].items():
            if not ep.aborted:
                out[sid] = getattr(ep, key)
        return out

    def ratios(self, name: str, key: str) -> dict:
        """Per-scenario metric ratio vs the reference controller, over
        scenarios where both completed."""
        ours = self.metric(name, key)
        ref = self.metric(self.reference, key)
        return {sid: ours[sid] / ref[sid] for sid in sorted(set(ours) & set(ref))
                if ref[sid] != 0.0}

    def summary(self) -> list[dict]:
        rows = []
        for name in self.controllers:
            eco = np.array(sorted(self.metric(name, "j_eco").values()))
            tim = np.array(sorted(self.metric(name, "j_time").values()))
            eco_r = np.array(sorted(self.ratios(name, "j_eco").values()))
            tim_r = np.array(sorted(self.ratios(name, "j_time").values()))
            viol = sum(ep.n_soc_violations for ep in self.episodes[name].values())
            rows.append({
                "controller": name,
                "episodes": len(self.episodes[name]),
                "failures": len(self.failures.get(name, [])),
                "j_eco_median": float(np.median(eco)) if eco.size else np.nan,
                "j_eco_mean": float(np.mean(eco)) if eco.size else np.nan,
                "j_eco_q25": float(np.percentile(eco, 25)) if eco.size else np.nan,
                "j_eco_q75": float(np.percentile(eco, 75)) if eco.size else np.nan,
                "j_time_median": float(np.median(tim)) if tim.size else np.nan,
                "j_eco_ratio_median": float(np.median(eco_r)) if eco_r.size else np.nan,
                "j_time_ratio_median": float(np.median(tim_r)) if tim_r.size else np.nan,
                "soc_violations": int(viol),
            })
        return rows


def _run_episode(args):
    name, factory, s, params, cfg = args
    controller = factory()
    return name, s.id, simulate_episode(controller, s, params, cfg)


def run_batch(controllers, scenarios, params: MicrogridParams, cfg: SimConfig,
              reference: str | None = None, jobs: int = 1,
              progress=None) -> ComparisonReport:
    """Evaluate each controller over the same scenario batch.

    ``controllers`` is an ordered list of (name, factory) pairs; a fresh
    controller is built per episode so no state leaks across episodes or
    controllers. Forecast and price streams depend only on the scenario, so
    every controller sees identical inputs. Timed comparisons should run
    with jobs=1.
    """
    names = [n for n, _ in controllers]
    if reference is None:
        reference = names[0]
    if reference not in names:
        raise ValueError(f"reference {reference!r} not among controllers {names}")
    work = [(name, factory, s, params, cfg)
            for name, factory in controllers for s in scenarios]
    episodes = {n: {} for n in names}
    failures = {n: [] for n in names}
    done = 0
    if jobs > 1 and cfg.timing == "wall":
        jobs = 1  # timing comparisons must not share cores
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            results = ex.map(_run_episode, work, chunksize=1)
            for name, sid, ep in results:
                episodes[name][sid] = ep
                if ep.aborted:
                    failures[name].append((sid, ep.error))
                done += 1
                if progress:
                    progress(done, len(work))
    else:
        for args in work:
            name, sid, ep = _run_episode(args)
            episodes[name][sid] = ep
            if ep.aborted:
                failures[name].append((sid, ep.error))
            done += 1
            if progress:
                progress(done, len(work))
    return ComparisonReport(controllers=names, reference=reference,
                            episodes=episodes, failures=failures)


# ---------------------------------------------------------------------------
# Report files
# ---------------------------------------------------------------------------

REPORT_HEADER = "controller,scenario_id,J_eco,J_time,n_soc_violations,max_soc_excursion"


def export_report(report: ComparisonReport, base_path, formats=("csv", "markdown")):
    """Write the per-episode table and/or a summary; deterministic ordering.

    Returns the list of files written. ``base_path`` is extended with .csv
    and .md.
    """
    base = str(base_path)
    if base.endswith(".csv") or base.endswith(".md"):
        base = base.rsplit(".", 1)[0]
    written = []
    if "csv" in formats:
        lines = [REPORT_HEADER]
        for name in report.controllers:
            for sid in sorted(report.episodes[name]):
                ep = report.episodes[name][sid]
                if ep.aborted:
                    continue
                lines.append(",".join([name, str(sid), repr(ep.j_eco),
                                       repr(ep.j_time),
                                       str(ep.n_soc_violations),
                                       repr(ep.max_soc_excursion)]))
        path = base + ".csv"
        with open(path, "w", encoding="utf-8") as f:
            f.write("\n".join(lines) + "\n")
        written.append(path)
    if "markdown" in formats:
        rows = report.summary()
        cols = ["controller", "episodes", "failures", "j_eco_median",
                "j_eco_mean", "j_eco_q25", "j_eco_q75", "j_eco_ratio_median",
                "j_time_median", "j_time_ratio_median", "soc_violations"]
        lines = ["# Closed-loop comparison", "",
                 f"Reference controller: `{report.reference}`", "",
                 "| " + " | ".join(cols) + " |",
                 "|" + "|".join(["---"] * len(cols)) + "|"]
        for r in rows:
            cells = []
            for c in cols:
                v = r[c]
                cells.append(f"{v:.6g}" if isinstance(v, float) else str(v))
            lines.append("| " + " | ".join(cells) + " |")
        for name in report.controllers:
            for sid, err in report.failures.get(name, []):
                lines.append(f"\n- failure: `{name}` scenario {sid}: {err}")
        path = base + ".md"
        with open(path, "w", encoding="utf-8") as f:
            f.write("\n".join(lines) + "\n")
        written.append(path)
    return written


def load_report_csv(path) -> list[dict]:
    with open(path, "r", encoding="utf-8") as f:
        raw = f.read().splitlines()
    if not raw or raw[0] != REPORT_HEADER:
        raise ValueError(f"unexpected report header {raw[0] if raw else ''!r}")
    out = []
    for line in raw[1:]:
        if not line.strip():
            continue
        c, sid, je, jt, nv, mx = line.split(",")
        out.append({"controller": c, "scenario_id": int(sid), "J_eco": float(je),
                    "J_time": float(jt), "n_soc_violations": int(nv),
                    "max_soc_excursion": float(mx)})
    return out
