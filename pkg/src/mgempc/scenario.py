"""Disturbance realizations, bounded-noise forecasts and time-varying price
profiles for closed-loop experiments, with CSV persistence.

A scenario bundles one two-day disturbance realization (aggregated renewable
generation and load), one realized price trajectory, an initial battery SoC
and a forecast seed. Everything is generated from explicit seeds so scenario
files are byte-reproducible.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from mgempc.grid import Disturbance, LoadResParams, MicrogridParams

FORMAT_VERSION = 1
_HEADER = "scenario_id,t,p_res_true,p_load_true,c_p,c_s"


@dataclass(frozen=True)
class Profile:
    values: np.ndarray
    kind: str  # pv | wind | res | load | price_buy | price_sell

    def __post_init__(self):
        object.__setattr__(self, "values", np.asarray(self.values, dtype=float))

    def __len__(self):
        return self.values.shape[0]


@dataclass(frozen=True)
class Scenario:
    id: int
    soc0: float
    true_res: Profile
    true_load: Profile
    prices_buy: Profile
    prices_sell: Profile
    forecast_seed: int
    realization: int = 0

    @property
    def n_steps(self) -> int:
        return len(self.true_res)

    def disturbance(self, t: int) -> Disturbance:
        return Disturbance(p_res=float(self.true_res.values[t]),
                           p_load=float(self.true_load.values[t]))


def scenarios_equal(a: Scenario, b: Scenario) -> bool:
    return (a.id == b.id and a.soc0 == b.soc0 and a.forecast_seed == b.forecast_seed
            and np.array_equal(a.true_res.values, b.true_res.values)
            and np.array_equal(a.true_load.values, b.true_load.values)
            and np.array_equal(a.prices_buy.values, b.prices_buy.values)
            and np.array_equal(a.prices_sell.values, b.prices_sell.values))


@dataclass(frozen=True)
class ForecastConfig:
    """Relative half-widths of the bounded forecast noise per lookahead step
    (nondecreasing: predictions degrade with depth) plus an absolute floor."""

    rel_band: tuple[float, ...] = (0.03, 0.05, 0.08, 0.10, 0.12, 0.15)
    abs_floor: float = 0.0

    def __post_init__(self):
        band = tuple(float(b) for b in self.rel_band)
        object.__setattr__(self, "rel_band", band)
        if any(b < 0 for b in band) or self.abs_floor < 0:
            raise ValueError("forecast noise bands must be >= 0")
        if any(b2 < b1 for b1, b2 in zip(band, band[1:])):
            raise ValueError("rel_band must be nondecreasing in lookahead")


def default_forecast_config(horizon: int = 6) -> ForecastConfig:
    base = [0.03, 0.05, 0.08, 0.10, 0.12, 0.15]
    if horizon <= len(base):
        band = base[:horizon]
    else:
        band = base + [min(0.15 + 0.03 * k, 0.5) for k in range(1, horizon - len(base) + 1)]
    return ForecastConfig(rel_band=tuple(band))


# ---------------------------------------------------------------------------
# Nominal daily shapes
# ---------------------------------------------------------------------------

PV_PEAK_KW = 60.0


def nominal_profiles(day_length: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Smooth daily shapes: a midday PV bell, slowly varying wind, and a load
    with a daytime swell plus an evening peak. Hour-of-day periodic."""
    if day_length < 24:
        raise ValueError("day_length must cover at least one day (24 steps)")
    t = np.arange(day_length)
    h = t % 24
    pv = PV_PEAK_KW * np.maximum(0.0, np.sin(np.pi * (h - 6) / 12)) ** 2
    wind = 25.0 + 10.0 * np.sin(2 * np.pi * h / 24 + 1.0)
    load = 80.0 + 30.0 * np.sin(2 * np.pi * (h - 8) / 24) + \
        20.0 * np.exp(-(((h - 19.0) / 2.0) ** 2))
    return pv, wind, load


def sample_realization(lr: LoadResParams, n_steps: int, rng: np.random.Generator,
                       pv_band: float = 0.30, band: float = 0.20):
    """One disturbance realization: nominal shapes with multiplicative uniform
    band noise, clamped into the configured envelopes. Returns
    (pv, wind, res, load) with res the clamped pointwise aggregate."""
    pv_n, wind_n, load_n = nominal_profiles(n_steps)
    pv = pv_n * (1.0 + rng.uniform(-pv_band, pv_band, size=n_steps))
    wind = wind_n * (1.0 + rng.uniform(-band, band, size=n_steps))
    load = load_n * (1.0 + rng.uniform(-band, band, size=n_steps))
    pv = np.maximum(pv, 0.0)
    wind = np.maximum(wind, 0.0)
    res = np.clip(pv + wind, lr.p_res_min, lr.p_res_max)
    load = np.clip(load, lr.p_load_min, lr.p_load_max)
    return pv, wind, res, load


def price_profiles(c_p: float, c_s: float, n_steps: int, rng: np.random.Generator,
                   band: float = 0.15) -> tuple[np.ndarray, np.ndarray]:
    """Realized prices: zero-mean bounded fluctuation around the nominal
    constants, keeping purchase >= sale >= 0 pointwise."""
    if c_p < c_s:
        raise ValueError("nominal purchase price must be >= sale price")
    buy = np.maximum(c_p * (1.0 + rng.uniform(-band, band, size=n_steps)), 0.0)
    sell = np.maximum(c_s * (1.0 + rng.uniform(-band, band, size=n_steps)), 0.0)
    sell = np.minimum(sell, buy)
    return buy, sell


DEFAULT_SOC0 = (44.0, 48.0, 52.0, 56.0)


def sample_scenarios(params: MicrogridParams, n_real: int,
                     soc0_set=DEFAULT_SOC0, seed: int = 0,
                     n_steps: int = 48) -> list[Scenario]:
    """n_real disturbance/price realizations crossed with the initial-SoC set.

    Scenarios sharing a realization index share the same disturbance and
    price trajectories, so initial SoC is the only difference within a
    realization group. Deterministic in ``seed``.
    """
    if n_real < 1:
        raise ValueError("n_real must be >= 1")
    lr = params.load_res
    scenarios = []
    sid = 0
    for r in range(n_real):
        rng = np.random.default_rng([seed, 7001, r])
        _, _, res, load = sample_realization(lr, n_steps, rng)
        buy, sell = price_profiles(params.exchange.c_p, params.exchange.c_s,
                                   n_steps, np.random.default_rng([seed, 7002, r]))
        for soc0 in soc0_set:
            fseed = int(np.random.SeedSequence([seed, 7003, r, sid]).generate_state(1)[0])
            scenarios.append(Scenario(
                id=sid, soc0=float(soc0),
                true_res=Profile(res, "res"), true_load=Profile(load, "load"),
                prices_buy=Profile(buy, "price_buy"),
                prices_sell=Profile(sell, "price_sell"),
                forecast_seed=fseed, realization=r))
            sid += 1
    return scenarios


def forecast(s: Scenario, t: int, depth: int, cfg: ForecastConfig,
             lr: LoadResParams) -> tuple[Disturbance, ...]:
    """Bounded-noise forecast of the next ``depth`` disturbances from step t.

    Multiplicative uniform noise with per-lookahead half-width, clamped to
    the admissible envelopes; deterministic given (forecast_seed, t).
    """
    if t + depth > s.n_steps:
        raise ValueError(f"forecast window [{t}, {t + depth}) exceeds scenario "
                         f"length {s.n_steps}")
    if depth > len(cfg.rel_band):
        raise ValueError(f"rel_band has {len(cfg.rel_band)} entries, need {depth}")
    rng = np.random.default_rng([s.forecast_seed, t])
    draws = rng.uniform(-1.0, 1.0, size=(depth, 2))
    out = []
    for k in range(depth):
        res_true = s.true_res.values[t + k]
        load_true = s.true_load.values[t + k]
        hw_res = max(cfg.rel_band[k] * abs(res_true), cfg.abs_floor)
        hw_load = max(cfg.rel_band[k] * abs(load_true), cfg.abs_floor)
        res_hat = np.clip(res_true + hw_res * draws[k, 0], lr.p_res_min, lr.p_res_max)
        load_hat = np.clip(load_true + hw_load * draws[k, 1], lr.p_load_min, lr.p_load_max)
        out.append(Disturbance(p_res=float(res_hat), p_load=float(load_hat)))
    return tuple(out)


# ---------------------------------------------------------------------------
# Persistence: CSV trajectory table + JSON sidecar
# ---------------------------------------------------------------------------

class ScenarioFormatError(ValueError):
    def __init__(self, lineno: int, msg: str):
        super().__init__(f"line {lineno}: {msg}")
        self.lineno = lineno


def _sidecar_path(path) -> str:
    path = str(path)
    return path[: -len(".csv")] + ".json" if path.endswith(".csv") else path + ".json"


def save_scenarios(scenarios: list[Scenario], path) -> None:
    """Write the trajectory table and the per-scenario sidecar."""
    lines = [f"# scenario-set v{FORMAT_VERSION}",
             "# units: power kW, price $/kWh, t in sampling steps",
             _HEADER]
    for s in scenarios:
        for t in range(s.n_steps):
            lines.append(",".join([str(s.id), str(t),
                                   repr(float(s.true_res.values[t])),
                                   repr(float(s.true_load.values[t])),
                                   repr(float(s.prices_buy.values[t])),
                                   repr(float(s.prices_sell.values[t]))]))
    with open(path, "w", encoding="utf-8") as f:
        f.write("\n".join(lines) + "\n")
    side = {
        "format_version": FORMAT_VERSION,
        "scenarios": {str(s.id): {"soc0": s.soc0, "forecast_seed": s.forecast_seed,
                                  "realization": s.realization}
                      for s in scenarios},
    }
    with open(_sidecar_path(path), "w", encoding="utf-8") as f:
        json.dump(side, f, indent=2, sort_keys=True)
        f.write("\n")


def load_scenarios(path) -> list[Scenario]:
    """Lossless inverse of save_scenarios; malformed input errors carry the
    offending line number."""
    with open(path, "r", encoding="utf-8") as f:
        raw = f.read().splitlines()
    if not raw:
        raise ScenarioFormatError(1, "empty scenario file")
    if raw[0] != f"# scenario-set v{FORMAT_VERSION}":
        raise ScenarioFormatError(1, f"unsupported version header {raw[0]!r} "
                                     f"(expected '# scenario-set v{FORMAT_VERSION}')")
    rows: dict[int, list] = {}
    seen_header = False
    for lineno, line in enumerate(raw[1:], start=2):
        if line.startswith("#"):
            continue
        if not seen_header:
            if line != _HEADER:
                raise ScenarioFormatError(lineno, f"bad column header {line!r}")
            seen_header = True
            continue
        if not line.strip():
            continue
        parts = line.split(",")
        if len(parts) != 6:
            raise ScenarioFormatError(lineno, f"expected 6 fields, got {len(parts)}")
        try:
            sid, t = int(parts[0]), int(parts[1])
            vals = [float(v) for v in parts[2:]]
        except ValueError:
            raise ScenarioFormatError(lineno, "bad numeric field") from None
        rows.setdefault(sid, [])
        if t != len(rows[sid]):
            raise ScenarioFormatError(lineno, f"non-contiguous step index {t} "
                                              f"for scenario {sid}")
        rows[sid].append(vals)

    with open(_sidecar_path(path), "r", encoding="utf-8") as f:
        side = json.load(f)
    if side.get("format_version") != FORMAT_VERSION:
        raise ValueError(f"sidecar format_version {side.get('format_version')} "
                         f"!= {FORMAT_VERSION}")
    meta = side["scenarios"]
    out = []
    for sid in sorted(rows):
        if str(sid) not in meta:
            raise ValueError(f"scenario {sid} missing from sidecar")
        m = meta[str(sid)]
        arr = np.asarray(rows[sid])
        out.append(Scenario(
            id=sid, soc0=float(m["soc0"]),
            true_res=Profile(arr[:, 0], "res"), true_load=Profile(arr[:, 1], "load"),
            prices_buy=Profile(arr[:, 2], "price_buy"),
            prices_sell=Profile(arr[:, 3], "price_sell"),
            forecast_seed=int(m["forecast_seed"]),
            realization=int(m.get("realization", 0))))
    return out
