"""Behavior cloning of the expert controller: feature construction, noisy
closed-loop data collection, policy training, and the deployed clipped
network policy.

The trained policy maps (SoC, previous generator outputs, disturbance
forecasts, and a grid of curtailment-dependent net-injection features) to
the control input, and is always element-wise clipped into the admissible
input box at deployment.
"""

from __future__ import annotations

import json
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from mgempc import mlp
from mgempc.empc import (EmpcConfig, InfeasibleProblemError, InfoTuple,
                         expert_action, info_from_state)
from mgempc.grid import (ControlInput, GridState, MicrogridParams,
                         augmented_step, clip_array_to_box, initial_state,
                         input_box)
from mgempc.scenario import ForecastConfig, Scenario, forecast

DATASET_FORMAT_VERSION = 1


@dataclass(frozen=True)
class FeatureConfig:
    n_beta: int = 3   # curtailment-grid resolution
    t_w: int = 6      # lookahead depth of the net-injection feature block

    def __post_init__(self):
        if self.n_beta < 2:
            raise ValueError("n_beta must be >= 2 (grid divides by n_beta - 1)")
        if self.t_w < 0:
            raise ValueError("t_w must be >= 0")

    def n_features(self, n_fg: int, horizon: int) -> int:
        return 1 + n_fg + 2 * horizon + self.n_beta * self.t_w


def virtual_disturbance(res_hat: float, load_hat: float, beta: float) -> float:
    """Net forecast injection seen by the battery if a fraction beta of the
    load were curtailed."""
    return res_hat - (1.0 - beta) * load_hat


def beta_grid(beta_max: float, n_beta: int) -> np.ndarray:
    """Equally spaced curtailment levels from 0 to beta_max inclusive."""
    if n_beta < 2:
        raise ValueError("n_beta must be >= 2")
    return np.linspace(0.0, beta_max, n_beta)


def feature_names(n_fg: int, horizon: int, fcfg: FeatureConfig) -> list[str]:
    names = ["soc"]
    names += [f"p_fg_prev_{i}" for i in range(n_fg)]
    names += [f"res_hat_{k}" for k in range(horizon)]
    names += [f"load_hat_{k}" for k in range(horizon)]
    for k in range(fcfg.t_w):
        for i in range(fcfg.n_beta):
            names.append(f"wbeta_t{k}_b{i}")
    return names


def build_features(info: InfoTuple, fcfg: FeatureConfig,
                   beta_max: float) -> np.ndarray:
    """Flatten an information tuple into the fixed feature ordering:
    [soc, previous generator powers, res forecasts, load forecasts,
    then the net-injection grid with lookahead outer and beta level inner]."""
    horizon = len(info.forecasts)
    if fcfg.t_w > horizon:
        raise ValueError(f"t_w={fcfg.t_w} exceeds forecast depth {horizon}")
    res_hat = [w.p_res for w in info.forecasts]
    load_hat = [w.p_load for w in info.forecasts]
    feats = [info.soc0, *info.prev_gen_power, *res_hat, *load_hat]
    grid_b = beta_grid(beta_max, fcfg.n_beta)
    for k in range(fcfg.t_w):
        for b in grid_b:
            feats.append(virtual_disturbance(res_hat[k], load_hat[k], b))
    out = np.asarray(feats, dtype=float)
    if not np.all(np.isfinite(out)):
        raise ValueError("non-finite feature encountered")
    return out


@dataclass(frozen=True)
class NoiseConfig:
    """Diagonal Gaussian exploration noise added to the expert input during
    data collection, one sigma per input coordinate."""

    sigma: tuple[float, ...]
    seed: int = 0

    def __post_init__(self):
        sig = tuple(float(s) for s in self.sigma)
        object.__setattr__(self, "sigma", sig)
        if any(s < 0 for s in sig):
            raise ValueError("noise sigmas must be >= 0")


def default_noise_config(params: MicrogridParams, scale: float = 1.0,
                         seed: int = 0) -> NoiseConfig:
    """Per-coordinate sigma = 5% of the coordinate's admissible range width,
    times ``scale``."""
    sig = [0.05 * g.p_max for g in params.generators]
    sig.append(0.05 * 2.0 * params.exchange.p_max)
    sig.append(0.05 * params.load_res.beta_max)
    return NoiseConfig(sigma=tuple(s * scale for s in sig), seed=seed)


def noisy_expert_action(params: MicrogridParams, info: InfoTuple, cfg: EmpcConfig,
                        noise: NoiseConfig, scenario_id: int, t: int,
                        strict_eq28: bool = False, warm=None):
    """Expert input perturbed by Gaussian noise and projected into the input
    box. Returns (applied u, clean expert u, solver stats, warm handle); the
    noise draw is a pure function of (seed, scenario, step)."""
    u_star, stats, warm = expert_action(params, info, cfg, strict_eq28=strict_eq28,
                                        warm=warm)
    rng = np.random.default_rng([noise.seed, 40823, scenario_id, t])
    eps = rng.normal(0.0, 1.0, size=len(noise.sigma)) * np.asarray(noise.sigma)
    noisy = u_star.as_array() + eps
    state = GridState(soc=info.soc0, prev_gen_power=info.prev_gen_power,
                      prev_gen_on=info.prev_gen_on)
    box = input_box(params, state, strict_eq28=strict_eq28)
    u_bar = ControlInput.from_array(clip_array_to_box(noisy, box), params.n_fg)
    return u_bar, u_star, stats, warm


@dataclass
class Dataset:
    features: np.ndarray        # (n_rows, d)
    labels: np.ndarray          # (n_rows, n_fg + 2) applied inputs
    clean_labels: np.ndarray    # (n_rows, n_fg + 2) pre-noise expert inputs
    ids: np.ndarray             # (n_rows, 2) = (scenario_id, t)
    feature_cfg: FeatureConfig
    n_fg: int
    horizon: int
    failed_scenarios: list = None

    def __post_init__(self):
        if self.failed_scenarios is None:
            self.failed_scenarios = []

    @property
    def n_rows(self) -> int:
        return self.features.shape[0]


def _rollout_noisy(params, s: Scenario, cfg: EmpcConfig, fcfg: FeatureConfig,
                   noise: NoiseConfig, fc_cfg: ForecastConfig, t_sim: int,
                   strict_eq28: bool):
    """Closed loop under the noisy expert for one scenario; the state evolves
    with the applied (noisy, projected) input and the true disturbances."""
    state = initial_state(params, s.soc0)
    rows = []
    warm = None
    for t in range(t_sim):
        fcs = forecast(s, t, cfg.horizon, fc_cfg, params.load_res)
        info = info_from_state(state, fcs)
        feats = build_features(info, fcfg, params.load_res.beta_max)
        u_bar, u_star, _, warm = noisy_expert_action(
            params, info, cfg, noise, s.id, t, strict_eq28=strict_eq28, warm=warm)
        rows.append((s.id, t, feats, u_bar.as_array(), u_star.as_array()))
        state = augmented_step(params, state, u_bar, s.disturbance(t))
    return rows


def _collect_one(args):
    params, s, cfg, fcfg, noise, fc_cfg, t_sim, strict = args
    try:
        return s.id, _rollout_noisy(params, s, cfg, fcfg, noise, fc_cfg,
                                    t_sim, strict), None
    except InfeasibleProblemError as e:
        return s.id, None, str(e)


def collect_dataset(params: MicrogridParams, scenarios, cfg: EmpcConfig,
                    fcfg: FeatureConfig, noise: NoiseConfig,
                    fc_cfg: ForecastConfig | None = None, t_sim: int = 24,
                    strict_eq28: bool = False, jobs: int = 1,
                    progress=None) -> Dataset:
    """Roll the noisy expert over every scenario and assemble training rows.

    Scenarios whose expert problem turns infeasible mid-rollout are excluded
    entirely and reported in ``failed_scenarios``; rows are ordered by
    (scenario_id, t) regardless of scheduling.
    """
    from mgempc.scenario import default_forecast_config
    fc_cfg = fc_cfg or default_forecast_config(cfg.horizon)
    work = [(params, s, cfg, fcfg, noise, fc_cfg, t_sim, strict_eq28)
            for s in scenarios]
    results = []
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            for res in ex.map(_collect_one, work, chunksize=1):
                results.append(res)
                if progress:
                    progress(len(results), len(work))
    else:
        for w in work:
            results.append(_collect_one(w))
            if progress:
                progress(len(results), len(work))

    results.sort(key=lambda r: r[0])
    rows = []
    failed = []
    for sid, data, err in results:
        if data is None:
            failed.append({"scenario_id": sid, "error": err})
        else:
            rows.extend(data)
    rows.sort(key=lambda r: (r[0], r[1]))
    n_fg = params.n_fg
    d = fcfg.n_features(n_fg, cfg.horizon)
    feats = np.array([r[2] for r in rows]).reshape(len(rows), d)
    labels = np.array([r[3] for r in rows]).reshape(len(rows), n_fg + 2)
    clean = np.array([r[4] for r in rows]).reshape(len(rows), n_fg + 2)
    ids = np.array([(r[0], r[1]) for r in rows], dtype=int).reshape(len(rows), 2)
    return Dataset(features=feats, labels=labels, clean_labels=clean, ids=ids,
                   feature_cfg=fcfg, n_fg=n_fg, horizon=cfg.horizon,
                   failed_scenarios=failed)


# ---------------------------------------------------------------------------
# Dataset persistence
# ---------------------------------------------------------------------------

def _dataset_sidecar(path) -> str:
    path = str(path)
    return path[: -len(".csv")] + ".json" if path.endswith(".csv") else path + ".json"


def save_dataset(ds: Dataset, path) -> None:
    d = ds.features.shape[1]
    m = ds.labels.shape[1]
    header = (["scenario_id", "t"] + [f"f_{j}" for j in range(d)]
              + [f"u_{j}" for j in range(m)])
    lines = [",".join(header)]
    for i in range(ds.n_rows):
        cells = [str(int(ds.ids[i, 0])), str(int(ds.ids[i, 1]))]
        cells += [repr(float(v)) for v in ds.features[i]]
        cells += [repr(float(v)) for v in ds.labels[i]]
        lines.append(",".join(cells))
    with open(path, "w", encoding="utf-8") as f:
        f.write("\n".join(lines) + "\n")
    side = {
        "format_version": DATASET_FORMAT_VERSION,
        "feature_config": {"n_beta": ds.feature_cfg.n_beta, "t_w": ds.feature_cfg.t_w},
        "n_fg": ds.n_fg,
        "horizon": ds.horizon,
        "feature_names": feature_names(ds.n_fg, ds.horizon, ds.feature_cfg),
        "failed_scenarios": ds.failed_scenarios,
        "clean_labels": [[float(v) for v in row] for row in ds.clean_labels],
    }
    with open(_dataset_sidecar(path), "w", encoding="utf-8") as f:
        json.dump(side, f)
        f.write("\n")


def load_dataset(path) -> Dataset:
    with open(path, "r", encoding="utf-8") as f:
        raw = f.read().splitlines()
    if not raw:
        raise ValueError("empty dataset file")
    header = raw[0].split(",")
    d = sum(1 for h in header if h.startswith("f_"))
    m = sum(1 for h in header if h.startswith("u_"))
    if header[:2] != ["scenario_id", "t"] or d == 0 or m == 0:
        raise ValueError(f"unexpected dataset header {raw[0]!r}")
    ids, feats, labels = [], [], []
    for lineno, line in enumerate(raw[1:], start=2):
        if not line.strip():
            continue
        parts = line.split(",")
        if len(parts) != 2 + d + m:
            raise ValueError(f"line {lineno}: expected {2 + d + m} fields")
        ids.append((int(parts[0]), int(parts[1])))
        feats.append([float(v) for v in parts[2 : 2 + d]])
        labels.append([float(v) for v in parts[2 + d :]])
    with open(_dataset_sidecar(path), "r", encoding="utf-8") as f:
        side = json.load(f)
    if side.get("format_version") != DATASET_FORMAT_VERSION:
        raise ValueError("dataset sidecar version mismatch")
    fcfg = FeatureConfig(**side["feature_config"])
    clean = np.asarray(side.get("clean_labels", labels), dtype=float)
    return Dataset(features=np.asarray(feats), labels=np.asarray(labels),
                   clean_labels=clean.reshape(len(ids), m),
                   ids=np.asarray(ids, dtype=int).reshape(len(ids), 2),
                   feature_cfg=fcfg, n_fg=side["n_fg"], horizon=side["horizon"],
                   failed_scenarios=side.get("failed_scenarios", []))


# ---------------------------------------------------------------------------
# Training and deployment
# ---------------------------------------------------------------------------

@dataclass
class PolicyBundle:
    spec: mlp.MlpSpec
    params: mlp.MlpParams
    norm: mlp.Normalizer
    feature_cfg: FeatureConfig
    n_fg: int
    horizon: int


def train_policy(ds: Dataset, hidden=(12, 12, 12),
                 train_cfg: mlp.TrainConfig = mlp.TrainConfig(),
                 seed: int = 0) -> tuple[PolicyBundle, list]:
    """Fit the network to (features -> applied inputs); the bundle embeds the
    feature configuration so deployment cannot mismatch."""
    if ds.n_rows == 0:
        raise ValueError("empty dataset")
    d = ds.features.shape[1]
    m = ds.labels.shape[1]
    spec = mlp.MlpSpec(layer_sizes=(d, *hidden, m))
    params, norm, log = mlp.fit(spec, ds.features, ds.labels, train_cfg, seed=seed)
    bundle = PolicyBundle(spec=spec, params=params, norm=norm,
                          feature_cfg=ds.feature_cfg, n_fg=ds.n_fg,
                          horizon=ds.horizon)
    return bundle, log


def save_policy(bundle: PolicyBundle, path) -> None:
    extra = {"feature_config": {"n_beta": bundle.feature_cfg.n_beta,
                                "t_w": bundle.feature_cfg.t_w},
             "n_fg": bundle.n_fg, "horizon": bundle.horizon}
    mlp.save_model(path, bundle.spec, bundle.params, bundle.norm, extra=extra)


def load_policy(path) -> PolicyBundle:
    spec, params, norm, extra = mlp.load_model(path)
    if not extra or "feature_config" not in extra:
        raise ValueError("model file lacks the feature configuration block")
    fcfg = FeatureConfig(**extra["feature_config"])
    return PolicyBundle(spec=spec, params=params, norm=norm, feature_cfg=fcfg,
                        n_fg=int(extra["n_fg"]), horizon=int(extra["horizon"]))


def learned_action(bundle: PolicyBundle, params: MicrogridParams,
                   state: GridState, forecasts,
                   strict_eq28: bool = False) -> ControlInput:
    """One policy evaluation: features, normalized forward pass, then
    element-wise clipping into the current input box. No optimization."""
    if bundle.n_fg != params.n_fg:
        raise ValueError(f"policy trained for {bundle.n_fg} generators, "
                         f"runtime has {params.n_fg}")
    if len(forecasts) != bundle.horizon:
        raise ValueError(f"policy expects {bundle.horizon} forecast steps, "
                         f"got {len(forecasts)}")
    info = info_from_state(state, forecasts)
    feats = build_features(info, bundle.feature_cfg, params.load_res.beta_max)
    if feats.shape[0] != bundle.spec.n_in:
        raise ValueError(f"feature width {feats.shape[0]} != model input "
                         f"{bundle.spec.n_in}")
    raw = mlp.forward(bundle.params, bundle.norm.apply(feats))
    box = input_box(params, state, strict_eq28=strict_eq28)
    return ControlInput.from_array(clip_array_to_box(raw, box), params.n_fg)


class LearnedController:
    """Deployable clipped-network policy with the same calling convention as
    the expert controller. ``last_solve_time`` is the wall time of the
    feature build + forward pass + clipping."""

    def __init__(self, bundle: PolicyBundle, params: MicrogridParams,
                 name: str = "learned", strict_eq28: bool = False):
        self.bundle = bundle
        self.params = params
        self.name = name
        self.strict_eq28 = strict_eq28
        self.last_solve_time: float | None = None
        self.calls = 0

    def __call__(self, state: GridState, forecasts) -> ControlInput:
        t0 = time.perf_counter()
        u = learned_action(self.bundle, self.params, state, forecasts,
                           strict_eq28=self.strict_eq28)
        self.last_solve_time = time.perf_counter() - t0
        self.calls += 1
        return u
