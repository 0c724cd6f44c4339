"""Command-line pipeline: scenario generation, noisy-expert data collection,
policy training, and closed-loop comparison.

Every stage is seeded explicitly (the MG_SEED environment variable is the
fallback when a --seed flag is omitted) and writes plain inspectable files,
so reruns with identical inputs reproduce identical outputs byte for byte
(timing columns excepted unless --timing off).

Exit codes: 0 success, 2 validation error, 3 solver failure, 4 I/O error.
"""

from __future__ import annotations

import argparse
import functools
import json
import os
import sys

import numpy as np

from mgempc import grid, harness, imitation, mlp, scenario
from mgempc.empc import EmpcConfig, ExpertController, InfeasibleProblemError


def _default_seed() -> int:
    return int(os.environ.get("MG_SEED", "0"))


def _load_params(path):
    return grid.load_params(path) if path else grid.reference_params()


def cmd_gen_scenarios(args) -> int:
    params = _load_params(args.config)
    soc0 = tuple(float(v) for v in args.soc0_list.split(","))
    scen = scenario.sample_scenarios(params, n_real=args.n_real, soc0_set=soc0,
                                     seed=args.seed, n_steps=args.steps)
    scenario.save_scenarios(scen, args.out)
    print(f"wrote {len(scen)} scenarios ({args.n_real} realizations x "
          f"{len(soc0)} initial SoC) to {args.out}")
    return 0


def cmd_collect(args) -> int:
    params = _load_params(args.config)
    scen = scenario.load_scenarios(args.scenarios)
    cfg = EmpcConfig(horizon=args.horizon, mip_gap=args.mip_gap,
                     allow_shutdown=args.allow_shutdown)
    if args.mode == "baseline":
        fcfg = imitation.FeatureConfig(n_beta=args.n_beta, t_w=0)
        sigma_scale = 0.0
    else:
        fcfg = imitation.FeatureConfig(n_beta=args.n_beta, t_w=args.t_w)
        sigma_scale = args.sigma_scale
    noise = imitation.default_noise_config(params, scale=sigma_scale,
                                           seed=args.seed)
    progress = None
    if args.verbose:
        progress = lambda done, total: print(f"  scenario {done}/{total}",
                                             file=sys.stderr)
    ds = imitation.collect_dataset(params, scen, cfg, fcfg, noise,
                                   t_sim=args.t_sim,
                                   strict_eq28=args.strict_eq28,
                                   jobs=args.jobs, progress=progress)
    imitation.save_dataset(ds, args.out)
    print(f"wrote {ds.n_rows} rows ({len(scen) - len(ds.failed_scenarios)} of "
          f"{len(scen)} scenarios, {len(ds.failed_scenarios)} failed) to {args.out}")
    for f in ds.failed_scenarios:
        print(f"  failed scenario {f['scenario_id']}: {f['error']}")
    return 0


def cmd_train(args) -> int:
    ds = imitation.load_dataset(args.dataset)
    hidden = tuple(int(v) for v in args.hidden.split(","))
    tc = mlp.TrainConfig(lr=args.lr, batch_size=args.batch_size,
                         max_epochs=args.epochs, patience=args.patience)
    bundle, log = imitation.train_policy(ds, hidden=hidden, train_cfg=tc,
                                         seed=args.seed)
    imitation.save_policy(bundle, args.out_model)
    last = log[-1]
    best_val = min(r["val_mse"] for r in log)
    print(f"trained on {ds.n_rows} rows for {len(log)} epochs; "
          f"final train MSE {last['train_mse']:.6g}, "
          f"best val MSE {best_val:.6g}; model -> {args.out_model}")
    return 0


def _expert_factory(params, cfg, strict):
    return ExpertController(params, cfg, strict_eq28=strict)


def _learned_factory(bundle, params, name, strict):
    return imitation.LearnedController(bundle, params, name=name,
                                       strict_eq28=strict)


def cmd_compare(args) -> int:
    params = _load_params(args.config)
    scen = scenario.load_scenarios(args.scenarios)
    cfg = EmpcConfig(horizon=args.horizon, mip_gap=args.mip_gap,
                     allow_shutdown=args.allow_shutdown)
    controllers = [("empc", functools.partial(_expert_factory, params, cfg,
                                              args.strict_eq28))]
    if args.model_proposed:
        b = imitation.load_policy(args.model_proposed)
        controllers.append(("proposed_il",
                            functools.partial(_learned_factory, b, params,
                                              "proposed_il", args.strict_eq28)))
    if args.model_baseline:
        b = imitation.load_policy(args.model_baseline)
        controllers.append(("baseline_il",
                            functools.partial(_learned_factory, b, params,
                                              "baseline_il", args.strict_eq28)))
    sim = harness.SimConfig(t_sim=args.t_sim, horizon=args.horizon,
                            timing=args.timing)
    progress = None
    if args.verbose:
        progress = lambda done, total: print(f"  episode {done}/{total}",
                                             file=sys.stderr)
    report = harness.run_batch(controllers, scen, params, sim,
                               reference="empc", jobs=args.jobs,
                               progress=progress)
    files = harness.export_report(report, args.out_report)
    verdict = []
    for row in report.summary():
        if row["controller"] == "empc":
            verdict.append(f"empc median J_eco {row['j_eco_median']:.4g}")
        else:
            verdict.append(f"{row['controller']}: J_eco ratio "
                           f"{row['j_eco_ratio_median']:.4g}, J_time ratio "
                           f"{row['j_time_ratio_median']:.4g}")
    print("; ".join(verdict))
    print("report files: " + ", ".join(files))
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="mgempc",
        description="Microgrid economic MPC and its learned approximations")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", default=None,
                       help="microgrid parameter JSON (default: built-in "
                            "reference configuration)")
        p.add_argument("--seed", type=int, default=_default_seed(),
                       help="random seed (default: MG_SEED env or 0)")
        p.add_argument("--verbose", action="store_true",
                       help="progress output on stderr")

    p = sub.add_parser("gen-scenarios", help="sample disturbance/price scenarios")
    common(p)
    p.add_argument("--n-real", type=int, default=50,
                   help="number of disturbance realizations")
    p.add_argument("--soc0-list", default="44,48,52,56",
                   help="comma-separated initial SoC values (kWh)")
    p.add_argument("--steps", type=int, default=48,
                   help="scenario length in steps (two days by default)")
    p.add_argument("--out", required=True, help="output scenario CSV path")
    p.set_defaults(func=cmd_gen_scenarios)

    p = sub.add_parser("collect", help="roll out the (noisy) expert and record data")
    common(p)
    p.add_argument("--scenarios", required=True)
    p.add_argument("--mode", choices=("proposed", "baseline"), default="proposed",
                   help="proposed: extra features + noise; baseline: neither")
    p.add_argument("--sigma-scale", type=float, default=1.0,
                   help="multiplier on the default exploration noise sigmas")
    p.add_argument("--horizon", type=int, default=6)
    p.add_argument("--t-sim", type=int, default=24)
    p.add_argument("--n-beta", type=int, default=3)
    p.add_argument("--t-w", type=int, default=6)
    p.add_argument("--mip-gap", type=float, default=1e-6)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--strict-eq28", action="store_true",
                   help="generator axes without the OFF point adjoined")
    p.add_argument("--allow-shutdown", action="store_true",
                   help="ramp rows permit switching an ON generator off")
    p.add_argument("--out", required=True, help="output dataset CSV path")
    p.set_defaults(func=cmd_collect)

    p = sub.add_parser("train", help="fit the policy network to a dataset")
    common(p)
    p.add_argument("--dataset", required=True)
    p.add_argument("--hidden", default="12,12,12",
                   help="comma-separated hidden layer widths")
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--batch-size", type=int, default=64)
    p.add_argument("--epochs", type=int, default=2000)
    p.add_argument("--patience", type=int, default=100)
    p.add_argument("--out-model", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("compare", help="closed-loop comparison over a scenario batch")
    common(p)
    p.add_argument("--scenarios", required=True)
    p.add_argument("--model-proposed", default=None)
    p.add_argument("--model-baseline", default=None)
    p.add_argument("--horizon", type=int, default=6)
    p.add_argument("--t-sim", type=int, default=24)
    p.add_argument("--mip-gap", type=float, default=1e-6)
    p.add_argument("--jobs", type=int, default=1,
                   help="episode parallelism (forced to 1 with wall timing)")
    p.add_argument("--timing", choices=("wall", "off"), default="wall",
                   help="'off' records zero decision times for byte-stable files")
    p.add_argument("--strict-eq28", action="store_true")
    p.add_argument("--allow-shutdown", action="store_true")
    p.add_argument("--out-report", required=True,
                   help="report base path (writes .csv and .md)")
    p.set_defaults(func=cmd_compare)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    try:
        return args.func(args)
    except InfeasibleProblemError as e:
        print(f"solver failure: {e}", file=sys.stderr)
        return 3
    except (FileNotFoundError, IsADirectoryError, PermissionError,
            json.JSONDecodeError) as e:
        print(f"i/o error: {e}", file=sys.stderr)
        return 4
    except (scenario.ScenarioFormatError,) as e:
        print(f"i/o error: {e}", file=sys.stderr)
        return 4
    except ValueError as e:
        print(f"validation error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
