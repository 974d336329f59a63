"""Command-line entry points: simulate, fit, compare, optimize, evaluate."""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import io
from .inference import Hyperparameters, run_chain
from .joint import ModelVariant, waic
from .params import simulation_truths, truths_from_dict, truths_to_dict
from .policy import Mask, SgdConfig, evaluate_policy, optimize
from .simulate import FIXED_PRESETS, RewardKind, RewardSpec, simulate_cohort

FIT_KEYS = {"iters", "burnin", "thin", "seed", "hyperparameters"}


def _read_json(path) -> dict:
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise SystemExit(f"error: cannot read {path}: {exc}")


def _fit_config(path) -> dict:
    cfg = {"iters": 6000, "burnin": 1000, "thin": 10, "seed": 0, "hyperparameters": {}}
    if path is not None:
        user = _read_json(path)
        unknown = set(user) - FIT_KEYS
        if unknown:
            raise SystemExit(f"error: unknown fit config keys {sorted(unknown)}")
        cfg.update(user)
    for k in ("iters", "burnin", "thin", "seed"):
        if not isinstance(cfg[k], int) or isinstance(cfg[k], bool):
            raise SystemExit(f"error: config key {k!r} must be an integer")
    if not 0 <= cfg["burnin"] < cfg["iters"] or cfg["thin"] < 1 \
            or (cfg["iters"] - cfg["burnin"]) % cfg["thin"]:
        raise SystemExit("error: need 0 <= burnin < iters and thin dividing iters - burnin")
    return cfg


def _patient(path, names: list[str]) -> tuple[str, np.ndarray, float]:
    """Patient covariates file: {"id", "y0", "covariates": list or {name: value}}."""
    d = _read_json(path)
    cov = d.get("covariates")
    if isinstance(cov, dict):
        if names and set(cov) != set(names):
            raise SystemExit(f"error: covariates must be exactly {names}")
        x = np.array([cov[n] for n in (names or sorted(cov))], dtype=np.float64)
    elif isinstance(cov, list):
        x = np.array(cov, dtype=np.float64)
    else:
        raise SystemExit("error: patient file needs a 'covariates' list or object")
    if "y0" not in d:
        raise SystemExit("error: patient file needs the baseline lab 'y0'")
    return str(d.get("id", "patient")), x, float(d["y0"])


def _reward(args) -> RewardSpec:
    if args.eta0:
        return RewardSpec(RewardKind.PENALIZED, args.eta0)
    return RewardSpec()


def cmd_simulate(args) -> None:
    truths = truths_from_dict(_read_json(args.truths)) if args.truths else simulation_truths()
    records = simulate_cohort(truths, args.n, np.random.default_rng(args.seed))
    stats = {"age_donor": {"mean": 52.5, "sd": 15.8}, "bmi": {"mean": 24.3, "sd": 4.5}}
    io.write_dataset(records, args.out, truths.covariate_names, stats)
    (Path(args.out) / "truths.json").write_text(
        json.dumps(truths_to_dict(truths), indent=1, sort_keys=True) + "\n", encoding="utf-8")
    print(f"wrote {len(records)} patients to {args.out}")


def cmd_fit(args) -> None:
    cfg = _fit_config(args.config)
    hyper = Hyperparameters.from_dict(cfg["hyperparameters"])
    bundle = io.load_dataset(args.data)
    post = run_chain(bundle.records, hyper, cfg["iters"], cfg["burnin"], cfg["thin"],
                     cfg["seed"], ModelVariant(args.variant))
    post.covariate_names = bundle.covariate_names
    io.save_posterior(post, args.out)
    if args.trace_out:
        io.write_trace(post, args.trace_out)
    rates = ", ".join(f"{k} {v:.3f}" for k, v in post.acceptance.items())
    print(f"{post.n_draws} draws written to {args.out} (acceptance: {rates})")


def cmd_waic(args) -> None:
    post = io.load_posterior(args.posterior)
    print(f"{io.fmt(waic(post.pointwise))}")


def cmd_optimize(args) -> None:
    post = io.load_posterior(args.posterior)
    pid, x, y0 = _patient(args.patient_covariates, post.covariate_names)
    cfg = SgdConfig(steps=args.steps, rollouts=args.rollouts, mask=Mask(args.mask),
                    master_seed=args.seed, resample=args.resample, reward=_reward(args),
                    scalar_norm=args.scalar_norm, variant=post.variant)
    theta0 = post.policy_mean()
    result = optimize(theta0, post, x, y0, cfg, patient_id=pid)
    io.save_policy_report(result, theta0, args.out,
                          meta={"patient": pid, "mask": cfg.mask.value, "steps": cfg.steps,
                                "seed": args.seed})
    curve = args.curve_out or str(Path(args.out).with_suffix(".csv"))
    io.write_reward_curve(result, curve)
    print(f"mean reward {io.fmt(result.mean_rewards[0])} -> {io.fmt(result.best_reward)} "
          f"(step {result.best_index}); report {args.out}, curve {curve}")


def cmd_evaluate(args) -> None:
    post = io.load_posterior(args.posterior)
    pid, x, y0 = _patient(args.patient_covariates, post.covariate_names)
    interval = 0.0
    if args.policy.startswith("fixed:"):
        try:
            interval = float(args.policy.split(":", 1)[1])
        except ValueError:
            raise SystemExit(f"error: bad fixed schedule {args.policy!r}")
        theta = io.load_policy(args.dosage_policy) if args.dosage_policy else post.policy_mean()
    else:
        theta = io.load_policy(args.policy)
    R, med, visits = evaluate_policy(theta, post, x, y0, args.reps, args.seed, interval,
                                     patient_id=pid, reward=_reward(args), variant=post.variant)
    io.write_rewards(args.out, R, med, visits)
    print(f"mean reward {io.fmt(R.mean())}, mean median survival {med.mean():.1f} days "
          f"over {args.reps} rollouts")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="timedtr", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate-cohort", help="generate a synthetic cohort")
    s.add_argument("--truths", help="truth parameters JSON (default: built-in simulation truths)")
    s.add_argument("--n", type=int, default=500)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("fit", help="run the MCMC sampler")
    s.add_argument("--data", required=True)
    s.add_argument("--config", help="JSON with iters, burnin, thin, seed, hyperparameters")
    s.add_argument("--variant", choices=[v.value for v in ModelVariant], default="joint")
    s.add_argument("--out", required=True)
    s.add_argument("--trace-out")
    s.set_defaults(func=cmd_fit)

    s = sub.add_parser("waic", help="WAIC from a posterior file")
    s.add_argument("--posterior", required=True)
    s.set_defaults(func=cmd_waic)

    s = sub.add_parser("optimize", help="policy-gradient search for one patient")
    s.add_argument("--posterior", required=True)
    s.add_argument("--patient-covariates", required=True)
    s.add_argument("--mask", choices=[m.value for m in Mask], default="both")
    s.add_argument("--steps", type=int, default=1000)
    s.add_argument("--rollouts", type=int)
    s.add_argument("--resample", action="store_true")
    s.add_argument("--scalar-norm", action="store_true")
    s.add_argument("--eta0", type=float, default=0.0, help="per-visit reward penalty")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.add_argument("--curve-out")
    s.set_defaults(func=cmd_optimize)

    s = sub.add_parser("evaluate-policy", help="rollout rewards of a policy or fixed schedule")
    s.add_argument("--posterior", required=True)
    s.add_argument("--patient-covariates", required=True)
    s.add_argument("--policy", required=True,
                   help="policy JSON, or fixed:<days> (presets: "
                        + ", ".join(f"{k} {int(v)}" for k, v in FIXED_PRESETS.items()) + ")")
    s.add_argument("--dosage-policy", help="policy JSON supplying doses for fixed schedules")
    s.add_argument("--reps", type=int, default=100)
    s.add_argument("--eta0", type=float, default=0.0)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_evaluate)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        args.func(args)
    except (io.DatasetError, io.SchemaError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
