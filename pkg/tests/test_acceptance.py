"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

The parameter-recovery study (criteria 1-5) fits a 500-patient cohort twice
and runs the policy optimizer for several patients; it takes roughly 40
minutes on one core. Set ``TIMEDTR_FAST=1`` to run only criteria 6 and 7.
"""
import json
import math
import os
import time

import numpy as np
import pytest
from scipy import integrate, special, stats

from timedtr import mtpp, survival as sv
from timedtr.cli import main as cli_main
from timedtr.inference import ChainData, ChainState, Hyperparameters, gibbs_update_dosage, \
    run_chain, update_random_effects
from timedtr.joint import ModelVariant, waic
from timedtr.params import PolicyParams, SurvivalParams, simulation_truths
from timedtr.policy import Mask, RolloutDraws, SgdConfig, baseline_gradient, evaluate_policy, \
    optimize
from timedtr.simulate import simulate_cohort

TR = simulation_truths()
FAST = os.environ.get("TIMEDTR_FAST") == "1"
slow = pytest.mark.skipif(FAST, reason="TIMEDTR_FAST=1 skips the recovery study")

COHORT_SEED, CHAIN_SEED, PATIENT_SEED, SGD_SEED = 2024, 3, 0, 1
S1 = np.array([(54.2 - 52.5) / 15.8, 0.0, (24.0 - 24.3) / 4.5])
S2 = np.array([(37.4 - 52.5) / 15.8, 1.0, (24.8 - 24.3) / 4.5])
SURVIVAL_TRUTH = {"beta_s1": 1.0, "beta_s2": 0.9, "beta_s3": -0.75, "beta_s4": -5.0,
                  "h0": 5.0, "omega": 1.05}


def log(msg):
    print(msg, flush=True)


# --------------------------------------------------------------------------
# shared study fixtures


@pytest.fixture(scope="module")
def study():
    records = simulate_cohort(TR, 500, np.random.default_rng(COHORT_SEED))
    out = {"records": records}
    for variant in (ModelVariant.JOINT, ModelVariant.SLS):
        t0 = time.perf_counter()
        out[variant] = run_chain(records, iters=6000, burnin=1000, thin=10, seed=CHAIN_SEED,
                                 variant=variant)
        out[(variant, "seconds")] = time.perf_counter() - t0
        log(f"{variant.value} fit: {out[(variant, 'seconds')]:.0f} s, "
            f"acceptance {out[variant].acceptance}")
    return out


@pytest.fixture(scope="module")
def optimized(study):
    post = study[ModelVariant.JOINT]
    draws = RolloutDraws.from_posterior(post)
    theta0 = post.policy_mean()
    pick = np.random.default_rng(PATIENT_SEED).choice(len(study["records"]), 3, replace=False)
    runs = []
    for i in pick:
        rec = study["records"][int(i)]
        t0 = time.perf_counter()
        res = optimize(theta0, draws, rec.x, rec.labs[0],
                       SgdConfig(steps=1000, rollouts=300, master_seed=SGD_SEED),
                       patient_id=rec.id)
        runs.append((rec.id, res, time.perf_counter() - t0))
        log(f"{rec.id}: G1 {res.mean_rewards[0]:.3f}, best {res.best_reward:.3f} "
            f"at step {res.best_index}, {runs[-1][2]:.0f} s")
    return theta0, runs


# --------------------------------------------------------------------------
# 1-5: recovery study


@slow
def test_criterion_1_parameter_recovery(study, verdict):
    post = study[ModelVariant.JOINT]
    bs = post.params["beta_s"]
    samples = {"beta_s1": bs[:, 0], "beta_s2": bs[:, 1], "beta_s3": bs[:, 2],
               "beta_s4": bs[:, 3], "h0": post.params["h0"], "omega": post.params["omega"]}
    covered = []
    for name, truth in SURVIVAL_TRUTH.items():
        lo, hi = np.quantile(samples[name], [0.025, 0.975])
        log(f"{name}: truth {truth}, mean {samples[name].mean():.3f}, 95% CI ({lo:.3f}, {hi:.3f})")
        covered.append(lo <= truth <= hi)
    m4 = float(samples["beta_s4"].mean())
    minutes = study[(ModelVariant.JOINT, "seconds")] / 60
    ok = sum(covered) >= 5 and -6 < m4 < -4 and minutes <= 60
    verdict("criterion 1 (parameter recovery)", ok,
            f"{sum(covered)}/6 intervals cover, mean beta_s4 {m4:.3f}, fit {minutes:.1f} min")
    assert ok


@slow
def test_criterion_2_waic_direction(study, verdict):
    wj = waic(study[ModelVariant.JOINT].pointwise)
    ws = waic(study[ModelVariant.SLS].pointwise)
    ok = wj < ws
    verdict("criterion 2 (WAIC joint < SLS)", ok, f"joint {wj:.1f}, SLS {ws:.1f}")
    assert ok


@slow
def test_criterion_3_policy_improvement(optimized, verdict):
    _, runs = optimized
    imps = [res.improvement for _, res, _ in runs]
    minutes = max(sec for _, _, sec in runs) / 60
    in_band = [0.005 <= g <= 0.15 for g in imps]
    ok = all(in_band) and float(np.mean(imps)) > 0.02 and minutes <= 30
    verdict("criterion 3 (policy improvement)", ok,
            "improvements " + ", ".join(f"{pid} {g:.3f}" for (pid, _, _), g in zip(runs, imps))
            + f"; mean {np.mean(imps):.3f}; slowest {minutes:.1f} min")
    assert ok


@slow
def test_criterion_4_optimum_directions(optimized, verdict):
    theta0, runs = optimized
    hits = 0
    parts = []
    for pid, res, _ in runs:
        th = res.theta_best
        good = th.sigma_d2 < theta0.sigma_d2 and th.nu2 > theta0.nu2
        hits += good
        parts.append(f"{pid} sigma_d2 {theta0.sigma_d2:.4f}->{th.sigma_d2:.4f}, "
                     f"nu2 {theta0.nu2:.3f}->{th.nu2:.3f}")
    ok = hits >= 2
    verdict("criterion 4 (sigma_d2 down, nu2 up)", ok, f"{hits}/3 patients; " + "; ".join(parts))
    assert ok


@slow
def test_criterion_5_schedule_ordering(study, verdict):
    post = study[ModelVariant.JOINT]
    draws = RolloutDraws.from_posterior(post)
    theta0 = post.policy_mean()
    ok = True
    parts = []
    for pid, x in (("S1", S1), ("S2", S2)):
        means = {}
        for interval in (30.0, 91.0, 182.0):
            res = optimize(theta0, draws, x, 5.0,
                           SgdConfig(steps=1000, rollouts=300, master_seed=SGD_SEED,
                                     mask=Mask.DOSAGE_ONLY, interval=interval), patient_id=pid)
            _, med, _ = evaluate_policy(res.theta_best, draws, x, 5.0, 100, seed=7,
                                        interval=interval, patient_id=pid)
            means[interval] = float(med.mean())
        res = optimize(theta0, draws, x, 5.0, SgdConfig(steps=1000, rollouts=300,
                                                        master_seed=SGD_SEED), patient_id=pid)
        _, med, _ = evaluate_policy(res.theta_best, draws, x, 5.0, 100, seed=7, patient_id=pid)
        mtpp_mean = float(med.mean())
        good = means[30.0] >= means[91.0] >= means[182.0] and mtpp_mean > means[91.0]
        ok &= good
        parts.append(f"{pid} monthly {means[30.0]:.0f}, quarterly {means[91.0]:.0f}, "
                     f"semiannual {means[182.0]:.0f}, optimized {mtpp_mean:.0f} days")
        log(parts[-1])
    verdict("criterion 5 (schedule ordering)", ok, "; ".join(parts))
    assert ok


# --------------------------------------------------------------------------
# 6: numerical kernels, each against an independent scipy oracle


def _policy(rng):
    return PolicyParams(nu1=rng.uniform(1.0, 4.0), nu2=rng.uniform(0.0, 2.5),
                        mu=rng.uniform(-7.0, -3.0), beta_d=TR.policy.beta_d,
                        sigma_d2=rng.uniform(0.01, 0.5))


def _kernel_intensity_integral(rng):
    worst = 0.0
    for _ in range(1000):
        pol = _policy(rng)
        alpha = rng.uniform(0.0, 2.0)
        delta = math.exp(rng.uniform(math.log(0.1), math.log(2000.0)))
        kappa, gam = math.exp(pol.nu2) + 1.0, math.exp(pol.nu2 - pol.nu1)
        f = lambda s: math.exp(pol.mu) + alpha * stats.gamma.pdf(s, kappa, scale=1.0 / gam)
        mode = (kappa - 1.0) / gam
        ref, _ = integrate.quad(f, 0.0, delta, points=[mode] if mode < delta else None,
                                epsabs=0.0, epsrel=1e-13, limit=500)
        got = mtpp.intensity_integral(delta, alpha, pol)
        worst = max(worst, abs(got - ref) / ref)
    return worst < 1e-8, f"intensity integral worst rel err {worst:.1e}"


def _loglik_ref(t, d, y, x, horizon, pol, sh):
    kappa, gam = math.exp(pol.nu2) + 1.0, math.exp(pol.nu2 - pol.nu1)
    ll = 0.0
    for j in range(len(t)):
        m = pol.beta_d[0] + pol.beta_d[1] * y[j] + np.dot(pol.beta_d[2:], x)
        ll += stats.norm.logpdf(d[j], m, math.sqrt(pol.sigma_d2))
        a = sh.xi / (1.0 + math.exp(sh.beta_alpha[0] + sh.beta_alpha[1] * y[j]))
        seg = (t[j + 1] if j + 1 < len(t) else horizon) - t[j]
        ll -= math.exp(pol.mu) * seg + a * special.gammainc(kappa, gam * seg)
        if j + 1 < len(t):
            ll += math.log(math.exp(pol.mu) + a * stats.gamma.pdf(seg, kappa, scale=1.0 / gam))
    return ll


def _kernel_gradient(rng):
    sh = TR.observation.shared
    worst = 0.0
    for _ in range(100):
        pol = _policy(rng)
        n = int(rng.integers(2, 10))
        t = np.concatenate([[0.0], np.cumsum(rng.uniform(1.0, 120.0, n - 1))])
        d, y = rng.normal(2.0, 0.3, n), rng.normal(5.4, 0.3, n)
        x = rng.standard_normal(3)
        horizon = t[-1] + rng.uniform(0.5, 200.0)
        g = mtpp.decision_loglik_grad(np.column_stack([t, d]), y, x, horizon, pol, sh)
        v = pol.to_vector()
        fd = np.empty_like(v)
        for i in range(v.shape[0]):
            # Richardson-extrapolated central differences on the scipy reference
            def c(h):
                e = np.zeros_like(v)
                e[i] = h
                return (_loglik_ref(t, d, y, x, horizon, PolicyParams.from_vector(v + e), sh)
                        - _loglik_ref(t, d, y, x, horizon, PolicyParams.from_vector(v - e), sh)) / (2 * h)
            h = 1e-3
            fd[i] = (4 * c(h / 2) - c(h)) / 3
        err = np.abs(g - fd) / np.maximum(np.abs(fd), 1e-3 * np.abs(fd).max())
        worst = max(worst, float(err.max()))
    return worst < 1e-5, f"decision gradient worst rel err {worst:.1e}"


def _kernel_toxicity(rng):
    worst = 0.0
    for _ in range(50):
        n = int(rng.integers(1, 8))
        tv = np.concatenate([[0.0], np.cumsum(rng.uniform(1.0, 100.0, n - 1))])
        dv = rng.normal(2.0, 0.4, n)
        eta = rng.uniform(5.0, 150.0)
        t = tv[-1] + rng.uniform(0.1, 300.0)
        dose = lambda s: dv[np.searchsorted(tv, s, side="right") - 1]
        ref, _ = integrate.quad(lambda s: dose(s) * math.exp(-(t - s) / eta), 0.0, t,
                                points=list(tv[1:]) or None, epsabs=0.0, epsrel=1e-13, limit=500)
        ref /= eta
        worst = max(worst, abs(sv.toxicity(t, list(zip(tv, dv)), eta) - ref) / abs(ref))
    return worst < 1e-8, f"toxicity worst rel err {worst:.1e}"


def _kernel_samplers(rng):
    pol = PolicyParams(TR.policy.nu1, TR.policy.nu2, -4.0, TR.policy.beta_d, 0.09)
    gaps = [mtpp.sample_next_visit(0.0, pol, u) for u in rng.random(10_000)]
    p_visit = stats.kstest(gaps, stats.expon(scale=math.exp(4.0)).cdf).pvalue
    ctx = sv.HazardContext(np.array([0.0]), np.array([2.0]), np.array([5.0]), np.zeros(3),
                           np.zeros(3), TR.observation.longitudinal, TR.observation.shared)
    sp = SurvivalParams([0.0] * 4, 6.0, 1.4, 50.0)
    T = [sv.sample_survival_in_segment(0.0, sv.T_MAX, ctx, sp, u) for u in rng.random(10_000)]
    p_surv = stats.kstest(T, stats.weibull_min(1.4, scale=math.exp(6.0 / 1.4)).cdf).pvalue
    return min(p_visit, p_surv) > 0.01, f"KS p visit {p_visit:.3f}, survival {p_surv:.3f}"


def _kernel_baseline(rng):
    theta, K, reps = np.array([0.3, -0.5]), 50, 10_000
    sd = math.exp(theta[1] / 2)
    a = theta[0] + sd * rng.standard_normal((reps, K))
    R = 20.0 - (a - 1.0) ** 2
    G = np.stack([(a - theta[0]) / sd ** 2, 0.5 * ((a - theta[0]) ** 2 / sd ** 2 - 1.0)], axis=-1)
    with_b = np.array([baseline_gradient(R[r], G[r])[0] for r in range(reps)])
    without = np.einsum("rk,rkj->rj", R, G) / K
    se = np.sqrt(with_b.var(axis=0) / reps + without.var(axis=0) / reps)
    same = np.all(np.abs(with_b.mean(axis=0) - without.mean(axis=0)) < 3 * se)
    smaller = np.all(with_b.var(axis=0) < without.var(axis=0))
    ratio = with_b.var(axis=0) / without.var(axis=0)
    return bool(same and smaller), f"baseline means agree {bool(same)}, variance ratio {ratio.round(4)}"


def _kernel_conjugate(rng):
    recs = simulate_cohort(TR, 40, np.random.default_rng(5))
    data = ChainData(recs)
    o, p = TR.observation, TR.policy
    s = ChainState(beta_d=p.beta_d.copy(), sigma_d2=p.sigma_d2, beta_l=o.longitudinal.beta_l.copy(),
                   sigma_l2=o.longitudinal.sigma_l2, B=np.zeros((data.N, 3)),
                   Sigma_b=o.longitudinal.Sigma_b.copy(), beta_s=np.array([0.0, 0.9, -0.75, -5.0]),
                   h0=5.0, omega=1.05, eta_tox=50.0, nu1=p.nu1, nu2=p.nu2, mu=p.mu, xi=2.0,
                   beta_alpha=o.shared.beta_alpha.copy(), rng=rng)
    from timedtr.inference import _surv_ll
    s.surv_ll = _surv_ll(data, s)
    h = Hyperparameters()
    # dosage block: beta_d | sigma_d2 against the Gaussian closed form
    P = data.WtW / 0.09 + np.eye(5) / 1e4
    mean, cov = np.linalg.solve(P, data.W.T @ data.dose / 0.09), np.linalg.inv(P)
    draws = []
    for _ in range(3000):
        s.sigma_d2 = 0.09
        gibbs_update_dosage(s, data, h)
        draws.append(s.beta_d.copy())
    draws = np.array(draws)
    z1 = np.abs(draws.mean(axis=0) - mean) / np.sqrt(np.diag(cov) / 3000)
    v1 = draws.var(axis=0) / np.diag(cov)
    # random effects with the survival link cut (beta_s1 = 0)
    R = data.R[data.pid == 0] * data.D_b
    resid = data.y[data.pid == 0] - data.Z[data.pid == 0] @ (s.beta_l * data.D_l)
    P = R.T @ R / s.sigma_l2 + np.linalg.inv(s.Sigma_b)
    mean, cov = np.linalg.solve(P, R.T @ resid / s.sigma_l2), np.linalg.inv(P)
    bd = []
    for _ in range(3000):
        update_random_effects(s, data)
        bd.append(s.B[0].copy())
    bd = np.array(bd)
    z2 = np.abs(bd.mean(axis=0) - mean) / np.sqrt(np.diag(cov) / 3000)
    v2 = bd.var(axis=0) / np.diag(cov)
    z, v = np.concatenate([z1, z2]), np.concatenate([v1, v2])
    ok = np.all(z < 4) and np.all(np.abs(v - 1) < 0.15)
    return bool(ok), f"conjugate moments max |z| {z.max():.2f}, variance ratios in [{v.min():.3f}, {v.max():.3f}]"


def test_criterion_6_numerical_kernels(verdict):
    t0 = time.perf_counter()
    rng = np.random.default_rng(6)
    results = [check(rng) for check in (_kernel_intensity_integral, _kernel_gradient,
                                        _kernel_toxicity, _kernel_samplers, _kernel_baseline,
                                        _kernel_conjugate)]
    minutes = (time.perf_counter() - t0) / 60
    for ok, detail in results:
        log(("ok   " if ok else "FAIL ") + detail)
    ok = all(r[0] for r in results) and minutes < 5
    verdict("criterion 6 (numerical kernels)", ok,
            "; ".join(d for _, d in results) + f"; {minutes:.1f} min")
    assert ok


# --------------------------------------------------------------------------
# 7: determinism


def _pipeline(root):
    root.mkdir()
    assert cli_main(["simulate-cohort", "--n", "40", "--seed", "11", "--out", str(root / "data")]) == 0
    (root / "fit.json").write_text(json.dumps({"iters": 40, "burnin": 20, "thin": 5, "seed": 2}))
    assert cli_main(["fit", "--data", str(root / "data"), "--config", str(root / "fit.json"),
                     "--out", str(root / "post.json"), "--trace-out", str(root / "trace.csv")]) == 0
    (root / "patient.json").write_text(json.dumps({"id": "S1", "y0": 5.0, "covariates": list(S1)}))
    assert cli_main(["optimize", "--posterior", str(root / "post.json"), "--patient-covariates",
                     str(root / "patient.json"), "--steps", "5", "--seed", "3",
                     "--out", str(root / "policy.json")]) == 0
    for spec, name in ((str(root / "policy.json"), "opt"), ("fixed:91", "fixed")):
        assert cli_main(["evaluate-policy", "--posterior", str(root / "post.json"),
                         "--patient-covariates", str(root / "patient.json"), "--policy", spec,
                         "--reps", "20", "--seed", "4", "--out", str(root / f"r_{name}.csv")]) == 0
    return sorted(p for p in root.rglob("*") if p.is_file())


def test_criterion_7_determinism(tmp_path, verdict):
    a = _pipeline(tmp_path / "a")
    b = _pipeline(tmp_path / "b")
    names = [p.relative_to(tmp_path / "a") for p in a]
    same = names == [p.relative_to(tmp_path / "b") for p in b] and all(
        x.read_bytes() == y.read_bytes() for x, y in zip(a, b))
    verdict("criterion 7 (determinism)", same, f"{len(a)} artifacts compared byte for byte")
    assert same
