"""
Fitting the joint model to a simulated cohort
=============================================

Simulates a cohort at the simulation truths, runs the sampler for the joint
model and for the variant that feeds observed labs to the hazard (SLS), and
compares them by WAIC. The default chain is short so the script finishes in
a few minutes; pass ``--full`` for the 500-patient, 6000-iteration setting
used by the acceptance suite (about 10 minutes per model).
"""

import sys
import time

import numpy as np

from timedtr.inference import run_chain
from timedtr.joint import ModelVariant, waic
from timedtr.params import simulation_truths
from timedtr.simulate import simulate_cohort

full = "--full" in sys.argv
n, iters, burnin, thin = (500, 6000, 1000, 10) if full else (200, 1200, 400, 4)

truths = simulation_truths()
records = simulate_cohort(truths, n, np.random.default_rng(2024))
visits = sum(r.n_visits for r in records)
censored = np.mean([r.delta == 0 for r in records])
print(f"{n} patients, {visits} visits, {censored:.1%} censored, "
      f"median follow-up {np.median([r.T_tilde for r in records]):.0f} days")

# %%
# Joint model. Acceptance rates are per block; b is the per-patient random
# effect update, beta_l the fixed-effect update, both accepted on the
# survival likelihood ratio.
fits = {}
for variant in (ModelVariant.JOINT, ModelVariant.SLS):
    t0 = time.perf_counter()
    fits[variant] = run_chain(records, iters=iters, burnin=burnin, thin=thin, seed=3,
                              variant=variant)
    rates = ", ".join(f"{k} {v:.2f}" for k, v in fits[variant].acceptance.items())
    print(f"\n{variant.value}: {time.perf_counter() - t0:.0f} s, acceptance {rates}")

# %%
# Survival coefficients against the truth.
post = fits[ModelVariant.JOINT]
truth = dict(zip(["beta_s1", "beta_s2", "beta_s3", "beta_s4"], truths.observation.survival.beta_s))
truth.update(h0=truths.observation.survival.h0, omega=truths.observation.survival.omega,
             eta_tox=truths.observation.survival.eta_tox)
summ = post.summary("beta_s")
print("\nparameter   truth    mean     95% interval")
for k in range(4):
    name = f"beta_s{k + 1}"
    print(f"{name:9s} {truth[name]:7.3f} {summ['mean'][k]:8.3f}   "
          f"({summ['lower'][k]:.3f}, {summ['upper'][k]:.3f})")
for name in ("h0", "omega", "eta_tox"):
    s = post.summary(name)
    print(f"{name:9s} {truth[name]:7.3f} {float(s['mean'][0]):8.3f}   "
          f"({float(s['lower'][0]):.3f}, {float(s['upper'][0]):.3f})")

# %%
# Lower WAIC is better. The two models share the dose, timing and lab terms;
# only the survival term differs.
for variant, fit in fits.items():
    print(f"WAIC {variant.value}: {waic(fit.pointwise):.1f}")
