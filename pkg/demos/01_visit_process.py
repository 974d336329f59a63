"""
Visit timing, doses and survival for one simulated patient
===========================================================

Walks through the decision model at the simulation truths: how the most
recent lab sets the size of the post-visit intensity bump, how the next visit
is drawn by inverting the compensator, and what one forward-simulated patient
looks like.
"""

import numpy as np

from timedtr import mtpp
from timedtr.params import simulation_truths
from timedtr.simulate import simulate_trajectory

truths = simulation_truths()
policy, obs = truths.policy, truths.observation

# %%
# The bump height alpha grows with the lab value (log creatinine).
for y in (4.5, 5.0, 5.5, 6.0, 6.5):
    print(f"y = {y:.1f}  alpha = {mtpp.alpha_magnitude(y, obs.shared):.4f}")

# %%
# Intensity after a visit: baseline exp(mu) plus a gamma-shaped bump that peaks
# at exp(nu1) days. Its integral is the expected number of visits by then.
alpha = mtpp.alpha_magnitude(5.5, obs.shared)
print(f"\npeak at {policy.peak_time:.1f} days")
for s in (1.0, 7.0, policy.peak_time, 30.0, 90.0, 365.0):
    print(f"s = {s:6.1f}  lambda = {mtpp.intensity_at(s, alpha, policy):.5f}  "
          f"Lambda = {mtpp.intensity_integral(s, alpha, policy):.4f}")

# %%
# Inverse-transform sampling: the gap solves Lambda(gap) = -log(1 - u).
rng = np.random.default_rng(0)
gaps = np.array([mtpp.sample_next_visit(alpha, policy, u) for u in rng.random(5000)])
print(f"\ngap quartiles (days): {np.percentile(gaps, [25, 50, 75]).round(1)}")
print(f"share of gaps inside the first bump (< 60 days): {(gaps < 60).mean():.3f}")

# %%
# One forward simulation for a patient with average covariates.
x = np.zeros(3)
traj = simulate_trajectory(policy, obs, x, 5.0, rng)
print(f"\nfailure at day {traj.T:.0f} after {traj.J} follow-up visits")
print(f"median survival along this path: {traj.median_survival:.0f} days, "
      f"reward log(T_hat) = {traj.reward:.3f}")
print("first visits (day, log dose, log lab):")
for e, y in list(zip(traj.events, traj.labs))[:8]:
    print(f"  {e.t:8.1f}  {e.d:6.3f}  {y:6.3f}")
