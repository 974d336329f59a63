"""Forward simulation of visits, doses, labs and survival for one patient.

The compiled kernel walks visit segments: draw the next visit gap by
inverting the compensator (or take a fixed interval), look for a failure
inside the segment by inverting the cumulative hazard, and otherwise draw
the lab at the new visit and the dose assigned there. The path can keep
going past the failure time so the log-2 crossing of the cumulative hazard
(the median-survival reward) is found on the same path.

Randomness inside a kernel comes from numba's per-thread generator, reseeded
from an explicit integer at the start of every rollout, so a rollout is a
pure function of its seed.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .joint import ModelVariant, PatientRecord
from .longitudinal import clamped_cholesky
from .mtpp import VisitEvent, alpha_kernel, decision_kernel, next_visit_kernel
from .params import ObservationParams, PolicyParams, Truths
from .survival import LN2, T_MAX, seg_coeffs, seg_cumhaz, seg_root, tox_advance

FIXED_PRESETS = {"monthly": 30.0, "quarterly": 91.0, "semiannual": 182.0}


class RewardKind(str, enum.Enum):
    LOG_MEDIAN = "log_median_survival"
    PENALIZED = "penalized_visits"


@dataclass(frozen=True)
class RewardSpec:
    """log T_hat, optionally plus eta0 times the number of follow-up visits."""

    kind: RewardKind = RewardKind.LOG_MEDIAN
    eta0: float = 0.0

    @property
    def penalty(self) -> float:
        return self.eta0 if RewardKind(self.kind) is RewardKind.PENALIZED else 0.0


@dataclass
class Trajectory:
    """One simulated patient.

    ``events``/``labs`` stop at the failure time T as in the forward sampler;
    ``path_t``/``path_d``/``path_y`` hold the full simulated decision path,
    which may run past T until the median-survival crossing.
    """

    events: list
    labs: np.ndarray
    b: np.ndarray
    T: float
    J: int
    reward: float
    median_survival: float
    capped: bool
    path_t: np.ndarray = field(repr=False)
    path_d: np.ndarray = field(repr=False)
    path_y: np.ndarray = field(repr=False)


# --------------------------------------------------------------------------
# kernels


@njit(cache=True)
def _grow(a, n):
    out = np.empty(2 * a.shape[0])
    out[:n] = a[:n]
    return out


@njit(cache=True)
def simulate_path_kernel(seed, nu1, nu2, mu, beta_d, sigma_d2, xi, ba0, ba1,
                         beta_l, sigma_l2, L_b, beta_s, h0, omega, eta, x, y0,
                         interval, need_death, need_median, t_max, sls):
    """Simulate one decision path.

    Returns (n, t, d, y, b, T, death_capped, n_before_death, T_med,
    median_capped, n_before_median). ``interval > 0`` switches to a fixed
    visit schedule.
    """
    np.random.seed(seed)
    P = x.shape[0]
    kappa = math.exp(nu2) + 1.0
    gam = math.exp(nu2 - nu1)
    sd_d = math.sqrt(sigma_d2)
    sd_l = math.sqrt(sigma_l2)
    inv_eta = 1.0 / eta
    p_end = beta_l.shape[0]

    xd = 0.0
    xb = 0.0
    for k in range(P):
        xd += x[k] * beta_d[2 + k]
        xb += x[k] * beta_l[2 + k]

    cap = 64
    ts = np.empty(cap)
    ds = np.empty(cap)
    ys = np.empty(cap)
    d0 = beta_d[0] + beta_d[1] * y0 + xd + sd_d * np.random.standard_normal()
    z3 = np.empty(3)
    for k in range(3):
        z3[k] = np.random.standard_normal()
    b = np.zeros(3)
    for r in range(3):
        for c in range(3):
            b[r] += L_b[r, c] * z3[c]
    ts[0] = 0.0
    ds[0] = d0
    ys[0] = y0
    n = 1

    tox = 0.0
    H = 0.0
    T = -1.0
    T_med = -1.0
    death_capped = False
    med_capped = False
    n_death = 0
    n_med = 0
    if not need_death:
        T = 0.0
    if not need_median:
        T_med = 0.0
    while True:
        j = n - 1
        t_cur = ts[j]
        a_j = alpha_kernel(ys[j], xi, ba0, ba1)
        if interval > 0.0:
            gap = interval
        else:
            u = np.random.random()
            gap = next_visit_kernel(a_j, mu, kappa, gam, -math.log1p(-u))
        t_next = t_cur + gap
        hit_cap = t_next >= t_max
        if hit_cap:
            t_next = t_max
        c0, c1, c2, amp = seg_coeffs(ds[j], ys[j], a_j, tox, xb, beta_l, b, beta_s, h0, sls)
        hseg = -1.0
        if T < 0.0:
            us = np.random.random()
            target = -math.log1p(-us)
            hseg = seg_cumhaz(c0, c1, c2, amp, t_cur, inv_eta, omega, t_cur, t_next)
            if hseg >= target:
                T = seg_root(c0, c1, c2, amp, t_cur, inv_eta, omega, t_cur, t_next, target)
                n_death = n
        if T_med < 0.0:
            if hseg < 0.0:
                hseg = seg_cumhaz(c0, c1, c2, amp, t_cur, inv_eta, omega, t_cur, t_next)
            if H + hseg >= LN2:
                T_med = seg_root(c0, c1, c2, amp, t_cur, inv_eta, omega, t_cur, t_next, LN2 - H)
                n_med = n
            H += hseg
        if T >= 0.0 and T_med >= 0.0:
            break
        if hit_cap:
            if T < 0.0:
                T = t_max
                death_capped = True
                n_death = n
            if T_med < 0.0:
                T_med = t_max
                med_capped = True
                n_med = n
            break
        # a visit happens at t_next
        lat = (beta_l[0] + beta_l[1] * ds[j] + xb + beta_l[p_end - 2] * t_next
               + beta_l[p_end - 1] * t_next * t_next + b[0] + b[1] * ds[j] + b[2] * t_next)
        y_new = lat + sd_l * np.random.standard_normal()
        d_new = beta_d[0] + beta_d[1] * y_new + xd + sd_d * np.random.standard_normal()
        tox = tox_advance(tox, ds[j], t_next - t_cur, inv_eta)
        if n == ts.shape[0]:
            ts = _grow(ts, n)
            ds = _grow(ds, n)
            ys = _grow(ys, n)
        ts[n] = t_next
        ds[n] = d_new
        ys[n] = y_new
        n += 1
    return (n, ts[:n].copy(), ds[:n].copy(), ys[:n].copy(), b, T, death_capped, n_death,
            T_med, med_capped, n_med)


@njit(cache=True)
def rollout_batch_kernel(seeds, draw_idx, theta, n_beta_d, interval, want_grad, penalty,
                         xi, ba0, ba1, beta_l, sigma_l2, L_b, beta_s, h0, omega, eta,
                         x, y0, t_max, sls):
    """Rewards (and decision scores) for a batch of median-survival rollouts.

    ``theta`` is (nu1, nu2, mu, beta_d..., log sigma_d2); posterior arrays are
    indexed by ``draw_idx``.
    """
    K = seeds.shape[0]
    p = theta.shape[0]
    nu1 = theta[0]
    nu2 = theta[1]
    mu = theta[2]
    beta_d = theta[3:3 + n_beta_d].copy()
    sigma_d2 = math.exp(theta[p - 1])
    rewards = np.empty(K)
    medians = np.empty(K)
    visits = np.empty(K, dtype=np.int64)
    capped = np.zeros(K, dtype=np.bool_)
    grads = np.zeros((K, p if want_grad else 0))
    for k in range(K):
        i = draw_idx[k]
        res = simulate_path_kernel(seeds[k], nu1, nu2, mu, beta_d, sigma_d2, xi[i], ba0[i],
                                   ba1[i], beta_l[i], sigma_l2[i], L_b[i], beta_s[i], h0[i],
                                   omega[i], eta[i], x, y0, interval, False, True, t_max, sls)
        t_all = res[1]
        d_all = res[2]
        y_all = res[3]
        T_med = res[8]
        n_med = res[10]
        capped[k] = res[9]
        medians[k] = T_med
        visits[k] = n_med - 1
        rewards[k] = math.log(T_med) + penalty * (n_med - 1)
        if want_grad:
            decision_kernel(t_all[:n_med], d_all[:n_med], y_all[:n_med], x, T_med, nu1, nu2,
                            mu, beta_d, sigma_d2, xi[i], ba0[i], ba1[i], grads[k])
            if interval > 0.0:
                # scheduled visits carry no timing score
                grads[k, :3] = 0.0
    return rewards, grads, medians, visits, capped


# --------------------------------------------------------------------------
# Python-facing operations


def _seed_from(rng) -> int:
    if isinstance(rng, (int, np.integer)):
        return int(rng) & 0xFFFFFFFF
    return int(rng.integers(0, 2 ** 32 - 1))


def _run(policy, obs, x, y0, seed, interval, need_death, need_median, sls, t_max=T_MAX):
    lp, sp, sh = obs.longitudinal, obs.survival, obs.shared
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    if policy.beta_d.shape[0] != 2 + x.shape[0] or lp.beta_l.shape[0] != 4 + x.shape[0]:
        raise ValueError("covariate vector does not match the coefficient dimensions")
    return simulate_path_kernel(
        seed, policy.nu1, policy.nu2, policy.mu, policy.beta_d, policy.sigma_d2, sh.xi,
        sh.beta_alpha[0], sh.beta_alpha[1], lp.beta_l, lp.sigma_l2, clamped_cholesky(lp.Sigma_b),
        sp.beta_s, sp.h0, sp.omega, sp.eta_tox, x, float(y0), float(interval),
        need_death, need_median, float(t_max), sls)


def compute_reward(median_survival: float, n_visits: int, spec: RewardSpec = RewardSpec()) -> float:
    """log of the median-survival crossing, plus the visit penalty if requested."""
    return math.log(median_survival) + spec.penalty * n_visits


def _trajectory(res, spec):
    n, t, d, y, b, T, dcap, n_death, T_med, mcap, n_med = res
    events = [VisitEvent(float(t[j]), float(d[j])) for j in range(n_death)]
    return Trajectory(events=events, labs=y[:n_death].copy(), b=b, T=float(T), J=n_death - 1,
                      reward=compute_reward(T_med, n_med - 1, spec), median_survival=float(T_med),
                      capped=bool(dcap or mcap), path_t=t, path_d=d, path_y=y)


def simulate_trajectory(theta: PolicyParams, phi: ObservationParams, x, y0: float, rng,
                        reward_spec: RewardSpec = RewardSpec(),
                        variant=ModelVariant.JOINT) -> Trajectory:
    """Sample visits, doses, labs and a failure time for a new patient, plus its reward.

    The random effects are drawn from N(0, Sigma_b). ``rng`` is a numpy
    Generator or an integer seed.
    """
    res = _run(theta, phi, x, y0, _seed_from(rng), 0.0, True, True,
               ModelVariant(variant) is ModelVariant.SLS)
    return _trajectory(res, reward_spec)


def fixed_schedule_rollout(interval_days: float, theta_dosage: PolicyParams,
                           phi: ObservationParams, x, y0: float, rng,
                           reward_spec: RewardSpec = RewardSpec(),
                           variant=ModelVariant.JOINT) -> Trajectory:
    """Like :func:`simulate_trajectory` but visits fall every ``interval_days``.

    Only the dosage part of ``theta_dosage`` is used.
    """
    if not interval_days > 0:
        raise ValueError("interval must be positive")
    res = _run(theta_dosage, phi, x, y0, _seed_from(rng), float(interval_days), True, True,
               ModelVariant(variant) is ModelVariant.SLS)
    return _trajectory(res, reward_spec)


def simulate_cohort(truths: Truths, n_patients: int, rng: np.random.Generator,
                    id_prefix: str = "P") -> list[PatientRecord]:
    """Synthetic cohort under ``truths`` with administrative Weibull(3, 8000) censoring.

    Covariates: donor age N(52.5, 15.8^2) and BMI N(24.3, 4.5^2), both
    standardized with those population moments, and DGF ~ Bernoulli(0.4).
    Initial labs y0 ~ N(5, 0.1^2).
    """
    if n_patients < 1:
        raise ValueError("need at least one patient")
    age = rng.normal(52.5, 15.8, n_patients)
    dgf = rng.binomial(1, 0.4, n_patients).astype(np.float64)
    bmi = rng.normal(24.3, 4.5, n_patients)
    X = np.column_stack([(age - 52.5) / 15.8, dgf, (bmi - 24.3) / 4.5])
    y0 = rng.normal(5.0, 0.1, n_patients)
    C = 8000.0 * rng.weibull(3.0, n_patients)
    seeds = rng.integers(0, 2 ** 32 - 1, n_patients)
    width = len(str(n_patients))
    records = []
    for i in range(n_patients):
        res = _run(truths.policy, truths.observation, X[i], y0[i], int(seeds[i]), 0.0,
                   True, False, False)
        n, t, d, y, b, T = res[:6]
        n_death = res[7]
        T_tilde = min(T, C[i])
        keep = t[:n_death] < T_tilde
        records.append(PatientRecord(id=f"{id_prefix}{i:0{width}d}", x=X[i], t=t[:n_death][keep],
                                     d=d[:n_death][keep], labs=y[:n_death][keep],
                                     T_tilde=float(T_tilde), delta=int(T <= C[i])))
    return records
