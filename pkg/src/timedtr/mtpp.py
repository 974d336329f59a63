"""Marked temporal point process for clinical decisions.

Visits arrive with conditional intensity

    lambda(s) = exp(mu) + alpha * Gamma(s; kappa, gamma)

where ``s`` is the time since the previous visit, kappa = exp(nu2) + 1 and
gamma = exp(nu2 - nu1), so the bump peaks at exp(nu1) days. The bump
magnitude alpha depends on the lab value measured at the opening visit.
Each visit carries a Gaussian log-dose mark.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from numba import njit

from ._special import digamma, gamma_pdf, gammainc_p, gammainc_p_da
from .params import PolicyParams, SharedVisitParams

LOG_2PI = math.log(2.0 * math.pi)
VISIT_ROOT_TOL = 1e-6


@dataclass(frozen=True)
class VisitEvent:
    t: float
    d: float


# --------------------------------------------------------------------------
# compiled kernels


@njit(cache=True)
def alpha_kernel(y, xi, ba0, ba1):
    z = ba0 + ba1 * y
    if z > 0.0:
        e = math.exp(-z)
        return xi * e / (1.0 + e)
    return xi / (1.0 + math.exp(z))


@njit(cache=True)
def intensity_kernel(s, alpha, mu, kappa, gam):
    return math.exp(mu) + alpha * gam * gamma_pdf(gam * s, kappa)


@njit(cache=True)
def compensator_kernel(delta, alpha, mu, kappa, gam):
    if delta <= 0.0:
        return 0.0
    return math.exp(mu) * delta + alpha * gammainc_p(kappa, gam * delta)


@njit(cache=True)
def next_visit_kernel(alpha, mu, kappa, gam, target):
    """Solve compensator(delta) = target by doubling then bisection."""
    lo = 0.0
    hi = 1.0
    while compensator_kernel(hi, alpha, mu, kappa, gam) < target:
        lo = hi
        hi *= 2.0
    while hi - lo > VISIT_ROOT_TOL:
        mid = 0.5 * (lo + hi)
        if compensator_kernel(mid, alpha, mu, kappa, gam) < target:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


@njit(cache=True)
def decision_kernel(t, d, y, x, horizon, nu1, nu2, mu, beta_d, sigma_d2,
                    xi, ba0, ba1, grad):
    """Decision log-likelihood over one event path; fills ``grad`` if non-empty.

    Gradient coordinates: (nu1, nu2, mu, beta_d..., log sigma_d2).
    """
    n = t.shape[0]
    p = beta_d.shape[0]
    want = grad.shape[0] > 0
    if want:
        for i in range(grad.shape[0]):
            grad[i] = 0.0
    kappa = math.exp(nu2) + 1.0
    gam = math.exp(nu2 - nu1)
    emu = math.exp(mu)
    psi_k = digamma(kappa) if want else 0.0
    log_gam = nu2 - nu1
    ll = 0.0

    # dosage marks
    for j in range(n):
        m = beta_d[0] + beta_d[1] * y[j]
        for k in range(p - 2):
            m += beta_d[2 + k] * x[k]
        r = d[j] - m
        ll += -0.5 * (LOG_2PI + math.log(sigma_d2)) - 0.5 * r * r / sigma_d2
        if want:
            w = r / sigma_d2
            grad[3] += w
            grad[4] += w * y[j]
            for k in range(p - 2):
                grad[5 + k] += w * x[k]
            grad[3 + p] += -0.5 + 0.5 * r * r / sigma_d2

    # visit times: intensity at each follow-up, compensator over each gap
    for j in range(n):
        a = alpha_kernel(y[j], xi, ba0, ba1)
        if j + 1 < n:
            seg = t[j + 1] - t[j]
        else:
            seg = horizon - t[j]
        if seg <= 0.0:
            continue
        z = gam * seg
        ll -= emu * seg + a * gammainc_p(kappa, z)
        if want:
            zp = z * gamma_pdf(z, kappa)
            grad[2] -= emu * seg
            grad[0] += a * zp
            grad[1] -= a * ((kappa - 1.0) * gammainc_p_da(kappa, z) + zp)
        if j + 1 < n:
            g = gam * gamma_pdf(z, kappa)
            lam = emu + a * g
            ll += math.log(lam)
            if want:
                ag = a * g / lam
                grad[2] += emu / lam
                grad[0] += ag * (z - kappa)
                grad[1] += ag * ((kappa - 1.0) * (math.log(seg) + log_gam - psi_k)
                                 + kappa - z)
    return ll


@njit(cache=True)
def timing_kernel(t, y, horizon, nu1, nu2, mu, xi, ba0, ba1):
    """Log-likelihood of the visit times alone (no dosage marks)."""
    n = t.shape[0]
    kappa = math.exp(nu2) + 1.0
    gam = math.exp(nu2 - nu1)
    emu = math.exp(mu)
    ll = 0.0
    for j in range(n):
        a = alpha_kernel(y[j], xi, ba0, ba1)
        seg = t[j + 1] - t[j] if j + 1 < n else horizon - t[j]
        if seg <= 0.0:
            continue
        z = gam * seg
        ll -= emu * seg + a * gammainc_p(kappa, z)
        if j + 1 < n:
            ll += math.log(emu + a * gam * gamma_pdf(z, kappa))
    return ll


@njit(cache=True)
def cohort_timing_loglik(ptr, t, y, T, nu1, nu2, mu, xi, ba0, ba1):
    """Per-patient visit-time log-likelihoods for a CSR-packed cohort."""
    n = ptr.shape[0] - 1
    out = np.empty(n)
    for i in range(n):
        s, e = ptr[i], ptr[i + 1]
        out[i] = timing_kernel(t[s:e], y[s:e], T[i], nu1, nu2, mu, xi, ba0, ba1)
    return out


# --------------------------------------------------------------------------
# Python-facing operations


def alpha_magnitude(y: float, shared: SharedVisitParams) -> float:
    """Peak magnitude xi / (1 + exp((1, y) . beta_alpha)), always in (0, xi)."""
    return float(alpha_kernel(float(y), shared.xi, shared.beta_alpha[0], shared.beta_alpha[1]))


def intensity_at(elapsed: float, alpha: float, policy: PolicyParams) -> float:
    if not elapsed > 0:
        raise ValueError(f"elapsed time must be positive, got {elapsed}")
    return float(intensity_kernel(float(elapsed), float(alpha), policy.mu, policy.kappa, policy.gamma))


def intensity_integral(delta: float, alpha: float, policy: PolicyParams) -> float:
    """Compensator exp(mu) * delta + alpha * P(kappa, gamma * delta)."""
    if delta < 0:
        raise ValueError(f"delta must be nonnegative, got {delta}")
    return float(compensator_kernel(float(delta), float(alpha), policy.mu, policy.kappa, policy.gamma))


def sample_next_visit(alpha: float, policy: PolicyParams, u: float) -> float:
    """Gap to the next visit by inverting the compensator at -log(1 - u)."""
    if not 0.0 < u < 1.0:
        raise ValueError(f"u must lie strictly inside (0, 1), got {u}")
    return float(next_visit_kernel(float(alpha), policy.mu, policy.kappa, policy.gamma,
                                   -math.log1p(-u)))


def dosage_mean(y: float, x, beta_d) -> float:
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    beta_d = np.asarray(beta_d, dtype=np.float64).reshape(-1)
    if beta_d.shape[0] != 2 + x.shape[0]:
        raise ValueError(f"beta_d has length {beta_d.shape[0]}, expected {2 + x.shape[0]}")
    return float(beta_d[0] + beta_d[1] * y + x @ beta_d[2:])


def dosage_logpdf(d: float, y: float, x, policy: PolicyParams) -> float:
    r = d - dosage_mean(y, x, policy.beta_d)
    return -0.5 * (LOG_2PI + math.log(policy.sigma_d2)) - 0.5 * r * r / policy.sigma_d2


def _event_arrays(events, y, x, horizon, policy):
    if len(events) and isinstance(events[0], VisitEvent):
        t = np.array([e.t for e in events], dtype=np.float64)
        d = np.array([e.d for e in events], dtype=np.float64)
    else:
        ev = np.asarray(events, dtype=np.float64).reshape(-1, 2)
        t, d = ev[:, 0].copy(), ev[:, 1].copy()
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    if t.shape[0] == 0 or t[0] != 0.0:
        raise ValueError("event sequence must start with a visit at t = 0")
    if np.any(np.diff(t) <= 0):
        raise ValueError("event times must be strictly increasing")
    if horizon < t[-1]:
        raise ValueError(f"horizon {horizon} precedes the last event at {t[-1]}")
    if y.shape[0] != t.shape[0]:
        raise ValueError("need exactly one lab value per event")
    if policy.beta_d.shape[0] != 2 + x.shape[0]:
        raise ValueError("beta_d length does not match the covariate vector")
    return t, d, y, x


def decision_loglik(events: Sequence[VisitEvent], y, x, horizon: float,
                    policy: PolicyParams, shared: SharedVisitParams) -> float:
    """Log density of visit times and dosages observed on [0, horizon]."""
    t, d, y, x = _event_arrays(events, y, x, horizon, policy)
    return float(decision_kernel(t, d, y, x, float(horizon), policy.nu1, policy.nu2, policy.mu,
                                 policy.beta_d, policy.sigma_d2, shared.xi,
                                 shared.beta_alpha[0], shared.beta_alpha[1], np.empty(0)))


def decision_loglik_grad(events: Sequence[VisitEvent], y, x, horizon: float,
                         policy: PolicyParams, shared: SharedVisitParams) -> np.ndarray:
    """Gradient of :func:`decision_loglik` in (nu1, nu2, mu, beta_d, log sigma_d2)."""
    t, d, y, x = _event_arrays(events, y, x, horizon, policy)
    grad = np.zeros(4 + policy.beta_d.shape[0])
    decision_kernel(t, d, y, x, float(horizon), policy.nu1, policy.nu2, policy.mu,
                    policy.beta_d, policy.sigma_d2, shared.xi,
                    shared.beta_alpha[0], shared.beta_alpha[1], grad)
    return grad
