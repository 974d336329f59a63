"""Weibull proportional-hazards survival submodel.

Within the visit segment (t_j, t_{j+1}] the hazard is

    h(t) = exp(-LP(t)) * omega * t^(omega - 1)
    LP(t) = bs1 * ystar(t) + bs2 * d_j + bs3 * Tox(t) + bs4 * alpha_j + h0

with the dose d_j and visit magnitude alpha_j carried forward from visit j.
Tox(t) is the exponentially weighted average of the past dose path with
memory ``eta_tox`` days; inside a segment it relaxes toward d_j, so LP(t) is
a quadratic plus one decaying exponential. The cumulative hazard is
integrated per segment in u = t^omega, which removes the t^(omega - 1)
endpoint singularity at the origin.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from numba import njit

from .mtpp import alpha_kernel
from .params import LongitudinalParams, SharedVisitParams, SurvivalParams

T_MAX = 30000.0
LN2 = math.log(2.0)
SIMPSON_TOL = 1e-8
SIMPSON_DEPTH = 40
ROOT_TOL = 1e-6


# --------------------------------------------------------------------------
# compiled kernels


@njit(cache=True)
def _lp(t, c0, c1, c2, tox_amp, a0, inv_eta):
    return c0 + t * (c1 + c2 * t) + tox_amp * math.exp(-(t - a0) * inv_eta)


@njit(cache=True)
def _fu(u, c0, c1, c2, tox_amp, a0, inv_eta, inv_omega):
    t = u ** inv_omega if u > 0.0 else 0.0
    return math.exp(-_lp(t, c0, c1, c2, tox_amp, a0, inv_eta))


@njit(cache=True)
def seg_cumhaz(c0, c1, c2, tox_amp, a0, inv_eta, omega, lo, hi):
    """Adaptive Simpson integral of the hazard over [lo, hi] inside one segment.

    Absolute tolerance SIMPSON_TOL, at most SIMPSON_DEPTH bisections.
    """
    if hi <= lo:
        return 0.0
    inv_omega = 1.0 / omega
    ua = lo ** omega
    ub = hi ** omega
    fa = _fu(ua, c0, c1, c2, tox_amp, a0, inv_eta, inv_omega)
    fb = _fu(ub, c0, c1, c2, tox_amp, a0, inv_eta, inv_omega)
    um = 0.5 * (ua + ub)
    fm = _fu(um, c0, c1, c2, tox_amp, a0, inv_eta, inv_omega)
    whole = (ub - ua) / 6.0 * (fa + 4.0 * fm + fb)

    n = SIMPSON_DEPTH + 2
    s_a = np.empty(n)
    s_b = np.empty(n)
    s_fa = np.empty(n)
    s_fm = np.empty(n)
    s_fb = np.empty(n)
    s_wh = np.empty(n)
    s_tol = np.empty(n)
    s_dep = np.empty(n, dtype=np.int64)
    top = 0
    s_a[0] = ua
    s_b[0] = ub
    s_fa[0] = fa
    s_fm[0] = fm
    s_fb[0] = fb
    s_wh[0] = whole
    s_tol[0] = SIMPSON_TOL
    s_dep[0] = 0
    total = 0.0
    while top >= 0:
        a = s_a[top]
        b = s_b[top]
        fa = s_fa[top]
        fm = s_fm[top]
        fb = s_fb[top]
        wh = s_wh[top]
        tol = s_tol[top]
        dep = s_dep[top]
        top -= 1
        m = 0.5 * (a + b)
        lm = 0.5 * (a + m)
        rm = 0.5 * (m + b)
        flm = _fu(lm, c0, c1, c2, tox_amp, a0, inv_eta, inv_omega)
        frm = _fu(rm, c0, c1, c2, tox_amp, a0, inv_eta, inv_omega)
        left = (m - a) / 6.0 * (fa + 4.0 * flm + fm)
        right = (b - m) / 6.0 * (fm + 4.0 * frm + fb)
        diff = left + right - wh
        if dep >= SIMPSON_DEPTH or abs(diff) <= 15.0 * tol:
            total += left + right + diff / 15.0
        else:
            top += 1
            s_a[top] = m
            s_b[top] = b
            s_fa[top] = fm
            s_fm[top] = frm
            s_fb[top] = fb
            s_wh[top] = right
            s_tol[top] = 0.5 * tol
            s_dep[top] = dep + 1
            top += 1
            s_a[top] = a
            s_b[top] = m
            s_fa[top] = fa
            s_fm[top] = flm
            s_fb[top] = fm
            s_wh[top] = left
            s_tol[top] = 0.5 * tol
            s_dep[top] = dep + 1
    return total


@njit(cache=True)
def seg_root(c0, c1, c2, tox_amp, a0, inv_eta, omega, lo, hi, target):
    """Smallest s in [lo, hi] with cumulative hazard over [lo, s] equal to target."""
    a = lo
    ha = 0.0
    b = hi
    while b - a > ROOT_TOL:
        m = 0.5 * (a + b)
        hm = ha + seg_cumhaz(c0, c1, c2, tox_amp, a0, inv_eta, omega, a, m)
        if hm < target:
            a = m
            ha = hm
        else:
            b = m
    return 0.5 * (a + b)


@njit(cache=True)
def seg_coeffs(dj, yj, alpha_j, tox_j, xb, beta_l, b, beta_s, h0, sls):
    """Linear-predictor coefficients (c0, c1, c2, tox_amp) for one segment.

    ``xb`` is x . beta_l[2:2+P]; ``tox_j`` is Tox at the segment start.
    """
    p_end = beta_l.shape[0]
    if sls:
        A = yj
        B = 0.0
        C = 0.0
    else:
        A = beta_l[0] + beta_l[1] * dj + xb + b[0] + b[1] * dj
        B = beta_l[p_end - 2] + b[2]
        C = beta_l[p_end - 1]
    c0 = beta_s[0] * A + (beta_s[1] + beta_s[2]) * dj + beta_s[3] * alpha_j + h0
    return c0, beta_s[0] * B, beta_s[0] * C, beta_s[2] * (tox_j - dj)


@njit(cache=True)
def tox_advance(tox, dj, dt, inv_eta):
    return dj + (tox - dj) * math.exp(-dt * inv_eta)


@njit(cache=True)
def path_survival_loglik(t, d, y, x, T, delta, beta_l, b, beta_s, h0, omega, eta,
                         xi, ba0, ba1, sls):
    """delta * log h(T) - H(0, T) along an observed visit path."""
    P = x.shape[0]
    xb = 0.0
    for k in range(P):
        xb += x[k] * beta_l[2 + k]
    inv_eta = 1.0 / eta
    n = t.shape[0]
    tox = 0.0
    H = 0.0
    ll = 0.0
    for j in range(n):
        start = t[j]
        if start >= T and j > 0:
            break
        end = t[j + 1] if j + 1 < n else T
        last = end >= T
        if last:
            end = T
        aj = alpha_kernel(y[j], xi, ba0, ba1)
        c0, c1, c2, amp = seg_coeffs(d[j], y[j], aj, tox, xb, beta_l, b, beta_s, h0, sls)
        H += seg_cumhaz(c0, c1, c2, amp, start, inv_eta, omega, start, end)
        if last:
            if delta:
                ll += -_lp(T, c0, c1, c2, amp, start, inv_eta) + math.log(omega) \
                      + (omega - 1.0) * math.log(T)
            break
        tox = tox_advance(tox, d[j], end - start, inv_eta)
    return ll - H


@njit(cache=True)
def cohort_survival_loglik(ptr, t, d, y, X, T, delta, beta_l, B, beta_s, h0, omega, eta,
                           xi, ba0, ba1, sls):
    """Per-patient survival log-likelihoods for a CSR-packed cohort."""
    n = ptr.shape[0] - 1
    out = np.empty(n)
    for i in range(n):
        s, e = ptr[i], ptr[i + 1]
        out[i] = path_survival_loglik(t[s:e], d[s:e], y[s:e], X[i], T[i], delta[i], beta_l,
                                      B[i], beta_s, h0, omega, eta, xi, ba0, ba1, sls)
    return out


# --------------------------------------------------------------------------
# Python-facing operations


@dataclass
class HazardContext:
    """A visit path plus the parameters the hazard needs beyond the survival block."""

    t: np.ndarray
    d: np.ndarray
    labs: np.ndarray
    x: np.ndarray
    b: np.ndarray
    longitudinal: LongitudinalParams
    shared: SharedVisitParams
    sls: bool = False
    _tox: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        self.t = np.asarray(self.t, dtype=np.float64).reshape(-1)
        self.d = np.asarray(self.d, dtype=np.float64).reshape(-1)
        self.labs = np.asarray(self.labs, dtype=np.float64).reshape(-1)
        self.x = np.asarray(self.x, dtype=np.float64).reshape(-1)
        self.b = np.asarray(self.b, dtype=np.float64).reshape(-1)
        if self.t.shape[0] == 0 or self.t[0] != 0.0:
            raise ValueError("visit path must start at t = 0")
        if np.any(np.diff(self.t) <= 0):
            raise ValueError("visit times must be strictly increasing")
        if not (self.t.shape == self.d.shape == self.labs.shape):
            raise ValueError("doses and labs must align with visits")

    def segment_of(self, t: float) -> int:
        """Index j of the segment (t_j, t_{j+1}] containing t (t = 0 maps to 0)."""
        return max(int(np.searchsorted(self.t, t, side="left")) - 1, 0)

    def tox_at_visits(self, eta: float) -> np.ndarray:
        tox = np.zeros(self.t.shape[0])
        for j in range(1, tox.shape[0]):
            tox[j] = tox_advance(tox[j - 1], self.d[j - 1], self.t[j] - self.t[j - 1], 1.0 / eta)
        return tox

    def coeffs(self, j: int, sp: SurvivalParams, tox_j: float):
        aj = alpha_kernel(self.labs[j], self.shared.xi, self.shared.beta_alpha[0],
                          self.shared.beta_alpha[1])
        lp = self.longitudinal
        xb = float(self.x @ lp.beta_l[2:2 + self.x.shape[0]])
        return seg_coeffs(self.d[j], self.labs[j], aj, tox_j, xb, lp.beta_l, self.b,
                          sp.beta_s, sp.h0, self.sls)

    def extend(self, t_new: float, d_new: float, y_new: float) -> None:
        if t_new <= self.t[-1]:
            raise ValueError("new visit must come after the last one")
        self.t = np.append(self.t, t_new)
        self.d = np.append(self.d, d_new)
        self.labs = np.append(self.labs, y_new)


def toxicity(t: float, events, eta_tox: float) -> float:
    """Exponentially weighted dose average (1/eta) * int_0^t d(s) exp(-(t-s)/eta) ds.

    ``events`` is a sequence of (time, dose) pairs starting at time 0; the dose
    is piecewise constant between events.
    """
    if t < 0:
        raise ValueError("t must be nonnegative")
    ev = np.asarray([(e.t, e.d) if hasattr(e, "t") else tuple(e) for e in events], dtype=np.float64)
    total = 0.0
    for j in range(ev.shape[0]):
        a = ev[j, 0]
        if a >= t:
            break
        b = min(ev[j + 1, 0], t) if j + 1 < ev.shape[0] else t
        total += ev[j, 1] * (math.exp(-(t - b) / eta_tox) - math.exp(-(t - a) / eta_tox))
    return total


def hazard(t: float, ctx: HazardContext, sp: SurvivalParams) -> float:
    if not t > 0:
        raise ValueError(f"hazard is defined for t > 0, got {t}")
    j = ctx.segment_of(t)
    tox = ctx.tox_at_visits(sp.eta_tox)
    c0, c1, c2, amp = ctx.coeffs(j, sp, tox[j])
    lp = _lp(t, c0, c1, c2, amp, ctx.t[j], 1.0 / sp.eta_tox)
    return math.exp(-lp) * sp.omega * t ** (sp.omega - 1.0)


def cumulative_hazard(a: float, b: float, ctx: HazardContext, sp: SurvivalParams) -> float:
    """Integral of the hazard over [a, b], split at visit times."""
    if a > b:
        raise ValueError(f"need a <= b, got a={a}, b={b}")
    if a < 0:
        raise ValueError("a must be nonnegative")
    tox = ctx.tox_at_visits(sp.eta_tox)
    inv_eta = 1.0 / sp.eta_tox
    n = ctx.t.shape[0]
    total = 0.0
    for j in range(n):
        s = ctx.t[j]
        e = ctx.t[j + 1] if j + 1 < n else math.inf
        lo, hi = max(a, s), min(b, e)
        if hi <= lo:
            continue
        c0, c1, c2, amp = ctx.coeffs(j, sp, tox[j])
        total += seg_cumhaz(c0, c1, c2, amp, s, inv_eta, sp.omega, lo, hi)
    return total


def survival_loglik(record, ctx: HazardContext, sp: SurvivalParams) -> float:
    """delta * log h(T~) - H(0, T~); censored records contribute log S(T~) only."""
    T = float(record.T_tilde)
    if not T > 0:
        raise ValueError("observed time must be positive")
    lp = ctx.longitudinal
    return float(path_survival_loglik(ctx.t, ctx.d, ctx.labs, ctx.x, T, bool(record.delta),
                                      lp.beta_l, ctx.b, sp.beta_s, sp.h0, sp.omega, sp.eta_tox,
                                      ctx.shared.xi, ctx.shared.beta_alpha[0],
                                      ctx.shared.beta_alpha[1], ctx.sls))


def sample_survival_in_segment(t_start: float, t_end: float, ctx: HazardContext,
                               sp: SurvivalParams, u: float) -> Optional[float]:
    """Failure time T with H(t_start, T) = -log(1 - u), or None if it falls past t_end.

    ``t_end`` is capped at :data:`T_MAX`.
    """
    if not 0.0 < u < 1.0:
        raise ValueError(f"u must lie strictly inside (0, 1), got {u}")
    if not t_start < t_end:
        raise ValueError("need t_start < t_end")
    t_end = min(t_end, T_MAX)
    target = -math.log1p(-u)
    return _first_crossing(t_start, t_end, ctx, sp, target)


def _first_crossing(t_start, t_end, ctx, sp, target):
    tox = ctx.tox_at_visits(sp.eta_tox)
    inv_eta = 1.0 / sp.eta_tox
    n = ctx.t.shape[0]
    acc = 0.0
    for j in range(n):
        s = ctx.t[j]
        e = ctx.t[j + 1] if j + 1 < n else math.inf
        lo, hi = max(t_start, s), min(t_end, e)
        if hi <= lo:
            continue
        c0, c1, c2, amp = ctx.coeffs(j, sp, tox[j])
        hseg = seg_cumhaz(c0, c1, c2, amp, s, inv_eta, sp.omega, lo, hi)
        if acc + hseg >= target:
            return float(seg_root(c0, c1, c2, amp, s, inv_eta, sp.omega, lo, hi, target - acc))
        acc += hseg
    return None


def median_survival_root(ctx: HazardContext, sp: SurvivalParams,
                         extend: Callable[[HazardContext], bool] | None = None,
                         cap: float = T_MAX) -> tuple[float, bool]:
    """Time at which the cumulative hazard from 0 reaches log 2 along the path.

    ``extend`` appends one more visit to ``ctx`` (returning False when it cannot);
    without it the last visit's dose and lab are carried forward. Returns the
    root and a flag set when the cap was hit first.
    """
    acc = 0.0
    j = 0
    inv_eta = 1.0 / sp.eta_tox
    tox = 0.0
    while True:
        if j + 1 >= ctx.t.shape[0] and extend is not None and ctx.t[-1] < cap:
            if not extend(ctx):
                extend = None
        s = ctx.t[j]
        e = ctx.t[j + 1] if j + 1 < ctx.t.shape[0] else cap
        e = min(e, cap)
        c0, c1, c2, amp = ctx.coeffs(j, sp, tox)
        hseg = seg_cumhaz(c0, c1, c2, amp, s, inv_eta, sp.omega, s, e)
        if acc + hseg >= LN2:
            return float(seg_root(c0, c1, c2, amp, s, inv_eta, sp.omega, s, e, LN2 - acc)), False
        acc += hseg
        if e >= cap:
            return cap, True
        tox = tox_advance(tox, ctx.d[j], e - s, inv_eta)
        j += 1
