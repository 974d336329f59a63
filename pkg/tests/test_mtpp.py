import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate, special, stats

from timedtr import mtpp
from timedtr.mtpp import VisitEvent
from timedtr.params import PolicyParams, SharedVisitParams, simulation_truths

TRUTHS = simulation_truths()
POLICY = TRUTHS.policy
SHARED = TRUTHS.observation.shared


def reference_decision_loglik(t, d, y, x, horizon, pol, sh):
    """Direct evaluation with scipy densities, no shared code."""
    kappa = math.exp(pol.nu2) + 1.0
    gam = math.exp(pol.nu2 - pol.nu1)
    ll = 0.0
    for j in range(len(t)):
        m = pol.beta_d[0] + pol.beta_d[1] * y[j] + np.dot(pol.beta_d[2:], x)
        ll += stats.norm.logpdf(d[j], m, math.sqrt(pol.sigma_d2))
        a = sh.xi / (1.0 + math.exp(sh.beta_alpha[0] + sh.beta_alpha[1] * y[j]))
        end = t[j + 1] if j + 1 < len(t) else horizon
        seg = end - t[j]
        ll -= math.exp(pol.mu) * seg + a * special.gammainc(kappa, gam * seg)
        if j + 1 < len(t):
            ll += math.log(math.exp(pol.mu) + a * stats.gamma.pdf(seg, kappa, scale=1 / gam))
    return ll


def test_alpha_hand_values():
    assert mtpp.alpha_magnitude(5.0, SharedVisitParams(2.0, [10.0, -1.8])) == pytest.approx(
        2.0 / (1.0 + math.e), rel=1e-14)
    assert mtpp.alpha_magnitude(5.2, SHARED) == pytest.approx(0.3089305, abs=1e-7)


def test_alpha_extreme_arguments_are_stable():
    assert mtpp.alpha_magnitude(-1e4, SHARED) == pytest.approx(0.0, abs=1e-300)
    assert mtpp.alpha_magnitude(1e4, SHARED) == pytest.approx(SHARED.xi)


@settings(max_examples=100, deadline=None)
@given(y=st.floats(-20, 20), dy=st.floats(1e-3, 1.0))
def test_alpha_bounded_and_increasing(y, dy):
    a0, a1 = mtpp.alpha_magnitude(y, SHARED), mtpp.alpha_magnitude(y + dy, SHARED)
    assert 0.0 <= a0 <= SHARED.xi
    assert a1 >= a0


def test_intensity_peak_and_baseline():
    s = np.linspace(0.5, 200, 4000)
    lam = np.array([mtpp.intensity_at(v, 0.4, POLICY) for v in s])
    assert s[np.argmax(lam)] == pytest.approx(POLICY.peak_time, abs=0.1)
    assert mtpp.intensity_at(1e5, 0.4, POLICY) == pytest.approx(math.exp(POLICY.mu), rel=1e-9)
    with pytest.raises(ValueError):
        mtpp.intensity_at(0.0, 0.4, POLICY)


def test_intensity_integral_matches_quadrature():
    for delta in [0.5, 12.0, 60.0, 900.0]:
        ref, _ = integrate.quad(lambda s: mtpp.intensity_at(s, 0.7, POLICY), 0, delta,
                                points=[POLICY.peak_time] if delta > POLICY.peak_time else None,
                                epsabs=0, epsrel=1e-12, limit=200)
        assert mtpp.intensity_integral(delta, 0.7, POLICY) == pytest.approx(ref, rel=1e-9)
    assert mtpp.intensity_integral(0.0, 0.7, POLICY) == 0.0


def test_pure_baseline_gap_closed_form():
    gap = mtpp.sample_next_visit(0.0, POLICY, 0.5)
    assert gap == pytest.approx(math.log(2) * math.exp(4.8), abs=1e-5)
    assert gap == pytest.approx(84.2246, abs=1e-4)


def test_sampled_gap_inverts_compensator():
    for u in [0.01, 0.3, 0.7, 0.999]:
        gap = mtpp.sample_next_visit(0.4, POLICY, u)
        assert mtpp.intensity_integral(gap, 0.4, POLICY) == pytest.approx(-math.log1p(-u), abs=1e-6)


def test_gap_sampler_distribution_in_exponential_case():
    rng = np.random.default_rng(11)
    gaps = [mtpp.sample_next_visit(0.0, POLICY, u) for u in rng.random(10_000)]
    assert stats.kstest(gaps, stats.expon(scale=math.exp(4.8)).cdf).pvalue > 0.01


def test_dosage_density():
    x = np.array([0.1, 1.0, -0.3])
    m = mtpp.dosage_mean(5.1, x, POLICY.beta_d)
    assert m == pytest.approx(1.0 + 0.2 * 5.1 + 0.015 + 0.2 - 0.045)
    assert mtpp.dosage_logpdf(2.0, 5.1, x, POLICY) == pytest.approx(
        stats.norm.logpdf(2.0, m, 0.3), rel=1e-13)
    with pytest.raises(ValueError):
        mtpp.dosage_mean(5.0, x[:2], POLICY.beta_d)


def _path(rng, n=6):
    t = np.concatenate([[0.0], np.cumsum(rng.uniform(2, 90, n - 1))])
    return t, rng.normal(2.0, 0.3, n), rng.normal(5.3, 0.2, n)


def test_decision_loglik_matches_reference():
    rng = np.random.default_rng(3)
    x = np.array([0.2, 0.0, -1.1])
    for _ in range(5):
        t, d, y = _path(rng)
        horizon = t[-1] + 37.5
        ev = [VisitEvent(a, b) for a, b in zip(t, d)]
        got = mtpp.decision_loglik(ev, y, x, horizon, POLICY, SHARED)
        assert got == pytest.approx(reference_decision_loglik(t, d, y, x, horizon, POLICY, SHARED),
                                    rel=1e-11)
        # array input gives the same value
        assert mtpp.decision_loglik(np.column_stack([t, d]), y, x, horizon, POLICY, SHARED) == got


def test_decision_gradient_against_differences():
    rng = np.random.default_rng(8)
    x = np.array([0.5, 1.0, 0.3])
    t, d, y = _path(rng, 8)
    horizon = t[-1] + 10.0
    g = mtpp.decision_loglik_grad(np.column_stack([t, d]), y, x, horizon, POLICY, SHARED)
    v = POLICY.to_vector()
    h = 1e-6
    for i in range(v.shape[0]):
        e = np.zeros_like(v)
        e[i] = h
        f = lambda w: mtpp.decision_loglik(np.column_stack([t, d]), y, x, horizon,
                                           PolicyParams.from_vector(w), SHARED)
        assert g[i] == pytest.approx((f(v + e) - f(v - e)) / (2 * h), rel=1e-5, abs=1e-6)


def test_decision_input_validation():
    x = np.zeros(3)
    with pytest.raises(ValueError):
        mtpp.decision_loglik([VisitEvent(1.0, 2.0)], [5.0], x, 10.0, POLICY, SHARED)
    with pytest.raises(ValueError):
        mtpp.decision_loglik([VisitEvent(0.0, 2.0), VisitEvent(0.0, 2.0)], [5.0, 5.0], x, 10.0,
                             POLICY, SHARED)
    with pytest.raises(ValueError):
        mtpp.decision_loglik([VisitEvent(0.0, 2.0), VisitEvent(20.0, 2.0)], [5.0, 5.0], x, 10.0,
                             POLICY, SHARED)


def test_cohort_timing_matches_single_paths():
    rng = np.random.default_rng(1)
    paths = [_path(rng, n) for n in (1, 3, 7)]
    ptr = np.cumsum([0] + [len(p[0]) for p in paths])
    T = np.array([p[0][-1] + 5.0 for p in paths])
    t = np.concatenate([p[0] for p in paths])
    y = np.concatenate([p[2] for p in paths])
    got = mtpp.cohort_timing_loglik(ptr, t, y, T, POLICY.nu1, POLICY.nu2, POLICY.mu, SHARED.xi,
                                    *SHARED.beta_alpha)
    for i, (tt, dd, yy) in enumerate(paths):
        full = mtpp.decision_loglik(np.column_stack([tt, dd]), yy, np.zeros(3), T[i], POLICY, SHARED)
        dose = sum(mtpp.dosage_logpdf(a, b, np.zeros(3), POLICY) for a, b in zip(dd, yy))
        assert got[i] == pytest.approx(full - dose, rel=1e-11)
