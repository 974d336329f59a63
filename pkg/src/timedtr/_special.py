"""Special functions used by the intensity compensator.

Everything here is numba-compiled so it can be called from the simulation
and likelihood kernels as well as from plain Python.

The regularized lower incomplete gamma function follows the usual split:
power series for x < a + 1, modified Lentz continued fraction for the
upper tail otherwise.
"""
import math

from numba import njit

EPS = 1e-16
TINY = 1e-300
MAX_ITER = 100000


@njit(cache=True)
def digamma(x):
    """Digamma for x > 0 via upward recurrence and the asymptotic series."""
    result = 0.0
    while x < 6.0:
        result -= 1.0 / x
        x += 1.0
    inv = 1.0 / x
    inv2 = inv * inv
    # Bernoulli-number tail: 1/12, 1/120, 1/252, 1/240, 1/132, 691/32760
    tail = inv2 * (1.0 / 12.0 - inv2 * (1.0 / 120.0 - inv2 * (1.0 / 252.0 - inv2 * (
        1.0 / 240.0 - inv2 * (1.0 / 132.0 - inv2 * 691.0 / 32760.0)))))
    return result + math.log(x) - 0.5 * inv - tail


@njit(cache=True)
def _log_prefactor(a, x):
    # log(x^a e^{-x} / Gamma(a))
    return a * math.log(x) - x - math.lgamma(a)


@njit(cache=True)
def _series_p(a, x):
    ap = a
    term = 1.0 / a
    total = term
    for _ in range(MAX_ITER):
        ap += 1.0
        term *= x / ap
        total += term
        if abs(term) < abs(total) * EPS:
            break
    return total * math.exp(_log_prefactor(a, x))


@njit(cache=True)
def _contfrac_q(a, x):
    b = x + 1.0 - a
    c = 1.0 / TINY
    d = 1.0 / b
    h = d
    for i in range(1, MAX_ITER):
        an = -i * (i - a)
        b += 2.0
        d = an * d + b
        if abs(d) < TINY:
            d = TINY
        c = b + an / c
        if abs(c) < TINY:
            c = TINY
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < EPS:
            break
    return math.exp(_log_prefactor(a, x)) * h


@njit(cache=True)
def gammainc_p(a, x):
    """Regularized lower incomplete gamma P(a, x), a > 0, x >= 0."""
    if x <= 0.0:
        return 0.0
    if x < a + 1.0:
        return _series_p(a, x)
    return 1.0 - _contfrac_q(a, x)


@njit(cache=True)
def gammainc_q(a, x):
    """Regularized upper incomplete gamma Q(a, x) = 1 - P(a, x)."""
    if x <= 0.0:
        return 1.0
    if x < a + 1.0:
        return 1.0 - _series_p(a, x)
    return _contfrac_q(a, x)


@njit(cache=True)
def gamma_pdf(x, a):
    """Unit-rate Gamma(a) density, i.e. dP(a, x)/dx."""
    if x <= 0.0:
        return 0.0
    return math.exp((a - 1.0) * math.log(x) - x - math.lgamma(a))


@njit(cache=True)
def gammainc_p_da(a, x):
    """Partial derivative of P(a, x) with respect to the shape a.

    Uses P(a, x) = sum_n x^(a+n) e^(-x) / Gamma(a+n+1), differentiated term
    by term. Far in the upper tail the derivative is below double precision
    of any quantity it gets added to and is returned as zero.
    """
    if x <= 0.0:
        return 0.0
    if x > a + 1.0 and _contfrac_q(a, x) < 1e-20:
        return 0.0
    logx = math.log(x)
    term = math.exp(a * logx - x - math.lgamma(a + 1.0))
    psi = digamma(a + 1.0)
    total = term * (logx - psi)
    n = 0
    while n < MAX_ITER:
        psi += 1.0 / (a + n + 1.0)
        n += 1
        term *= x / (a + n)
        contrib = term * (logx - psi)
        total += contrib
        if n > x and term < EPS * 1e-3:
            break
    return total
