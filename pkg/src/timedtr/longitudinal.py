"""Linear mixed-effects model for the log lab series.

y(t) = z(t) . beta_l + r(t) . b + eps,  z = (1, d, x, t, t^2),  r = (1, d, t)

where d is the dose set at the most recent visit.
"""
from __future__ import annotations

import math

import numpy as np

from .params import LongitudinalParams

LOG_2PI = math.log(2.0 * math.pi)


def design_vectors(t: float, d_last: float, x) -> tuple[np.ndarray, np.ndarray]:
    if t < 0:
        raise ValueError(f"t must be nonnegative, got {t}")
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    z = np.concatenate([[1.0, d_last], x, [t, t * t]])
    r = np.array([1.0, d_last, t])
    return z, r


def latent_mean(t: float, d_last: float, x, params: LongitudinalParams, b) -> float:
    z, r = design_vectors(t, d_last, x)
    if z.shape[0] != params.beta_l.shape[0]:
        raise ValueError(f"beta_l has length {params.beta_l.shape[0]}, expected {z.shape[0]}")
    b = np.asarray(b, dtype=np.float64).reshape(-1)
    if b.shape[0] != 3:
        raise ValueError("random effects vector must have length 3")
    return float(z @ params.beta_l + r @ b)


def design_matrices(t, d_prev, x) -> tuple[np.ndarray, np.ndarray]:
    """Stacked z and r rows for measurement times ``t`` with preceding doses ``d_prev``."""
    t = np.asarray(t, dtype=np.float64)
    d_prev = np.asarray(d_prev, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    n = t.shape[0]
    one = np.ones(n)
    Z = np.column_stack([one, d_prev, np.tile(x, (n, 1)), t, t * t])
    R = np.column_stack([one, d_prev, t])
    return Z, R


def long_loglik(record, params: LongitudinalParams, b) -> float:
    """Gaussian log-likelihood of the follow-up labs y_1..y_J (y_0 is taken as given).

    The measurement at visit j is conditioned on the dose set at visit j - 1.
    """
    t, d, y = record.t, record.d, record.labs
    if not (t.shape == d.shape == y.shape):
        raise ValueError("labs must align one-to-one with visits")
    if t.shape[0] < 2:
        return 0.0
    Z, R = design_matrices(t[1:], d[:-1], record.x)
    resid = y[1:] - Z @ params.beta_l - R @ np.asarray(b, dtype=np.float64)
    n = resid.shape[0]
    return float(-0.5 * n * (LOG_2PI + math.log(params.sigma_l2))
                 - 0.5 * resid @ resid / params.sigma_l2)


def sample_measurement(t: float, d_last: float, x, params: LongitudinalParams, b,
                       rng: np.random.Generator) -> float:
    return latent_mean(t, d_last, x, params, b) + math.sqrt(params.sigma_l2) * rng.standard_normal()


def clamped_cholesky(S, floor: float = 0.0) -> np.ndarray:
    """Lower factor L with L L^T equal to S after clamping eigenvalues at ``floor``.

    Works for singular or slightly indefinite matrices, where the plain
    Cholesky would fail.
    """
    S = np.asarray(S, dtype=np.float64)
    S = 0.5 * (S + S.T)
    w, V = np.linalg.eigh(S)
    w = np.maximum(w, floor)
    # QR of (sqrt(w) V^T) gives an upper-triangular factor of the same product
    _, Rm = np.linalg.qr((V * np.sqrt(w)).T)
    L = Rm.T
    signs = np.sign(np.diag(L))
    signs[signs == 0] = 1.0
    return L * signs


def draw_random_effects(Sigma_b, rng: np.random.Generator, size: int | None = None) -> np.ndarray:
    L = clamped_cholesky(Sigma_b)
    if size is None:
        return L @ rng.standard_normal(3)
    return rng.standard_normal((size, 3)) @ L.T
