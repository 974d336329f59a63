"""Score-function policy gradient over the decision parameters of one patient.

For K posterior draws, each step simulates one path per draw under the
current decision parameters, scores it by its reward, and moves along

    (1/K) sum_k (R_k - mean R) * grad log p(decisions_k | labs_k, x, phi_k, theta)

with a per-coordinate windowed adaptive step. The best iterate (highest mean
reward) is returned.
"""
from __future__ import annotations

import enum
import math
import warnings
import zlib
from dataclasses import dataclass, field

import numpy as np

from .inference import PosteriorDraws
from .joint import ModelVariant
from .longitudinal import clamped_cholesky
from .params import ObservationParams, PolicyParams
from .simulate import RewardSpec, rollout_batch_kernel
from .survival import T_MAX


class Mask(str, enum.Enum):
    """Which decision coordinates the optimizer may move."""

    BOTH = "both"
    VISITS_ONLY = "visits"
    DOSAGE_ONLY = "dosage"


def free_coordinates(mask: Mask, dim: int) -> np.ndarray:
    """Boolean vector over (nu1, nu2, mu, beta_d..., log sigma_d2)."""
    free = np.ones(dim, dtype=bool)
    mask = Mask(mask)
    if mask is Mask.VISITS_ONLY:
        free[3:] = False
    elif mask is Mask.DOSAGE_ONLY:
        free[:3] = False
    return free


@dataclass
class SgdConfig:
    """Settings for :func:`optimize`.

    ``rollouts`` defaults to one rollout per posterior draw; a smaller value
    uses an evenly spaced subset of draws and ``resample=True`` draws them
    with replacement at every step instead. ``interval > 0`` replaces the
    visit process by a fixed schedule, which only makes sense with
    ``Mask.DOSAGE_ONLY``.
    """

    steps: int = 1000
    rollouts: int | None = None
    step_scale: float = 0.01
    window: int = 50
    mask: Mask = Mask.BOTH
    master_seed: int = 0
    resample: bool = False
    scalar_norm: bool = False
    reward: RewardSpec = field(default_factory=RewardSpec)
    interval: float = 0.0
    variant: ModelVariant = ModelVariant.JOINT

    def __post_init__(self):
        self.mask = Mask(self.mask)
        self.variant = ModelVariant(self.variant)
        if self.steps < 1:
            raise ValueError("need at least one step")
        if self.rollouts is not None and self.rollouts < 2:
            raise ValueError("baseline subtraction needs at least two rollouts per step")
        if self.window < 1:
            raise ValueError("window must be at least 1")
        if not self.step_scale > 0:
            raise ValueError("step_scale must be positive")
        if self.interval < 0:
            raise ValueError("interval must be nonnegative")
        if self.interval > 0 and self.mask is not Mask.DOSAGE_ONLY:
            raise ValueError("a fixed visit schedule only supports dosage optimization")


@dataclass
class OptResult:
    thetas: np.ndarray
    mean_rewards: np.ndarray
    grad_norms: np.ndarray
    best_index: int
    n_capped: int = 0

    @property
    def theta_best(self) -> PolicyParams:
        return PolicyParams.from_vector(self.thetas[self.best_index])

    @property
    def best_reward(self) -> float:
        return float(self.mean_rewards[self.best_index])

    @property
    def improvement(self) -> float:
        """max_m G_m - G_1."""
        return float(self.mean_rewards.max() - self.mean_rewards[0])


# --------------------------------------------------------------------------
# posterior arrays for the compiled rollouts


@dataclass
class RolloutDraws:
    """Posterior draws of the observation parameters, stacked for the kernel."""

    xi: np.ndarray
    ba0: np.ndarray
    ba1: np.ndarray
    beta_l: np.ndarray
    sigma_l2: np.ndarray
    L_b: np.ndarray
    beta_s: np.ndarray
    h0: np.ndarray
    omega: np.ndarray
    eta: np.ndarray

    @classmethod
    def from_posterior(cls, post: PosteriorDraws) -> RolloutDraws:
        p = post.params
        f = lambda a: np.ascontiguousarray(a, dtype=np.float64)
        return cls(xi=f(p["xi"]), ba0=f(p["beta_alpha"][:, 0]), ba1=f(p["beta_alpha"][:, 1]),
                   beta_l=f(p["beta_l"]), sigma_l2=f(p["sigma_l2"]),
                   L_b=f(np.array([clamped_cholesky(S) for S in p["Sigma_b"]])),
                   beta_s=f(p["beta_s"]), h0=f(p["h0"]), omega=f(p["omega"]),
                   eta=f(p["eta_tox"]))

    @classmethod
    def from_observation(cls, obs: ObservationParams, n: int = 1) -> RolloutDraws:
        """``n`` identical draws at fixed observation parameters."""
        sh, lo, sv = obs.shared, obs.longitudinal, obs.survival
        rep = lambda v: np.ascontiguousarray(np.repeat(np.asarray(v, dtype=np.float64)[None], n, axis=0))
        return cls(xi=rep(sh.xi), ba0=rep(sh.beta_alpha[0]), ba1=rep(sh.beta_alpha[1]),
                   beta_l=rep(lo.beta_l), sigma_l2=rep(lo.sigma_l2),
                   L_b=rep(clamped_cholesky(lo.Sigma_b)), beta_s=rep(sv.beta_s),
                   h0=rep(sv.h0), omega=rep(sv.omega), eta=rep(sv.eta_tox))

    @property
    def n(self) -> int:
        return self.xi.shape[0]


def patient_key(patient_id) -> int:
    """Stable integer key for a patient id, used in seed derivation."""
    if isinstance(patient_id, (int, np.integer)):
        return int(patient_id)
    return zlib.crc32(str(patient_id).encode("utf-8"))


def step_seeds(master_seed: int, patient_id, m: int, K: int) -> np.ndarray:
    """Per-rollout seeds for step ``m``, derived from (master seed, patient, m)."""
    ss = np.random.SeedSequence([int(master_seed), patient_key(patient_id), int(m)])
    return ss.generate_state(K, dtype=np.uint32).astype(np.int64)


def draw_indices(n_draws: int, K: int, rng: np.random.Generator | None = None) -> np.ndarray:
    """Evenly spaced draw subset (or all draws), or a with-replacement sample if ``rng``."""
    if rng is not None:
        return rng.integers(0, n_draws, K)
    if K > n_draws:
        raise ValueError(f"{K} rollouts requested but only {n_draws} posterior draws; "
                         "enable resampling")
    return np.floor(np.arange(K) * (n_draws / K)).astype(np.int64)


def run_rollouts(theta_vec: np.ndarray, draws: RolloutDraws, idx: np.ndarray, seeds: np.ndarray,
                 x, y0: float, want_grad: bool = True, reward: RewardSpec = RewardSpec(),
                 interval: float = 0.0, variant=ModelVariant.JOINT, t_max: float = T_MAX):
    """Rewards, decision scores, median times, visit counts and cap flags for a batch."""
    x = np.ascontiguousarray(x, dtype=np.float64).reshape(-1)
    theta_vec = np.ascontiguousarray(theta_vec, dtype=np.float64)
    n_beta_d = theta_vec.shape[0] - 4
    if n_beta_d != 2 + x.shape[0] or draws.beta_l.shape[1] != 4 + x.shape[0]:
        raise ValueError("covariate vector does not match the coefficient dimensions")
    return rollout_batch_kernel(
        np.ascontiguousarray(seeds, dtype=np.int64), np.ascontiguousarray(idx, dtype=np.int64),
        theta_vec, n_beta_d, float(interval), want_grad, reward.penalty,
        draws.xi, draws.ba0, draws.ba1, draws.beta_l, draws.sigma_l2, draws.L_b, draws.beta_s,
        draws.h0, draws.omega, draws.eta, x, float(y0), float(t_max),
        ModelVariant(variant) is ModelVariant.SLS)


# --------------------------------------------------------------------------
# gradient and step


def baseline_gradient(rewards, scores) -> tuple[np.ndarray, float]:
    """(1/K) sum_k (R_k - mean R) g_k and mean R."""
    R = np.asarray(rewards, dtype=np.float64)
    G = np.asarray(scores, dtype=np.float64)
    if R.shape[0] < 2:
        raise ValueError("need at least two rollouts")
    # centring on R[0] first makes a constant reward cancel exactly
    c = R - R[0]
    dev = c - c.mean()
    return dev @ G / R.shape[0], float(R[0] + c.mean())


def estimate_gradient(theta: PolicyParams, posterior: PosteriorDraws | RolloutDraws, x, y0: float,
                      rng, rollouts: int | None = None, reward: RewardSpec = RewardSpec(),
                      interval: float = 0.0, variant=ModelVariant.JOINT):
    """Baseline-subtracted policy-gradient estimate and mean reward at ``theta``.

    ``rng`` is a numpy Generator or integer seed; it supplies one seed per
    rollout. Capped paths are dropped, with a warning above 1% of rollouts.
    """
    draws = posterior if isinstance(posterior, RolloutDraws) else RolloutDraws.from_posterior(posterior)
    K = draws.n if rollouts is None else int(rollouts)
    idx = draw_indices(draws.n, K)
    gen = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
    seeds = gen.integers(0, 2 ** 32 - 1, K)
    R, G, _, _, capped = run_rollouts(theta.to_vector(), draws, idx, seeds, x, y0, True,
                                      reward, interval, variant)
    return _masked_gradient(R, G, capped)


def _masked_gradient(R, G, capped):
    keep = ~capped
    n_cap = int(capped.sum())
    if n_cap > 0.01 * R.shape[0]:
        warnings.warn(f"{n_cap} of {R.shape[0]} rollouts hit the time cap and were dropped",
                      RuntimeWarning, stacklevel=3)
    if keep.sum() < 2:
        raise RuntimeError("fewer than two uncapped rollouts")
    return baseline_gradient(R[keep], G[keep])


def adaptive_step(history, current=None, step_scale: float = 0.01, window: int = 50,
                  scalar_norm: bool = False) -> np.ndarray:
    """Per-coordinate step from past gradients.

    ``history`` holds the gradients of earlier steps (oldest first); the last
    ``window`` of them enter the denominator. With no history the current
    gradient is used: step = step_scale / (|g| + 1e-8). ``scalar_norm`` sums
    squared gradient norms instead, giving one step for every coordinate.
    """
    if len(history) == 0:
        if current is None:
            raise ValueError("need a past or current gradient")
        g = np.asarray(current, dtype=np.float64)
        denom = np.linalg.norm(g) if scalar_norm else np.abs(g)
        return step_scale / (denom + 1e-8) * np.ones_like(g)
    H = np.asarray(history[-window:], dtype=np.float64)
    sq = H * H
    if scalar_norm:
        denom = math.sqrt(sq.sum()) * np.ones(H.shape[1])
    else:
        denom = np.sqrt(sq.sum(axis=0))
    return step_scale / np.maximum(denom, 1e-8)


def optimize(theta0: PolicyParams, posterior: PosteriorDraws | RolloutDraws, x, y0: float,
             config: SgdConfig = SgdConfig(), patient_id=0, progress=None) -> OptResult:
    """Run ``config.steps`` ascent steps from ``theta0``.

    Every iterate, including the final one, gets a mean-reward estimate, so
    the result records steps + 1 values. Rollout seeds come from
    (master seed, patient id, step).
    """
    draws = posterior if isinstance(posterior, RolloutDraws) else RolloutDraws.from_posterior(posterior)
    K = draws.n if config.rollouts is None else config.rollouts
    if K < 2:
        raise ValueError("need at least two rollouts per step")
    if not config.resample:
        fixed_idx = draw_indices(draws.n, K)
    theta = theta0.to_vector()
    free = free_coordinates(config.mask, theta.shape[0])
    M = config.steps
    thetas = np.empty((M + 1, theta.shape[0]))
    means = np.empty(M + 1)
    norms = np.empty(M)
    history: list[np.ndarray] = []
    n_capped = 0
    for m in range(M + 1):
        thetas[m] = theta
        seeds = step_seeds(config.master_seed, patient_id, m, K)
        if config.resample:
            ss = np.random.SeedSequence([int(config.master_seed), patient_key(patient_id), m, 1])
            idx = draw_indices(draws.n, K, np.random.default_rng(ss))
        else:
            idx = fixed_idx
        last = m == M
        R, G, _, _, capped = run_rollouts(theta, draws, idx, seeds, x, y0, not last,
                                          config.reward, config.interval, config.variant)
        n_capped += int(capped.sum())
        if last:
            means[m] = float(R[~capped].mean()) if (~capped).any() else float(R.mean())
            break
        g, means[m] = _masked_gradient(R, G, capped)
        g = np.where(free, g, 0.0)
        step = adaptive_step(history, g, config.step_scale, config.window, config.scalar_norm)
        history.append(g)
        norms[m] = float(np.linalg.norm(g))
        theta = theta + np.where(free, step * g, 0.0)
        if progress is not None:
            progress(m, means[m], theta)
    best = int(np.argmax(means))
    return OptResult(thetas=thetas, mean_rewards=means, grad_norms=norms, best_index=best,
                     n_capped=n_capped)


def evaluate_policy(theta: PolicyParams, posterior: PosteriorDraws | RolloutDraws, x, y0: float,
                    reps: int, seed: int, interval: float = 0.0, patient_id=0,
                    reward: RewardSpec = RewardSpec(), variant=ModelVariant.JOINT):
    """``reps`` single-path rollouts, each under a posterior draw picked at random.

    Returns (rewards, median times, visit counts).
    """
    draws = posterior if isinstance(posterior, RolloutDraws) else RolloutDraws.from_posterior(posterior)
    ss = np.random.SeedSequence([int(seed), patient_key(patient_id), 2 ** 31 - 1])
    seed_seq, draw_seq = ss.spawn(2)
    seeds = seed_seq.generate_state(reps, dtype=np.uint32).astype(np.int64)
    idx = np.random.default_rng(draw_seq).integers(0, draws.n, reps)
    R, _, med, visits, _ = run_rollouts(theta.to_vector(), draws, idx, seeds, x, y0, False,
                                        reward, interval, variant)
    return R, med, visits
