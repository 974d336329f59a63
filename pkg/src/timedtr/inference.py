"""Metropolis-within-Gibbs sampler for the joint decision/lab/survival model.

One sweep updates, in order:

1. dosage coefficients and noise variance (exact Gibbs),
2. lab fixed effects (conjugate proposal accepted on the survival factor)
   and lab noise variance (exact Gibbs),
3. per-patient random effects (conjugate proposal, survival factor),
4. the random-effects covariance (inverse-Wishart Gibbs, flat prior),
5. the survival block (adaptive random walk),
6. the visit-timing block (adaptive random walk).

Time columns are rescaled to thousands of days inside the conjugate updates;
the rescaling is an exact reparameterization, the stored parameters stay in
days. Random-walk proposal covariances and scales adapt during burn-in only.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize
from scipy.linalg import cho_solve, solve_triangular

from .joint import ModelVariant, PackedCohort, PatientRecord
from .longitudinal import LOG_2PI
from .mtpp import cohort_timing_loglik
from .params import (LongitudinalParams, ObservationParams, PolicyParams, SharedVisitParams,
                     SurvivalParams)
from .survival import cohort_survival_loglik

TIME_UNIT = 1000.0
SIGMA_B_FLOOR = 1e-12
SURVIVAL_NAMES = ["beta_s1", "beta_s2", "beta_s3", "beta_s4", "h0", "log_omega", "log_eta_tox"]
VISIT_NAMES = ["mu", "nu1", "nu2", "log_xi", "beta_alpha0", "beta_alpha1"]


@dataclass
class Hyperparameters:
    """Prior settings.

    Vector priors accept a scalar mean or variance, which is broadcast to
    ``value * ones`` or ``value * I``. Gamma priors use shape/rate and
    inverse-gamma priors use shape/scale.
    """

    beta_d0: float | np.ndarray = 0.0
    Sigma_beta_d: float | np.ndarray = 100.0 ** 2
    pi_d1: float = 0.01
    pi_d2: float = 0.01
    beta_l0: float | np.ndarray = 0.0
    Sigma_beta_l: float | np.ndarray = 100.0 ** 2
    pi_l1: float = 0.01
    pi_l2: float = 0.01
    beta_s0: float = 0.0
    sigma_s0_2: float = 100.0 ** 2
    pi_s1: float = 0.01
    pi_s2: float = 0.01
    pi_s3: float = 0.01
    pi_s4: float = 0.01
    beta_v0: float = 0.0
    sigma_v0_2: float = 100.0 ** 2
    beta_alpha0: float | np.ndarray = 0.0
    Sigma_beta_alpha: float | np.ndarray = 100.0 ** 2
    pi_v1: float = 400.0
    pi_v2: float = 200.0

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        for name in ("pi_d1", "pi_d2", "pi_l1", "pi_l2", "pi_s1", "pi_s2", "pi_s3", "pi_s4",
                     "sigma_s0_2", "sigma_v0_2", "pi_v1", "pi_v2"):
            if not getattr(self, name) > 0:
                raise ValueError(f"hyperparameter {name} must be positive")
        for name in ("Sigma_beta_d", "Sigma_beta_l", "Sigma_beta_alpha"):
            S = np.asarray(getattr(self, name), dtype=np.float64)
            if S.ndim == 0:
                if not S > 0:
                    raise ValueError(f"hyperparameter {name} must be positive")
            elif np.linalg.eigvalsh(0.5 * (S + S.T)).min() <= 0:
                raise ValueError(f"hyperparameter {name} must be positive definite")

    def gaussian(self, name: str, dim: int) -> tuple[np.ndarray, np.ndarray]:
        """(mean, covariance) of a vector prior, broadcast to ``dim``."""
        mean_key, cov_key = {"beta_d": ("beta_d0", "Sigma_beta_d"),
                             "beta_l": ("beta_l0", "Sigma_beta_l"),
                             "beta_alpha": ("beta_alpha0", "Sigma_beta_alpha")}[name]
        m = np.asarray(getattr(self, mean_key), dtype=np.float64)
        m = np.full(dim, float(m)) if m.ndim == 0 else m.reshape(-1)
        S = np.asarray(getattr(self, cov_key), dtype=np.float64)
        S = float(S) * np.eye(dim) if S.ndim == 0 else S
        if m.shape != (dim,) or S.shape != (dim, dim):
            raise ValueError(f"prior for {name} must have dimension {dim}")
        return m, S

    def to_dict(self) -> dict:
        out = {}
        for k, v in self.__dict__.items():
            out[k] = v.tolist() if isinstance(v, np.ndarray) else v
        return out

    @classmethod
    def from_dict(cls, d: dict) -> Hyperparameters:
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown hyperparameters: {sorted(unknown)}")
        kw = {k: (np.asarray(v, dtype=np.float64) if isinstance(v, list) else v)
              for k, v in d.items()}
        return cls(**kw)


# --------------------------------------------------------------------------
# data prepared once per chain


class ChainData:
    """Design matrices and sufficient statistics that do not change along a chain."""

    def __init__(self, cohort: PackedCohort | list[PatientRecord]):
        if not isinstance(cohort, PackedCohort):
            cohort = PackedCohort.from_records(list(cohort))
        self.cohort = cohort
        c = cohort
        self.N = c.n_patients
        self.P = c.n_covariates
        pid_all = c.patient_index()
        # dosage rows: every visit, design (1, y, x)
        self.W = np.column_stack([np.ones_like(c.y), c.y, c.X[pid_all]])
        self.dose = c.d
        self.dose_pid = pid_all
        # lab rows: follow-up visits, conditioned on the previous dose
        mask = c.followup_mask()
        prev = c.previous_dose()[mask]
        t = c.t[mask]
        self.pid = pid_all[mask]
        self.y = c.y[mask]
        n = self.y.shape[0]
        one = np.ones(n)
        ts = t / TIME_UNIT
        # scaled designs; unscaled coefficient = D^-1 scaled coefficient
        self.Z = np.column_stack([one, prev, c.X[self.pid], ts, ts * ts])
        self.R = np.column_stack([one, prev, ts])
        self.D_l = np.concatenate([np.ones(2 + self.P), [TIME_UNIT, TIME_UNIT ** 2]])
        self.D_b = np.array([1.0, 1.0, TIME_UNIT])
        self.ZtZ = self.Z.T @ self.Z
        self.RtR = np.zeros((self.N, 3, 3))
        for a in range(3):
            for b in range(3):
                self.RtR[:, a, b] = np.bincount(self.pid, self.R[:, a] * self.R[:, b],
                                                minlength=self.N)
        self.WtW = self.W.T @ self.W

    def rowsum_RB(self, B_scaled: np.ndarray) -> np.ndarray:
        return np.einsum("ij,ij->i", self.R, B_scaled[self.pid])

    def per_patient(self, values: np.ndarray, pid: np.ndarray) -> np.ndarray:
        return np.bincount(pid, values, minlength=self.N)


# --------------------------------------------------------------------------
# chain state


@dataclass
class AdaptiveProposal:
    """Gaussian random-walk proposal with burn-in adaptation.

    The covariance tracks the empirical covariance of the burn-in path and a
    Robbins-Monro step tunes the log scale toward ``target`` acceptance.
    """

    cov: np.ndarray
    log_scale: float
    target: float = 0.3
    adapting: bool = True
    n_prop: int = 0
    n_acc: int = 0
    _n: int = 0
    _mean: np.ndarray | None = None
    _m2: np.ndarray | None = None

    @property
    def dim(self) -> int:
        return self.cov.shape[0]

    def chol(self) -> np.ndarray:
        w, V = np.linalg.eigh(0.5 * (self.cov + self.cov.T))
        return V * np.sqrt(np.maximum(w, 0.0))

    def propose(self, x: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        scale = math.exp(self.log_scale) if np.isfinite(self.log_scale) else 0.0
        return x + scale * (self.chol() @ rng.standard_normal(self.dim))

    def record(self, accept_prob: float, accepted: bool, x: np.ndarray, it: int) -> None:
        self.n_prop += 1
        self.n_acc += int(accepted)
        if not self.adapting:
            return
        if np.isfinite(self.log_scale):
            self.log_scale += (accept_prob - self.target) / (it + 1.0) ** 0.6
        self._n += 1
        if self._mean is None:
            self._mean = x.copy()
            self._m2 = np.zeros((self.dim, self.dim))
        else:
            delta = x - self._mean
            self._mean += delta / self._n
            self._m2 += np.outer(delta, x - self._mean)
        if self._n >= 4 * self.dim and self._n % 50 == 0:
            emp = self._m2 / (self._n - 1)
            self.cov = emp + 1e-10 * np.diag(np.maximum(np.diag(emp), 1e-12))

    def restart_window(self) -> None:
        self._n = 0
        self._mean = None
        self._m2 = None

    @property
    def rate(self) -> float:
        return self.n_acc / self.n_prop if self.n_prop else float("nan")


@dataclass
class ChainState:
    """Current values of every parameter, cached likelihood pieces and tuning."""

    beta_d: np.ndarray
    sigma_d2: float
    beta_l: np.ndarray
    sigma_l2: float
    B: np.ndarray
    Sigma_b: np.ndarray
    beta_s: np.ndarray
    h0: float
    omega: float
    eta_tox: float
    nu1: float
    nu2: float
    mu: float
    xi: float
    beta_alpha: np.ndarray
    rng: np.random.Generator
    variant: ModelVariant = ModelVariant.JOINT
    iteration: int = 0
    surv_ll: np.ndarray | None = None
    timing_ll: np.ndarray | None = None
    proposals: dict = field(default_factory=dict)
    block_lt: dict = field(default_factory=dict)
    counts: dict = field(default_factory=lambda: {"beta_l": [0, 0], "b": [0, 0]})

    @property
    def sls(self) -> bool:
        return self.variant is ModelVariant.SLS

    def survival_vector(self) -> np.ndarray:
        return np.concatenate([self.beta_s, [self.h0, math.log(self.omega),
                                             math.log(self.eta_tox)]])

    def set_survival_vector(self, v: np.ndarray) -> None:
        self.beta_s = v[:4].copy()
        self.h0 = float(v[4])
        self.omega = math.exp(v[5])
        self.eta_tox = math.exp(v[6])

    def visit_vector(self) -> np.ndarray:
        return np.array([self.mu, self.nu1, self.nu2, math.log(self.xi),
                         self.beta_alpha[0], self.beta_alpha[1]])

    def set_visit_vector(self, v: np.ndarray) -> None:
        self.mu, self.nu1, self.nu2 = float(v[0]), float(v[1]), float(v[2])
        self.xi = math.exp(v[3])
        self.beta_alpha = v[4:6].copy()

    def policy(self) -> PolicyParams:
        return PolicyParams(self.nu1, self.nu2, self.mu, self.beta_d, self.sigma_d2)

    def observation(self) -> ObservationParams:
        return ObservationParams(
            SharedVisitParams(self.xi, self.beta_alpha),
            LongitudinalParams(self.beta_l, self.sigma_l2, self.Sigma_b),
            SurvivalParams(self.beta_s, self.h0, self.omega, self.eta_tox))


def _surv_ll(data: ChainData, s: ChainState, beta_l=None, B=None, sv=None, vv=None):
    """Per-patient survival log-likelihoods with optional overrides."""
    c = data.cohort
    beta_l = s.beta_l if beta_l is None else beta_l
    B = s.B if B is None else B
    sv = s.survival_vector() if sv is None else sv
    vv = s.visit_vector() if vv is None else vv
    return cohort_survival_loglik(c.ptr, c.t, c.d, c.y, c.X, c.T, c.delta, beta_l, B,
                                  sv[:4], sv[4], math.exp(sv[5]), math.exp(sv[6]),
                                  math.exp(vv[3]), vv[4], vv[5], s.sls)


def _timing_ll(data: ChainData, vv: np.ndarray) -> np.ndarray:
    c = data.cohort
    return cohort_timing_loglik(c.ptr, c.t, c.y, c.T, vv[1], vv[2], vv[0],
                                math.exp(vv[3]), vv[4], vv[5])


def _draw_gaussian(prec: np.ndarray, rhs: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Draw from N(prec^-1 rhs, prec^-1)."""
    try:
        L = np.linalg.cholesky(prec)
    except np.linalg.LinAlgError as exc:
        raise np.linalg.LinAlgError(
            f"posterior precision is not positive definite (eigenvalues "
            f"{np.linalg.eigvalsh(prec)})") from exc
    mean = cho_solve((L, True), rhs)
    return mean + solve_triangular(L.T, rng.standard_normal(rhs.shape[0]), lower=False)


def _inv_gamma(rng: np.random.Generator, shape: float, scale: float) -> float:
    return scale / rng.gamma(shape)


# --------------------------------------------------------------------------
# sweep updates


def gibbs_update_dosage(state: ChainState, data: ChainData, hyper: Hyperparameters) -> ChainState:
    """Conjugate draws of beta_d then sigma_d2 from their full conditionals."""
    m0, S0 = hyper.gaussian("beta_d", data.W.shape[1])
    prec0 = np.linalg.inv(S0)
    prec = data.WtW / state.sigma_d2 + prec0
    rhs = data.W.T @ data.dose / state.sigma_d2 + prec0 @ m0
    state.beta_d = _draw_gaussian(prec, rhs, state.rng)
    r = data.dose - data.W @ state.beta_d
    state.sigma_d2 = _inv_gamma(state.rng, hyper.pi_d1 + 0.5 * r.shape[0],
                                hyper.pi_d2 + 0.5 * r @ r)
    return state


def mh_update_longitudinal(state: ChainState, data: ChainData,
                           hyper: Hyperparameters) -> ChainState:
    """beta_l from the lab-only conditional, accepted on the survival ratio;
    then sigma_l2 from its inverse-gamma conditional."""
    D = data.D_l
    m0, S0 = hyper.gaussian("beta_l", D.shape[0])
    prec0 = np.linalg.inv(S0 * np.outer(D, D))
    Bs = state.B * data.D_b
    resp = data.y - data.rowsum_RB(Bs)
    prec = data.ZtZ / state.sigma_l2 + prec0
    rhs = data.Z.T @ resp / state.sigma_l2 + prec0 @ (D * m0)
    prop = _draw_gaussian(prec, rhs, state.rng) / D
    cnt = state.counts["beta_l"]
    cnt[0] += 1
    if state.sls:
        state.beta_l = prop
        cnt[1] += 1
    else:
        new_ll = _surv_ll(data, state, beta_l=prop)
        log_ratio = new_ll.sum() - state.surv_ll.sum()
        u = state.rng.random()
        if np.isfinite(log_ratio) and math.log(u) < log_ratio:
            state.beta_l = prop
            state.surv_ll = new_ll
            cnt[1] += 1
    r = resp - data.Z @ (state.beta_l * D)
    state.sigma_l2 = _inv_gamma(state.rng, hyper.pi_l1 + 0.5 * r.shape[0],
                                hyper.pi_l2 + 0.5 * r @ r)
    return state


def update_random_effects(state: ChainState, data: ChainData) -> ChainState:
    """Per-patient conjugate proposals for b_i, each accepted on its own survival ratio."""
    N = data.N
    Db = data.D_b
    Sb = state.Sigma_b * np.outer(Db, Db)
    w, V = np.linalg.eigh(0.5 * (Sb + Sb.T))
    w = np.maximum(w, SIGMA_B_FLOOR)
    prior_prec = (V / w) @ V.T
    resid = data.y - data.Z @ (state.beta_l * data.D_l)
    rhs = np.column_stack([data.per_patient(data.R[:, a] * resid, data.pid)
                           for a in range(3)]) / state.sigma_l2
    prec = data.RtR / state.sigma_l2 + prior_prec
    L = np.linalg.cholesky(prec)
    mean = np.linalg.solve(prec, rhs[:, :, None])[:, :, 0]
    z = state.rng.standard_normal((N, 3))
    # L^T e = z  gives  e ~ N(0, prec^-1)
    LT = np.swapaxes(L, 1, 2)
    eps = np.linalg.solve(LT, z[:, :, None])[:, :, 0]
    prop = (mean + eps) / Db
    u = state.rng.random(N)
    cnt = state.counts["b"]
    cnt[0] += N
    if state.sls:
        state.B = prop
        cnt[1] += N
        return state
    new_ll = _surv_ll(data, state, B=prop)
    with np.errstate(invalid="ignore"):
        acc = np.log(u) < (new_ll - state.surv_ll)
    acc &= np.isfinite(new_ll)
    state.B = np.where(acc[:, None], prop, state.B)
    state.surv_ll = np.where(acc, new_ll, state.surv_ll)
    cnt[1] += int(acc.sum())
    return state


def sample_inverse_wishart(df: float, scatter: np.ndarray, rng: np.random.Generator,
                           floor: float = SIGMA_B_FLOOR) -> np.ndarray:
    """InverseWishart(df, scatter) by the Bartlett decomposition.

    Eigenvalues of the scatter matrix are clamped at ``floor`` first.
    """
    p = scatter.shape[0]
    if not df > p - 1:
        raise ValueError(f"need df > {p - 1}, got {df}")
    w, V = np.linalg.eigh(0.5 * (scatter + scatter.T))
    w = np.maximum(w, floor)
    # W ~ Wishart(df, S^-1) with S^-1 = C C^T, C = V diag(w^-1/2)
    C = V / np.sqrt(w)
    A = np.zeros((p, p))
    for i in range(p):
        A[i, i] = math.sqrt(rng.chisquare(df - i))
        A[i, :i] = rng.standard_normal(i)
    CA = C @ A
    # Sigma = W^-1 = (CA)^-T (CA)^-1
    inv = np.linalg.inv(CA)
    S = inv.T @ inv
    return 0.5 * (S + S.T)


def update_sigma_b(state: ChainState) -> ChainState:
    """Sigma_b from its flat-prior conditional InverseWishart(I - p - 1, sum b b^T)."""
    N = state.B.shape[0]
    p = 3
    if not N > p + 1 + (p - 1):
        raise ValueError(f"need more than {2 * p} patients to update Sigma_b")
    Db = np.array([1.0, 1.0, TIME_UNIT])
    Bs = state.B * Db
    S = sample_inverse_wishart(N - p - 1, Bs.T @ Bs, state.rng)
    state.Sigma_b = S / np.outer(Db, Db)
    return state


def _survival_logprior(v: np.ndarray, hyper: Hyperparameters) -> float:
    lp = -0.5 * np.sum((v[:5] - hyper.beta_s0) ** 2) / hyper.sigma_s0_2
    # gamma priors on eta_tox and omega, walked on the log scale (Jacobian included)
    lp += hyper.pi_s1 * v[6] - hyper.pi_s2 * math.exp(v[6])
    lp += hyper.pi_s3 * v[5] - hyper.pi_s4 * math.exp(v[5])
    return lp


def _visit_logprior(v: np.ndarray, hyper: Hyperparameters) -> float:
    lp = -0.5 * np.sum((v[:3] - hyper.beta_v0) ** 2) / hyper.sigma_v0_2
    lp += hyper.pi_v1 * v[3] - hyper.pi_v2 * math.exp(v[3])
    m, S = hyper.gaussian("beta_alpha", 2)
    r = v[4:6] - m
    lp += -0.5 * r @ np.linalg.solve(S, r)
    return lp


def _mh_block(state: ChainState, name: str, current: np.ndarray, log_target, it: int):
    prop = state.proposals[name]
    cand = prop.propose(current, state.rng)
    lt_new, extra = log_target(cand)
    lt_old = state.block_lt[name]
    log_ratio = lt_new - lt_old
    u = state.rng.random()
    accept_prob = math.exp(min(0.0, log_ratio)) if np.isfinite(log_ratio) else 0.0
    accepted = bool(np.isfinite(lt_new) and math.log(u) < log_ratio)
    if accepted:
        current = cand
        state.block_lt[name] = lt_new
    prop.record(accept_prob, accepted, current, it)
    return accepted, current, extra


def mh_update_survival(state: ChainState, data: ChainData, hyper: Hyperparameters) -> ChainState:
    """Random-walk step on (beta_s, h0, log omega, log eta_tox)."""
    def target(v):
        ll = _surv_ll(data, state, sv=v)
        return ll.sum() + _survival_logprior(v, hyper), ll

    cur = state.survival_vector()
    state.block_lt["survival"] = state.surv_ll.sum() + _survival_logprior(cur, hyper)
    accepted, cur, ll = _mh_block(state, "survival", cur, target, state.iteration)
    if accepted:
        state.set_survival_vector(cur)
        state.surv_ll = ll
    return state


def mh_update_visit(state: ChainState, data: ChainData, hyper: Hyperparameters) -> ChainState:
    """Random-walk step on (mu, nu1, nu2, log xi, beta_alpha).

    xi and beta_alpha also enter the hazard through the visit magnitude.
    """
    def target(v):
        tl = _timing_ll(data, v)
        sl = _surv_ll(data, state, vv=v)
        return tl.sum() + sl.sum() + _visit_logprior(v, hyper), (tl, sl)

    cur = state.visit_vector()
    state.block_lt["visit"] = (state.timing_ll.sum() + state.surv_ll.sum()
                                + _visit_logprior(cur, hyper))
    accepted, cur, extra = _mh_block(state, "visit", cur, target, state.iteration)
    if accepted:
        state.set_visit_vector(cur)
        state.timing_ll, state.surv_ll = extra
    return state


# --------------------------------------------------------------------------
# pointwise likelihood and posterior container


def pointwise_loglik(state: ChainState, data: ChainData) -> np.ndarray:
    """Whole-patient joint log-likelihood (decisions + labs + survival) at the current state."""
    r = data.dose - data.W @ state.beta_d
    dose = data.per_patient(-0.5 * (LOG_2PI + math.log(state.sigma_d2))
                            - 0.5 * r * r / state.sigma_d2, data.dose_pid)
    e = data.y - data.Z @ (state.beta_l * data.D_l) - data.rowsum_RB(state.B * data.D_b)
    lab = data.per_patient(-0.5 * (LOG_2PI + math.log(state.sigma_l2))
                           - 0.5 * e * e / state.sigma_l2, data.pid)
    return dose + state.timing_ll + lab + state.surv_ll


@dataclass
class PosteriorDraws:
    """Thinned draws, the K x N pointwise log-likelihood matrix and sampler diagnostics."""

    params: dict
    pointwise: np.ndarray
    acceptance: dict
    ids: list
    variant: ModelVariant = ModelVariant.JOINT
    covariate_names: list = field(default_factory=list)
    config: dict = field(default_factory=dict)

    @property
    def n_draws(self) -> int:
        return int(self.params["h0"].shape[0])

    def policy(self, k: int) -> PolicyParams:
        p = self.params
        return PolicyParams(float(p["nu1"][k]), float(p["nu2"][k]), float(p["mu"][k]),
                            p["beta_d"][k], float(p["sigma_d2"][k]))

    def observation(self, k: int) -> ObservationParams:
        p = self.params
        return ObservationParams(
            SharedVisitParams(float(p["xi"][k]), p["beta_alpha"][k]),
            LongitudinalParams(p["beta_l"][k], float(p["sigma_l2"][k]), p["Sigma_b"][k]),
            SurvivalParams(p["beta_s"][k], float(p["h0"][k]), float(p["omega"][k]),
                           float(p["eta_tox"][k])))

    def policy_mean(self) -> PolicyParams:
        """Posterior mean of the decision parameters (sigma_d2 averaged on its own scale)."""
        p = self.params
        return PolicyParams(float(p["nu1"].mean()), float(p["nu2"].mean()),
                            float(p["mu"].mean()), p["beta_d"].mean(axis=0),
                            float(p["sigma_d2"].mean()))

    def summary(self, name: str, level: float = 0.95) -> dict:
        """Mean and equal-tailed credible interval for each coordinate of ``name``."""
        a = np.asarray(self.params[name], dtype=np.float64).reshape(self.n_draws, -1)
        q = (1.0 - level) / 2.0
        return {"mean": a.mean(axis=0), "lower": np.quantile(a, q, axis=0),
                "upper": np.quantile(a, 1.0 - q, axis=0)}


PARAM_ORDER = ["nu1", "nu2", "mu", "beta_d", "sigma_d2", "xi", "beta_alpha", "beta_l",
               "sigma_l2", "Sigma_b", "beta_s", "h0", "omega", "eta_tox"]


def _snapshot(s: ChainState) -> dict:
    return {"nu1": s.nu1, "nu2": s.nu2, "mu": s.mu, "beta_d": s.beta_d.copy(),
            "sigma_d2": s.sigma_d2, "xi": s.xi, "beta_alpha": s.beta_alpha.copy(),
            "beta_l": s.beta_l.copy(), "sigma_l2": s.sigma_l2, "Sigma_b": s.Sigma_b.copy(),
            "beta_s": s.beta_s.copy(), "h0": s.h0, "omega": s.omega, "eta_tox": s.eta_tox}


# --------------------------------------------------------------------------
# initialization


def _numeric_hessian(f, x: np.ndarray, h: float = 1e-3) -> np.ndarray:
    n = x.shape[0]
    H = np.zeros((n, n))
    f0 = f(x)
    for i in range(n):
        ei = np.zeros(n)
        ei[i] = h
        H[i, i] = (f(x + ei) - 2 * f0 + f(x - ei)) / h ** 2
        for j in range(i):
            ej = np.zeros(n)
            ej[j] = h
            H[i, j] = H[j, i] = (f(x + ei + ej) - f(x + ei - ej) - f(x - ei + ej)
                                 + f(x - ei - ej)) / (4 * h * h)
    return H


def _proposal_from_mode(neg_logpost, mode: np.ndarray, target: float) -> AdaptiveProposal:
    H = _numeric_hessian(neg_logpost, mode)
    w, V = np.linalg.eigh(0.5 * (H + H.T))
    w = np.maximum(w, 1e-6 * max(w.max(), 1e-6))
    cov = (V / w) @ V.T
    d = mode.shape[0]
    return AdaptiveProposal(cov=cov, log_scale=math.log(2.38 / math.sqrt(d)), target=target)


def initial_state(data: ChainData, hyper: Hyperparameters, rng: np.random.Generator,
                  variant=ModelVariant.JOINT, warmup: int = 100,
                  target: float = 0.3) -> ChainState:
    """Starting point from least squares, a short lab-only Gibbs warm-up and
    posterior modes of the timing and survival blocks."""
    c = data.cohort
    beta_d, *_ = np.linalg.lstsq(data.W, data.dose, rcond=None)
    rd = data.dose - data.W @ beta_d
    bl_s, *_ = np.linalg.lstsq(data.Z, data.y, rcond=None)
    rl = data.y - data.Z @ bl_s
    state = ChainState(
        beta_d=beta_d, sigma_d2=float(rd @ rd / max(rd.shape[0], 1)),
        beta_l=bl_s / data.D_l, sigma_l2=float(rl @ rl / max(rl.shape[0], 1)),
        B=np.zeros((data.N, 3)),
        Sigma_b=np.diag([0.1, 0.1, 0.1 / TIME_UNIT ** 2]),
        beta_s=np.zeros(4), h0=0.0, omega=1.0, eta_tox=1.0,
        nu1=0.0, nu2=0.0, mu=0.0, xi=1.0, beta_alpha=np.zeros(2),
        rng=rng, variant=ModelVariant(variant))
    # lab-only warm-up (exact Gibbs because the survival factor is skipped)
    sls_variant = state.variant
    state.variant = ModelVariant.SLS
    for _ in range(warmup):
        mh_update_longitudinal(state, data, hyper)
        update_random_effects(state, data)
        update_sigma_b(state)
    state.variant = sls_variant
    state.counts = {"beta_l": [0, 0], "b": [0, 0]}

    # visit-timing mode
    gaps = np.diff(c.t)[data.cohort.followup_mask()[1:]]
    gaps = gaps[gaps > 0] if gaps.size else np.array([30.0])
    med = float(np.median(gaps))
    v0 = np.array([math.log(1.0 / (10.0 * gaps.mean())), math.log(med), 1.0,
                   math.log(hyper.pi_v1 / hyper.pi_v2), 0.0, 0.0])

    def neg_visit(v):
        val = _timing_ll(data, v).sum() + _visit_logprior(v, hyper)
        return -val if np.isfinite(val) else 1e300

    res = optimize.minimize(neg_visit, v0, method="Nelder-Mead",
                            options={"maxiter": 4000, "xatol": 1e-6, "fatol": 1e-6})
    res = optimize.minimize(neg_visit, res.x, method="BFGS")
    state.set_visit_vector(res.x)
    state.proposals["visit"] = _proposal_from_mode(neg_visit, res.x, target)

    # survival mode given the lab and visit parts
    T = c.T
    ev = max(int(c.delta.sum()), 1)
    s0 = np.array([0.0, 0.0, 0.0, 0.0, math.log(T.sum() / ev), 0.0, math.log(med)])

    def neg_surv(v):
        val = _surv_ll(data, state, sv=v).sum() + _survival_logprior(v, hyper)
        return -val if np.isfinite(val) else 1e300

    # the toxicity scale is held at the typical gap first, then freed
    eta0 = s0[6]
    res = optimize.minimize(lambda w: neg_surv(np.append(w, eta0)), s0[:6], method="BFGS")
    res = optimize.minimize(neg_surv, np.append(res.x, eta0), method="BFGS")
    state.set_survival_vector(res.x)
    state.proposals["survival"] = _proposal_from_mode(neg_surv, res.x, target)

    state.surv_ll = _surv_ll(data, state)
    state.timing_ll = _timing_ll(data, state.visit_vector())
    return state


# --------------------------------------------------------------------------
# driver


def _check_finite(state: ChainState) -> None:
    if not (np.all(np.isfinite(state.surv_ll)) and np.all(np.isfinite(state.timing_ll))):
        raise FloatingPointError(f"non-finite log-likelihood at iteration {state.iteration}")


def run_chain(data, hyper: Hyperparameters | None = None, iters: int = 6000,
              burnin: int = 1000, thin: int = 10, seed: int = 0,
              variant=ModelVariant.JOINT, progress=None) -> PosteriorDraws:
    """Run one chain and keep every ``thin``-th post-burn-in state.

    ``data`` is a list of patient records or a packed cohort. ``progress`` is
    an optional callable receiving (iteration, state).
    """
    if not (isinstance(iters, (int, np.integer)) and isinstance(burnin, (int, np.integer))
            and isinstance(thin, (int, np.integer))):
        raise ValueError("iters, burnin and thin must be integers")
    if burnin < 0 or iters <= burnin:
        raise ValueError(f"need 0 <= burnin < iters, got burnin={burnin}, iters={iters}")
    if thin < 1 or (iters - burnin) % thin:
        raise ValueError("thin must be positive and divide iters - burnin")
    hyper = hyper or Hyperparameters()
    if not isinstance(data, ChainData):
        data = ChainData(data)
    if data.N <= 6:
        raise ValueError("need more than six patients")
    variant = ModelVariant(variant)
    rng = np.random.default_rng(seed)
    state = initial_state(data, hyper, rng, variant)

    K = (iters - burnin) // thin
    draws = []
    pointwise = np.empty((K, data.N))
    k = 0
    for it in range(iters):
        state.iteration = it
        if it == burnin:
            for p in state.proposals.values():
                p.adapting = False
        elif it == burnin // 2:
            # drop the transient from the covariance estimate
            for p in state.proposals.values():
                p.restart_window()
        gibbs_update_dosage(state, data, hyper)
        mh_update_longitudinal(state, data, hyper)
        update_random_effects(state, data)
        update_sigma_b(state)
        mh_update_survival(state, data, hyper)
        mh_update_visit(state, data, hyper)
        _check_finite(state)
        if it >= burnin and (it - burnin + 1) % thin == 0:
            draws.append(_snapshot(state))
            pointwise[k] = pointwise_loglik(state, data)
            k += 1
        if progress is not None:
            progress(it, state)

    params = {name: np.array([d[name] for d in draws]) for name in PARAM_ORDER}
    acceptance = {
        "beta_l": state.counts["beta_l"][1] / max(state.counts["beta_l"][0], 1),
        "b": state.counts["b"][1] / max(state.counts["b"][0], 1),
        "survival": state.proposals["survival"].rate,
        "visit": state.proposals["visit"].rate,
    }
    return PosteriorDraws(params=params, pointwise=pointwise, acceptance=acceptance,
                          ids=list(data.cohort.ids), variant=variant,
                          config={"iters": iters, "burnin": burnin, "thin": thin,
                                  "seed": int(seed), "hyper": hyper.to_dict()})
