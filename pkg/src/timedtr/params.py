"""Parameter containers shared across the model components.

Policy parameters control the decision process (visit timing and dosage);
observation parameters are everything the policy optimizer treats as fixed
by the posterior.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np


def _vec(v) -> np.ndarray:
    return np.asarray(v, dtype=np.float64).reshape(-1).copy()


@dataclass
class PolicyParams:
    """Decision parameters (nu1, nu2, mu, beta_d, sigma_d2).

    ``nu1`` is the log peak time of the visit intensity bump, ``nu2`` the log
    shape offset, ``mu`` the log baseline visit rate per day. ``beta_d`` has
    length 2 + P (intercept, current lab, baseline covariates).
    """

    nu1: float
    nu2: float
    mu: float
    beta_d: np.ndarray
    sigma_d2: float

    def __post_init__(self):
        self.beta_d = _vec(self.beta_d)
        if not self.sigma_d2 > 0:
            raise ValueError(f"sigma_d2 must be positive, got {self.sigma_d2}")

    @property
    def kappa(self) -> float:
        return math.exp(self.nu2) + 1.0

    @property
    def gamma(self) -> float:
        return math.exp(self.nu2 - self.nu1)

    @property
    def peak_time(self) -> float:
        return math.exp(self.nu1)

    def to_vector(self) -> np.ndarray:
        """Unconstrained vector (nu1, nu2, mu, beta_d..., log sigma_d2)."""
        return np.concatenate([[self.nu1, self.nu2, self.mu], self.beta_d,
                               [math.log(self.sigma_d2)]])

    @classmethod
    def from_vector(cls, v) -> PolicyParams:
        v = np.asarray(v, dtype=np.float64)
        return cls(nu1=float(v[0]), nu2=float(v[1]), mu=float(v[2]),
                   beta_d=v[3:-1], sigma_d2=float(math.exp(v[-1])))

    def coordinate_names(self) -> list[str]:
        return (["nu1", "nu2", "mu"] + [f"beta_d[{i}]" for i in range(len(self.beta_d))]
                + ["log_sigma_d2"])


@dataclass
class SharedVisitParams:
    """Peak-magnitude ceiling xi and logistic coefficients beta_alpha on (1, y)."""

    xi: float
    beta_alpha: np.ndarray

    def __post_init__(self):
        self.beta_alpha = _vec(self.beta_alpha)
        if self.beta_alpha.shape != (2,):
            raise ValueError("beta_alpha must have length 2")
        if not self.xi > 0:
            raise ValueError(f"xi must be positive, got {self.xi}")


@dataclass
class LongitudinalParams:
    """Mixed-model parameters: fixed effects on (1, d, x, t, t^2), noise, RE covariance."""

    beta_l: np.ndarray
    sigma_l2: float
    Sigma_b: np.ndarray

    def __post_init__(self):
        self.beta_l = _vec(self.beta_l)
        self.Sigma_b = np.asarray(self.Sigma_b, dtype=np.float64).reshape(3, 3).copy()
        if not self.sigma_l2 > 0:
            raise ValueError(f"sigma_l2 must be positive, got {self.sigma_l2}")
        if not np.allclose(self.Sigma_b, self.Sigma_b.T):
            raise ValueError("Sigma_b must be symmetric")
        if np.linalg.eigvalsh(self.Sigma_b).min() < -1e-10 * max(1.0, np.abs(self.Sigma_b).max()):
            raise ValueError("Sigma_b must be positive semidefinite")


@dataclass
class SurvivalParams:
    """Weibull proportional-hazards parameters.

    ``beta_s`` holds the effects of (latent lab, current dose, toxicity,
    visit magnitude); the linear predictor enters the hazard with a minus
    sign, so positive coefficients are protective.
    """

    beta_s: np.ndarray
    h0: float
    omega: float
    eta_tox: float

    def __post_init__(self):
        self.beta_s = _vec(self.beta_s)
        if self.beta_s.shape != (4,):
            raise ValueError("beta_s must have length 4")
        if not self.omega > 0:
            raise ValueError(f"omega must be positive, got {self.omega}")
        if not self.eta_tox > 0:
            raise ValueError(f"eta_tox must be positive, got {self.eta_tox}")


@dataclass
class ObservationParams:
    """Everything outside the policy: shared visit, longitudinal and survival parts."""

    shared: SharedVisitParams
    longitudinal: LongitudinalParams
    survival: SurvivalParams

    def with_survival(self, **kw) -> ObservationParams:
        return replace(self, survival=replace(self.survival, **kw))


@dataclass
class Truths:
    """A full parameter set used to generate synthetic cohorts."""

    policy: PolicyParams
    observation: ObservationParams
    covariate_names: list[str] = field(default_factory=lambda: ["age_donor", "dgf", "bmi"])


def simulation_truths() -> Truths:
    """The simulation-study truth values (three covariates: donor age, DGF, BMI)."""
    policy = PolicyParams(nu1=2.5, nu2=1.5, mu=-4.8,
                          beta_d=[1.0, 0.2, 0.15, 0.2, 0.15], sigma_d2=0.3 ** 2)
    shared = SharedVisitParams(xi=2.0, beta_alpha=[9.5, -1.5])
    longitudinal = LongitudinalParams(
        beta_l=[5.3, 0.1, 0.3, 0.4, 0.25, -1e-4, 3e-8],
        sigma_l2=0.1 ** 2,
        Sigma_b=np.diag([0.04, 0.0049, 1e-8]),
    )
    survival = SurvivalParams(beta_s=[1.0, 0.9, -0.75, -5.0], h0=5.0, omega=1.05, eta_tox=50.0)
    return Truths(policy, ObservationParams(shared, longitudinal, survival))


def truths_to_dict(tr: Truths) -> dict:
    p, o = tr.policy, tr.observation
    return {
        "covariate_names": list(tr.covariate_names),
        "policy": {"nu1": p.nu1, "nu2": p.nu2, "mu": p.mu,
                   "beta_d": p.beta_d.tolist(), "sigma_d2": p.sigma_d2},
        "shared": {"xi": o.shared.xi, "beta_alpha": o.shared.beta_alpha.tolist()},
        "longitudinal": {"beta_l": o.longitudinal.beta_l.tolist(),
                         "sigma_l2": o.longitudinal.sigma_l2,
                         "Sigma_b": o.longitudinal.Sigma_b.tolist()},
        "survival": {"beta_s": o.survival.beta_s.tolist(), "h0": o.survival.h0,
                     "omega": o.survival.omega, "eta_tox": o.survival.eta_tox},
    }


def truths_from_dict(d: dict) -> Truths:
    obs = ObservationParams(SharedVisitParams(**d["shared"]),
                            LongitudinalParams(**d["longitudinal"]),
                            SurvivalParams(**d["survival"]))
    names = d.get("covariate_names", ["age_donor", "dgf", "bmi"])
    return Truths(PolicyParams(**d["policy"]), obs, list(names))
