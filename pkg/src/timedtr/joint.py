"""Joint log-likelihood of decisions, labs and survival, plus WAIC."""
from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from . import longitudinal, mtpp, survival
from .mtpp import VisitEvent
from .params import ObservationParams, PolicyParams


class ModelVariant(str, enum.Enum):
    """JOINT feeds the latent lab trajectory into the hazard; SLS feeds the
    last observed lab instead, cutting the longitudinal-survival link."""

    JOINT = "joint"
    SLS = "sls"


@dataclass
class PatientRecord:
    id: str
    x: np.ndarray
    t: np.ndarray
    d: np.ndarray
    labs: np.ndarray
    T_tilde: float
    delta: int

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=np.float64).reshape(-1)
        self.t = np.asarray(self.t, dtype=np.float64).reshape(-1)
        self.d = np.asarray(self.d, dtype=np.float64).reshape(-1)
        self.labs = np.asarray(self.labs, dtype=np.float64).reshape(-1)
        self.delta = int(self.delta)
        self.T_tilde = float(self.T_tilde)
        self.validate()

    def validate(self) -> None:
        if self.t.shape[0] == 0 or self.t[0] != 0.0:
            raise ValueError(f"patient {self.id}: first visit must be at t = 0")
        if np.any(np.diff(self.t) <= 0):
            raise ValueError(f"patient {self.id}: visit times must be strictly increasing")
        if not (self.t.shape == self.d.shape == self.labs.shape):
            raise ValueError(f"patient {self.id}: labs and doses must align with visits")
        if not self.T_tilde > 0 or self.t[-1] > self.T_tilde:
            raise ValueError(f"patient {self.id}: observed time must be positive and not "
                             "precede the last visit")
        if self.delta not in (0, 1):
            raise ValueError(f"patient {self.id}: delta must be 0 or 1")
        for name in ("x", "t", "d", "labs"):
            if not np.all(np.isfinite(getattr(self, name))):
                raise ValueError(f"patient {self.id}: non-finite values in {name}")

    @property
    def events(self) -> list[VisitEvent]:
        return [VisitEvent(float(a), float(b)) for a, b in zip(self.t, self.d)]

    @property
    def n_visits(self) -> int:
        return int(self.t.shape[0])

    def hazard_context(self, obs: ObservationParams, b, variant=ModelVariant.JOINT):
        return survival.HazardContext(self.t, self.d, self.labs, self.x, b, obs.longitudinal,
                                      obs.shared, sls=ModelVariant(variant) is ModelVariant.SLS)

    def __eq__(self, other):
        if not isinstance(other, PatientRecord):
            return NotImplemented
        return (self.id == other.id and self.T_tilde == other.T_tilde
                and self.delta == other.delta
                and all(np.array_equal(getattr(self, k), getattr(other, k))
                        for k in ("x", "t", "d", "labs")))


def joint_loglik(record: PatientRecord, theta: PolicyParams, phi: ObservationParams, b,
                 variant=ModelVariant.JOINT) -> float:
    """Decision + longitudinal + survival log-likelihood for one patient.

    Summed in that fixed order.
    """
    ll_dec = mtpp.decision_loglik(record.events, record.labs, record.x, record.T_tilde,
                                  theta, phi.shared)
    ll_long = longitudinal.long_loglik(record, phi.longitudinal, b)
    ctx = record.hazard_context(phi, b, variant)
    ll_surv = survival.survival_loglik(record, ctx, phi.survival)
    return ll_dec + ll_long + ll_surv


def waic(pointwise_loglik) -> float:
    """WAIC = -2 * (lppd - p_waic) for a K x N matrix of pointwise log-likelihoods.

    lppd uses log-mean-exp over draws; p_waic is the sample variance (K - 1
    denominator) of each column.
    """
    ll = np.asarray(pointwise_loglik, dtype=np.float64)
    if ll.ndim != 2 or ll.shape[0] < 2:
        raise ValueError("need a K x N matrix with at least two draws")
    K = ll.shape[0]
    lppd = logsumexp(ll, axis=0) - np.log(K)
    p = ll.var(axis=0, ddof=1)
    return float(-2.0 * np.sum(lppd - p))


@dataclass
class PackedCohort:
    """CSR layout of a cohort for the compiled likelihood kernels."""

    ids: list
    ptr: np.ndarray
    t: np.ndarray
    d: np.ndarray
    y: np.ndarray
    X: np.ndarray
    T: np.ndarray
    delta: np.ndarray

    @classmethod
    def from_records(cls, records: list[PatientRecord]) -> PackedCohort:
        lens = np.array([r.n_visits for r in records], dtype=np.int64)
        ptr = np.concatenate([[0], np.cumsum(lens)]).astype(np.int64)
        return cls(
            ids=[r.id for r in records],
            ptr=ptr,
            t=np.concatenate([r.t for r in records]),
            d=np.concatenate([r.d for r in records]),
            y=np.concatenate([r.labs for r in records]),
            X=np.vstack([r.x for r in records]) if records else np.zeros((0, 0)),
            T=np.array([r.T_tilde for r in records]),
            delta=np.array([r.delta for r in records], dtype=np.bool_),
        )

    @property
    def n_patients(self) -> int:
        return self.ptr.shape[0] - 1

    @property
    def n_covariates(self) -> int:
        return self.X.shape[1]

    def patient_index(self) -> np.ndarray:
        return np.repeat(np.arange(self.n_patients), np.diff(self.ptr))

    def followup_mask(self) -> np.ndarray:
        """True for visits after the baseline one (those carry a modeled lab)."""
        mask = np.ones(self.t.shape[0], dtype=bool)
        mask[self.ptr[:-1]] = False
        return mask

    def previous_dose(self) -> np.ndarray:
        prev = np.empty_like(self.d)
        prev[1:] = self.d[:-1]
        prev[self.ptr[:-1]] = np.nan
        return prev
