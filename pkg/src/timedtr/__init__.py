"""Continuous-time dynamic treatment regimes.

A marked point process for visit times and doses, a joint lab/survival
model fitted by MCMC, and a policy-gradient optimizer over the decision
parameters.
"""
from .joint import ModelVariant, PatientRecord, joint_loglik, waic
from .params import (LongitudinalParams, ObservationParams, PolicyParams, SharedVisitParams,
                     SurvivalParams, Truths, simulation_truths)

__all__ = ["ModelVariant", "PatientRecord", "joint_loglik", "waic", "LongitudinalParams",
           "ObservationParams", "PolicyParams", "SharedVisitParams", "SurvivalParams", "Truths",
           "simulation_truths"]
