"""Diagonal Fisher estimators, the exact oracle and the Fisher container."""

from src.fisher.estimators import (
    GradientProvider,
    batched_joint_empirical_fisher,
    empirical_fisher,
    joint_empirical_fisher,
    minibatch_joint_estimate,
    squisher,
    standard_fisher_mc,
)
from src.fisher.oracle import OracleMode, minibatch_joint_expectation, oracle_fisher
from src.fisher.registry import ESTIMATORS, EstimatorRequest, estimate, needs_data
from src.fisher.types import (
    FISHER_FORMAT_VERSION,
    FisherDiagonal,
    FisherKind,
    FisherMeta,
    Scaling,
    load_fisher,
    load_fisher_with_extras,
    rescale,
    save_fisher,
)

__all__: list[str] = [
    "GradientProvider",
    "batched_joint_empirical_fisher",
    "empirical_fisher",
    "joint_empirical_fisher",
    "minibatch_joint_estimate",
    "squisher",
    "standard_fisher_mc",
    "OracleMode",
    "minibatch_joint_expectation",
    "oracle_fisher",
    "ESTIMATORS",
    "EstimatorRequest",
    "estimate",
    "needs_data",
    "FISHER_FORMAT_VERSION",
    "FisherDiagonal",
    "FisherKind",
    "FisherMeta",
    "Scaling",
    "load_fisher",
    "load_fisher_with_extras",
    "rescale",
    "save_fisher",
]
