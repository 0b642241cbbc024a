"""Heteroscedastic two-group ANCOVA: Welch-Satterthwaite t-test with covariates."""

from .bootstrap import BootstrapConfig, wild_bootstrap_test
from .exceptions import (
    AncovaError,
    DegenerateGroupError,
    InvalidInputError,
    LeverageError,
    StructuralError,
)
from .inference import (
    TestResult,
    classical_ancova_test,
    classical_covariate_test,
    covariate_test,
    normal_approx_test,
    pooled_plain_test,
    welch_cov_test,
    welch_plain_test,
)
from .model import AncovaData, FittedModel, fit
from .numerics import Tolerance
from .variance import VarianceEstimates, estimate_variances

__version__ = "0.1.0"

__all__ = [
    "AncovaData",
    "AncovaError",
    "BootstrapConfig",
    "DegenerateGroupError",
    "FittedModel",
    "InvalidInputError",
    "LeverageError",
    "StructuralError",
    "TestResult",
    "Tolerance",
    "VarianceEstimates",
    "classical_ancova_test",
    "classical_covariate_test",
    "covariate_test",
    "estimate_variances",
    "fit",
    "normal_approx_test",
    "pooled_plain_test",
    "welch_cov_test",
    "welch_plain_test",
    "wild_bootstrap_test",
]
