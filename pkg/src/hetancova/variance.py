"""Variance estimators for the two-group ANCOVA model.

Group variances come from the residuals of separate per-group regressions
(intercept plus that group's covariates), which makes them unbiased under
heteroscedasticity. Weighted by the rows of the generating matrices they give
unbiased variances of the treatment contrast and of each slope. The
heteroscedasticity-consistent sandwich estimators and the pooled
(homoscedastic) estimator are provided for comparison.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .exceptions import DegenerateGroupError, InvalidInputError, LeverageError
from .model import AncovaData, FittedModel, build_design
from .numerics import (
    DEFAULT_TOL,
    Tolerance,
    hat_diagonals,
    matrix_rank,
    orth_complement_projector,
    pseudo_inverse,
)

__all__ = [
    "HcFlavor",
    "VarianceEstimates",
    "estimate_variances",
    "group_variance",
    "hcse_covariance",
    "pooled_classical_variance",
    "quadratic_form_variance",
    "satterthwaite_df",
    "sigma_b_hc",
    "sigma_b_sq",
    "sigma_pl_sq",
]


class HcFlavor(str, enum.Enum):
    HC0 = "HC0"
    HC1 = "HC1"
    HC2 = "HC2"
    HC3 = "HC3"


@dataclass(frozen=True)
class VarianceEstimates:
    """Group variances and the derived estimator variances.

    ``sigma_b_sq`` and ``sigma_pl_sq`` are on the sqrt(N) scale, i.e. the
    variance of sqrt(N) times the estimator.
    """

    sigma1_sq: float
    sigma2_sq: float
    sigma_b_sq: float
    sigma_pl_sq: np.ndarray
    df1: int
    df2: int


def _group_design(data: AncovaData, i: int) -> tuple[np.ndarray, np.ndarray]:
    sl = data.group_slice(i)
    Mi = data.M[sl]
    return np.hstack([np.ones((Mi.shape[0], 1)), Mi]), data.y[sl]


def group_variance(data: AncovaData, i: int, tol: Tolerance = DEFAULT_TOL) -> tuple[float, int]:
    """Residual variance of the group-i sub-model and its degrees of freedom.

    The sub-model regresses ``y_i`` on an intercept and ``M_i``. Degrees of
    freedom are ``n_i - rank(1 : M_i)``, which is ``n_i - 1 - r(M_i)``
    unless a covariate is constant within the group.
    """
    B, yi = _group_design(data, i)
    df = B.shape[0] - matrix_rank(B, tol)
    if df < 1:
        raise DegenerateGroupError(i, B.shape[0], B.shape[0] - df)
    Q = orth_complement_projector(B, tol)
    return max(float(yi @ Q @ yi), 0.0) / df, int(df)


def sigma_b_sq(s1: float, s2: float, n1_star: float, n2_star: float, N: int) -> float:
    if min(s1, s2, n1_star, n2_star) < 0:
        raise InvalidInputError("variances and weights must be nonnegative")
    return N * (s1 * n1_star + s2 * n2_star)


def sigma_pl_sq(s1: float, s2: float, nt1: float, nt2: float, N: int) -> float:
    if min(s1, s2, nt1, nt2) < 0:
        raise InvalidInputError("variances and weights must be nonnegative")
    return N * (s1 * nt1 + s2 * nt2)


def satterthwaite_df(s1: float, s2: float, w1: float, w2: float, df1: float, df2: float) -> float:
    """Effective degrees of freedom of ``s1*w1 + s2*w2`` by moment matching.

    Returns ``inf`` when the weighted sum is zero.
    """
    num = (s1 * w1 + s2 * w2) ** 2
    den = (s1 * w1) ** 2 / df1 + (s2 * w2) ** 2 / df2
    return float(num / den) if den > 0 else float("inf")


def estimate_variances(fitted: FittedModel, tol: Tolerance = DEFAULT_TOL) -> VarianceEstimates:
    data = fitted.data
    s1, df1 = group_variance(data, 1, tol)
    s2, df2 = group_variance(data, 2, tol)
    n1s, n2s = fitted.n_star
    spl = np.array([sigma_pl_sq(s1, s2, a, b, data.N) for a, b in fitted.n_tilde])
    return VarianceEstimates(
        sigma1_sq=s1,
        sigma2_sq=s2,
        sigma_b_sq=sigma_b_sq(s1, s2, n1s, n2s, data.N),
        sigma_pl_sq=spl,
        df1=df1,
        df2=df2,
    )


def hcse_covariance(Xt, residuals, flavor: HcFlavor | str = HcFlavor.HC0,
                    tol: Tolerance = DEFAULT_TOL) -> np.ndarray:
    """Sandwich covariance ``(X'X)^- X' E X (X'X)^-`` of the OLS coefficients.

    E is diag(e^2) for HC0/HC1, diag(e^2 / (1 - h)) for HC2 and
    diag(e^2 / (1 - h)^2) for HC3. HC1 scales HC0 by ``N / (N - L - 1)`` with
    L the number of covariate columns.
    """
    flavor = HcFlavor(flavor)
    Xt = np.asarray(Xt, dtype=float)
    e = np.asarray(residuals, dtype=float).ravel()
    N, k = Xt.shape
    if e.size != N:
        raise InvalidInputError("residual length must match the design rows")
    G = pseudo_inverse(Xt, tol)  # (X'X)^- X'
    w = e * e
    if flavor in (HcFlavor.HC2, HcFlavor.HC3):
        h = hat_diagonals(Xt, tol)
        one_minus = 1.0 - h
        if np.any(one_minus <= 1e-12):
            bad = int(np.argmin(one_minus))
            raise LeverageError(f"observation {bad + 1} (group-sorted order) has leverage 1; "
                               f"{flavor.value} is undefined")
        w = w / (one_minus if flavor is HcFlavor.HC2 else one_minus**2)
    cov = (G * w) @ G.T
    if flavor is HcFlavor.HC1:
        L = k - 2
        cov = cov * (N / (N - L - 1))
    return (cov + cov.T) / 2.0


def sigma_b_hc(Gamma, N: int) -> float:
    """``N a' Gamma a`` with ``a = (1, -1, 0, ..., 0)``."""
    Gamma = np.asarray(Gamma, dtype=float)
    if Gamma.ndim != 2 or Gamma.shape[0] < 2:
        raise InvalidInputError("Gamma must be at least 2 x 2")
    return float(N * (Gamma[0, 0] + Gamma[1, 1] - Gamma[0, 1] - Gamma[1, 0]))


def pooled_classical_variance(data: AncovaData, tol: Tolerance = DEFAULT_TOL) -> tuple[float, int]:
    """Pooled residual variance of the full model and its degrees of freedom."""
    X, M = build_design(data)
    Xt = np.hstack([X, M])
    df = data.N - matrix_rank(Xt, tol)
    if df < 1:
        raise DegenerateGroupError(0, data.N, data.N - df)
    Q = orth_complement_projector(Xt, tol)
    return max(float(data.y @ Q @ data.y), 0.0) / df, int(df)


def quadratic_form_variance(Q, mu, sigma2: float, mu3: float, mu4: float) -> float:
    """Variance of ``Y'QY`` for ``Y = mu + e`` with iid errors.

    ``sigma2``, ``mu3`` and ``mu4`` are the second, third and fourth central
    moments of the errors.
    """
    Q = np.asarray(Q, dtype=float)
    mu = np.asarray(mu, dtype=float).ravel()
    if Q.ndim != 2 or Q.shape[0] != Q.shape[1] or Q.shape[0] != mu.size:
        raise InvalidInputError("Q must be square and conform with mu")
    q = np.diag(Q)
    Qmu = Q @ mu
    return float(
        (mu4 - 3.0 * sigma2**2) * (q @ q)
        + 2.0 * sigma2**2 * np.trace(Q @ Q)
        + 4.0 * sigma2 * (Qmu @ Qmu)
        + 4.0 * mu3 * (Qmu @ q)
    )
