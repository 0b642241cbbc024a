"""Two-sided tests and confidence intervals for the treatment contrast and slopes."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from .model import AncovaData, FittedModel, fit
from .numerics import DEFAULT_TOL, Tolerance, norm_quantile, t_quantile, t_two_sided_p
from .variance import (
    estimate_variances,
    pooled_classical_variance,
    satterthwaite_df,
)

__all__ = [
    "METHODS",
    "TestResult",
    "classical_ancova_test",
    "classical_covariate_test",
    "covariate_test",
    "normal_approx_test",
    "pooled_plain_test",
    "welch_cov_test",
    "welch_plain_test",
]

METHODS = (
    "welch_satterthwaite_cov",
    "classical_ancova",
    "normal_approx",
    "wild_bootstrap",
    "welch_plain",
)


@dataclass(frozen=True)
class TestResult:
    """Outcome of one two-sided test.

    ``se`` is the standard error of ``effect`` itself, so the interval is
    ``effect -/+ critical * se``. ``df`` is ``inf`` for the normal reference
    and ``None`` when the reference distribution comes from resampling.
    """

    __test__ = False  # keep pytest from collecting this class

    effect: float
    se: float
    statistic: float
    df: float | None
    p_value: float
    ci_lower: float
    ci_upper: float
    alpha: float
    method: str
    critical: float
    null_value: float = 0.0
    parameter: str = "delta"

    @property
    def rejects(self) -> bool:
        return abs(self.statistic) >= self.critical

    def to_dict(self) -> dict:
        d = asdict(self)
        if d["df"] is not None and math.isinf(d["df"]):
            d["df"] = "asymptotic"
        return d

    @classmethod
    def from_dict(cls, d: dict) -> TestResult:
        d = dict(d)
        if d.get("df") == "asymptotic":
            d["df"] = math.inf
        return cls(**d)


def _studentize(effect: float, se: float, null_value: float) -> float:
    dev = effect - null_value
    if se > 0:
        return dev / se
    return 0.0 if dev == 0 else math.copysign(math.inf, dev)


def _t_result(effect, se, df, alpha, method, null_value, parameter, tol) -> TestResult:
    stat = _studentize(effect, se, null_value)
    if math.isinf(df):
        crit = norm_quantile(1.0 - alpha / 2.0)
    else:
        crit = t_quantile(1.0 - alpha / 2.0, df, tol)
    p = float(t_two_sided_p(stat, df))
    return TestResult(
        effect=float(effect),
        se=float(se),
        statistic=float(stat),
        df=float(df),
        p_value=p,
        ci_lower=float(effect - crit * se),
        ci_upper=float(effect + crit * se),
        alpha=float(alpha),
        method=method,
        critical=float(crit),
        null_value=float(null_value),
        parameter=parameter,
    )


def _check_alpha(alpha: float) -> None:
    if not 0.0 < alpha < 1.0:
        raise ValueError("alpha must lie strictly between 0 and 1")


def _fitted(data: AncovaData, fitted: FittedModel | None, tol: Tolerance) -> FittedModel:
    return fit(data, tol) if fitted is None else fitted


def welch_cov_test(data: AncovaData, alpha: float = 0.05, tol: Tolerance = DEFAULT_TOL, *,
                   null_value: float = 0.0, fitted: FittedModel | None = None) -> TestResult:
    """Welch-Satterthwaite t-test with covariates for ``b1 - b2``."""
    _check_alpha(alpha)
    fm = _fitted(data, fitted, tol)
    v = estimate_variances(fm, tol)
    n1s, n2s = fm.n_star
    kappa = satterthwaite_df(v.sigma1_sq, v.sigma2_sq, n1s, n2s, v.df1, v.df2)
    se = math.sqrt(v.sigma_b_sq / data.N)
    return _t_result(fm.delta_hat, se, kappa, alpha, "welch_satterthwaite_cov",
                     null_value, "delta", tol)


def normal_approx_test(data: AncovaData, alpha: float = 0.05, tol: Tolerance = DEFAULT_TOL, *,
                       null_value: float = 0.0, fitted: FittedModel | None = None) -> TestResult:
    """Large-sample version of :func:`welch_cov_test` with a normal reference."""
    _check_alpha(alpha)
    fm = _fitted(data, fitted, tol)
    v = estimate_variances(fm, tol)
    se = math.sqrt(v.sigma_b_sq / data.N)
    return _t_result(fm.delta_hat, se, math.inf, alpha, "normal_approx",
                     null_value, "delta", tol)


def _check_l(fm: FittedModel, l: int) -> None:
    if not 1 <= l <= fm.data.L:
        raise IndexError(f"covariate index {l} out of range 1..{fm.data.L}")


def covariate_test(data: AncovaData, l: int, alpha: float = 0.05, tol: Tolerance = DEFAULT_TOL,
                   *, null_value: float = 0.0, fitted: FittedModel | None = None) -> TestResult:
    """Satterthwaite t-test for slope ``p_l`` (1-based ``l``)."""
    _check_alpha(alpha)
    fm = _fitted(data, fitted, tol)
    _check_l(fm, l)
    v = estimate_variances(fm, tol)
    nt1, nt2 = fm.n_tilde[l - 1]
    lam = satterthwaite_df(v.sigma1_sq, v.sigma2_sq, nt1, nt2, v.df1, v.df2)
    se = math.sqrt(v.sigma_pl_sq[l - 1] / data.N)
    return _t_result(fm.p_hat[l - 1], se, lam, alpha, "welch_satterthwaite_cov",
                     null_value, f"p{l}", tol)


def classical_ancova_test(data: AncovaData, alpha: float = 0.05, tol: Tolerance = DEFAULT_TOL,
                          *, null_value: float = 0.0,
                          fitted: FittedModel | None = None) -> TestResult:
    """ANCOVA t-test for ``b1 - b2`` with the pooled (equal-variance) estimator."""
    _check_alpha(alpha)
    fm = _fitted(data, fitted, tol)
    s_c, df_c = pooled_classical_variance(data, tol)
    se = math.sqrt(s_c * sum(fm.n_star))
    return _t_result(fm.delta_hat, se, df_c, alpha, "classical_ancova", null_value, "delta", tol)


def classical_covariate_test(data: AncovaData, l: int, alpha: float = 0.05,
                             tol: Tolerance = DEFAULT_TOL, *, null_value: float = 0.0,
                             fitted: FittedModel | None = None) -> TestResult:
    _check_alpha(alpha)
    fm = _fitted(data, fitted, tol)
    _check_l(fm, l)
    s_c, df_c = pooled_classical_variance(data, tol)
    se = math.sqrt(s_c * float(fm.n_tilde[l - 1].sum()))
    return _t_result(fm.p_hat[l - 1], se, df_c, alpha, "classical_ancova",
                     null_value, f"p{l}", tol)


def _two_samples(y1, y2):
    y1 = np.asarray(y1, dtype=float).ravel()
    y2 = np.asarray(y2, dtype=float).ravel()
    if y1.size < 2 or y2.size < 2:
        raise ValueError("each sample needs at least two observations")
    return y1, y2


def welch_plain_test(y1, y2, alpha: float = 0.05, tol: Tolerance = DEFAULT_TOL, *,
                     null_value: float = 0.0) -> TestResult:
    """Welch two-sample t-test without covariates."""
    _check_alpha(alpha)
    y1, y2 = _two_samples(y1, y2)
    n1, n2 = y1.size, y2.size
    s1, s2 = y1.var(ddof=1), y2.var(ddof=1)
    nu = satterthwaite_df(s1, s2, 1.0 / n1, 1.0 / n2, n1 - 1, n2 - 1)
    se = math.sqrt(s1 / n1 + s2 / n2)
    return _t_result(y1.mean() - y2.mean(), se, nu, alpha, "welch_plain", null_value, "delta", tol)


def pooled_plain_test(y1, y2, alpha: float = 0.05, tol: Tolerance = DEFAULT_TOL) -> TestResult:
    """Student's equal-variance two-sample t-test (the classical test with no covariates)."""
    y1, y2 = _two_samples(y1, y2)
    data = AncovaData(np.concatenate([y1, y2]), np.repeat([1, 2], [y1.size, y2.size]),
                      np.zeros((y1.size + y2.size, 0)))
    return classical_ancova_test(data, alpha, tol)
