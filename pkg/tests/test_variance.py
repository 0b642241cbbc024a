from __future__ import annotations

import math

import numpy as np
import pytest

from hetancova import AncovaData, fit
from hetancova.exceptions import DegenerateGroupError, LeverageError
from hetancova.numerics import hat_diagonals, orth_complement_projector
from hetancova.simulation import ErrorDistribution
from hetancova.variance import (
    HcFlavor,
    estimate_variances,
    group_variance,
    hcse_covariance,
    pooled_classical_variance,
    quadratic_form_variance,
    satterthwaite_df,
    sigma_b_hc,
    sigma_b_sq,
    sigma_pl_sq,
)

from .conftest import random_data


def test_bodyweight_group_variances(bodyweight):
    v = estimate_variances(fit(bodyweight))
    assert v.sigma1_sq == pytest.approx(65.291, abs=5e-4)
    assert v.sigma2_sq == pytest.approx(33.392, abs=5e-4)
    assert (v.df1, v.df2) == (11, 37)
    assert math.sqrt(v.sigma_b_sq / bodyweight.N) == pytest.approx(2.43, abs=0.005)


def test_sample_variances_without_covariates(bodyweight):
    d = AncovaData(bodyweight.y, bodyweight.group, np.zeros((52, 0)))
    assert group_variance(d, 1)[0] == pytest.approx(183.43, abs=0.005)
    assert group_variance(d, 2)[0] == pytest.approx(258.48, abs=0.005)
    assert group_variance(d, 1)[0] == pytest.approx(np.var(d.y[:13], ddof=1), rel=1e-12)


def test_exact_fit_gives_zero_variance():
    M = np.array([1.0, 2, 3, 4, 1, 2, 3, 5])[:, None]
    y = np.repeat([1.0, 2.0], 4) + 0.5 * M[:, 0]
    d = AncovaData(y, np.repeat([1, 2], 4), M)
    assert group_variance(d, 1)[0] == pytest.approx(0.0, abs=1e-12)
    assert pooled_classical_variance(d)[0] == pytest.approx(0.0, abs=1e-12)


def test_degenerate_group_error_names_group_and_size():
    M = np.array([[1.0], [2.0], [1.0], [2.0], [3.0]])
    d = AncovaData(np.arange(5.0), [1, 1, 2, 2, 2], M)
    with pytest.raises(DegenerateGroupError) as info:
        group_variance(d, 1)
    assert info.value.group == 1 and info.value.required == 3
    assert "group 1" in str(info.value) and "at least 3" in str(info.value)


def test_constant_covariate_within_group_uses_sub_model_rank():
    # covariate constant in group 1: its sub-model rank is 1, so df1 = n1 - 1
    M = np.array([2.0, 2, 2, 2, 1, 3, 4, 6])[:, None]
    d = AncovaData(np.arange(8.0) ** 1.5, np.repeat([1, 2], 4), M)
    assert group_variance(d, 1)[1] == 3
    assert group_variance(d, 2)[1] == 2


def test_df_equals_sum_of_one_minus_leverages(rng):
    for L in (0, 1, 3):
        d = random_data(rng, n1=9, n2=7, L=L)
        for i in (1, 2):
            sl = d.group_slice(i)
            B = np.hstack([np.ones((sl.stop - sl.start, 1)), d.M[sl]])
            assert group_variance(d, i)[1] == pytest.approx((1 - hat_diagonals(B)).sum(),
                                                            abs=1e-10)


def test_sigma_b_two_paths(rng):
    d = random_data(rng)
    fm = fit(d)
    v = estimate_variances(fm)
    Sigma = np.diag(np.repeat([v.sigma1_sq, v.sigma2_sq], [d.n1, d.n2]))
    c = fm.D[0] - fm.D[1]
    assert v.sigma_b_sq == pytest.approx(d.N * c @ Sigma @ c, rel=1e-10)


def test_sigma_b_reduces_to_welch_form(rng):
    d = random_data(rng, L=0)
    v = estimate_variances(fit(d))
    s1, s2 = np.var(d.y[: d.n1], ddof=1), np.var(d.y[d.n1 :], ddof=1)
    assert v.sigma_b_sq == pytest.approx(d.N * (s1 / d.n1 + s2 / d.n2), rel=1e-12)


def test_sigma_zero_inputs():
    assert sigma_b_sq(0.0, 0.0, 0.3, 0.2, 10) == 0.0
    assert sigma_pl_sq(0.0, 0.0, 0.3, 0.2, 10) == 0.0


def test_sigma_pl_matches_ols_variance_under_equal_variances():
    x = np.array([-1.5, -0.5, 0.5, 1.5, -1.5, -0.5, 0.5, 1.5])
    d = AncovaData(np.zeros(8), np.repeat([1, 2], 4), x[:, None])
    fm = fit(d)
    Xt = fm.Xt
    ols = np.linalg.inv(Xt.T @ Xt)[2, 2]
    nt1, nt2 = fm.n_tilde[0]
    assert sigma_pl_sq(2.0, 2.0, nt1, nt2, d.N) / d.N == pytest.approx(2.0 * ols, rel=1e-12)


def test_sigma_pl_monte_carlo_normalization(rng):
    # Var(sqrt(N) p_hat) should equal N (s1 nt1 + s2 nt2)
    n1, n2 = 6, 10
    M = rng.normal(0, 1, size=(n1 + n2, 1))
    d = AncovaData(np.zeros(n1 + n2), np.repeat([1, 2], [n1, n2]), M)
    fm = fit(d)
    sd = np.repeat([1.0, 2.0], [n1, n2])
    P = (rng.standard_normal((40_000, n1 + n2)) * sd) @ fm.A[0]
    nt1, nt2 = fm.n_tilde[0]
    truth = sigma_pl_sq(1.0, 4.0, nt1, nt2, d.N)
    assert np.var(np.sqrt(d.N) * P, ddof=1) == pytest.approx(truth, rel=0.03)


def test_satterthwaite_bounds_and_limits():
    assert satterthwaite_df(1.0, 1.0, 1.0, 0.0, 5, 9) == pytest.approx(5)
    assert satterthwaite_df(0.0, 1.0, 1.0, 1.0, 5, 9) == pytest.approx(9)
    k = satterthwaite_df(2.0, 3.0, 0.1, 0.05, 5, 9)
    assert 5 <= k <= 14
    assert satterthwaite_df(0.0, 0.0, 1.0, 1.0, 5, 9) == math.inf


# ---------------------------------------------------------------------------
# sandwich estimators
# ---------------------------------------------------------------------------


def test_hc0_bodyweight(bodyweight):
    fm = fit(bodyweight)
    cov = hcse_covariance(fm.Xt, fm.residuals, "HC0")
    assert math.sqrt(sigma_b_hc(cov, 52) / 52) == pytest.approx(2.46, abs=0.005)


def test_hc_relations(rng):
    d = random_data(rng, n1=7, n2=9, L=2)
    fm = fit(d)
    covs = {f: hcse_covariance(fm.Xt, fm.residuals, f) for f in HcFlavor}
    N, L = d.N, d.L
    np.testing.assert_allclose(covs[HcFlavor.HC1], covs[HcFlavor.HC0] * N / (N - L - 1),
                               rtol=1e-12)
    for f, c in covs.items():
        np.testing.assert_allclose(c, c.T, atol=0)
        assert np.linalg.eigvalsh(c).min() > -1e-12
    s = {f.value: sigma_b_hc(c, N) for f, c in covs.items()}
    assert s["HC0"] <= s["HC2"] <= s["HC3"]


def test_hc_zero_residuals_and_leverage(rng):
    d = random_data(rng)
    Xt = fit(d).Xt
    assert np.all(hcse_covariance(Xt, np.zeros(d.N), "HC3") == 0)
    Xl = np.column_stack([Xt, np.eye(d.N)[0]])
    with pytest.raises(LeverageError):
        hcse_covariance(Xl, np.ones(d.N), "HC2")
    hcse_covariance(Xl, np.ones(d.N), "HC0")  # HC0 does not need leverages


def test_sigma_b_hc_simple_cases():
    assert sigma_b_hc(np.eye(3), 10) == 20.0
    assert sigma_b_hc(np.diag([2.0, 5.0, 1.0]), 4) == 28.0


def test_classical_pooled_variance(bodyweight):
    s, df = pooled_classical_variance(bodyweight)
    assert df == 49
    fm = fit(bodyweight)
    assert math.sqrt(s * sum(fm.n_star)) == pytest.approx(2.11, abs=0.005)


def test_classical_pooled_variance_unbiased(rng):
    d = random_data(rng, n1=6, n2=9, L=1)
    Xt = fit(d).Xt
    Q = orth_complement_projector(Xt)
    mean = Xt @ [1.0, 2.0, 0.5]
    Y = mean + 1.7 * rng.standard_normal((20_000, d.N))
    s = np.einsum("rj,jk,rk->r", Y, Q, Y) / (d.N - 3)
    assert abs(s.mean() - 1.7**2) < 3 * s.std(ddof=1) / math.sqrt(len(s))


# ---------------------------------------------------------------------------
# quadratic form variance
# ---------------------------------------------------------------------------


def test_quadratic_form_gaussian_projection(rng):
    X = np.column_stack([np.ones(8), rng.standard_normal(8)])
    Q = orth_complement_projector(X)
    mu = X @ [2.0, -1.0]
    for s2 in (0.5, 2.0):
        v = quadratic_form_variance(Q, mu, s2, 0.0, 3 * s2**2)
        assert v == pytest.approx(2 * s2**2 * np.trace(Q), rel=1e-12)
    assert quadratic_form_variance(Q, mu, 0.0, 0.0, 0.0) == 0.0


@pytest.mark.parametrize("family", ["uniform", "chisq7"])
def test_quadratic_form_monte_carlo(rng, family):
    dist = ErrorDistribution(family)
    A = rng.standard_normal((3, 3))
    Q = (A + A.T) / 2
    mu = np.array([0.5, -1.0, 2.0])
    s2 = 1.5
    mu3, mu4 = dist.central_moments(s2)
    Y = mu + math.sqrt(s2) * dist.draw(rng, (1_000_000, 3))
    qf = np.einsum("rj,jk,rk->r", Y, Q, Y)
    assert np.var(qf) == pytest.approx(quadratic_form_variance(Q, mu, s2, mu3, mu4), rel=0.01)


def test_group_variance_unbiased_non_normal(rng):
    n1, n2 = 7, 9
    M = rng.normal(5, 1, (n1 + n2, 2))
    d = AncovaData(np.zeros(n1 + n2), np.repeat([1, 2], [n1, n2]), M)
    sl = d.group_slice(1)
    B = np.hstack([np.ones((n1, 1)), M[sl]])
    Q = orth_complement_projector(B)
    E = ErrorDistribution("chisq7").draw(rng, (50_000, n1)) * math.sqrt(3.0)
    s = np.einsum("rj,jk,rk->r", E, Q, E) / (n1 - 3)
    assert abs(s.mean() - 3.0) < 3 * s.std(ddof=1) / math.sqrt(len(s))
