from __future__ import annotations

import numpy as np
import pytest

from hetancova import AncovaData, fit
from hetancova.exceptions import InvalidInputError, StructuralError
from hetancova.model import build_design, generating_matrices, weights_n_star, weights_n_tilde

from .conftest import random_data


def test_design_small():
    d = AncovaData([1.0, 2.0, 3.0, 4.0], [1, 1, 2, 2], np.zeros((4, 0)))
    X, M = build_design(d)
    np.testing.assert_array_equal(X, [[1, 0], [1, 0], [0, 1], [0, 1]])
    assert M.shape == (4, 0)


def test_design_shapes():
    d = AncovaData(np.arange(5.0), [1, 1, 1, 2, 2], np.ones((5, 2)) * np.arange(5.0)[:, None])
    X, M = build_design(d)
    assert X.shape == (5, 2) and M.shape == (5, 2)


def test_bodyweight_design(bodyweight):
    X, _ = build_design(bodyweight)
    assert X.shape == (52, 2)
    assert X[:, 0].sum() == 13 and X[:, 1].sum() == 39
    assert np.all(X[:13, 0] == 1) and np.all(X[13:, 1] == 1)


def test_bodyweight_estimates(bodyweight):
    fm = fit(bodyweight)
    np.testing.assert_allclose(fm.b_hat, [41.873, 46.576], atol=5e-4)
    assert fm.p_hat[0] == pytest.approx(1.276, abs=5e-4)


def test_baseline_group_means(baseline):
    fm = fit(baseline)
    np.testing.assert_allclose(fm.b_hat, [baseline.y[:13].mean(), baseline.y[13:].mean()],
                               rtol=0, atol=1e-12)
    np.testing.assert_allclose(fm.b_hat, [177.57, 176.53], atol=0.005)


def test_week4_group_means_without_covariate(bodyweight):
    d = AncovaData(bodyweight.y, bodyweight.group, np.zeros((52, 0)))
    np.testing.assert_allclose(fit(d).b_hat, [268.46, 271.84], atol=0.01)


def test_exact_interpolation():
    M = np.array([1.0, 2, 3, 1, 2, 3])[:, None]
    y = np.repeat([1.0, 2.0], 3) + 0.5 * M[:, 0]
    fm = fit(AncovaData(y, [1, 1, 1, 2, 2, 2], M))
    np.testing.assert_allclose(fm.b_hat, [1.0, 2.0], atol=1e-12)
    np.testing.assert_allclose(fm.p_hat, [0.5], atol=1e-12)
    np.testing.assert_allclose(fm.residuals, 0.0, atol=1e-12)


def test_generating_matrices_l0():
    X = np.array([[1.0, 0], [1, 0], [0, 1], [0, 1]])
    D, A = generating_matrices(X, np.zeros((4, 0)))
    np.testing.assert_allclose(D, [[0.5, 0.5, 0, 0], [0, 0, 0.5, 0.5]], atol=1e-15)
    assert A.shape == (0, 4)
    assert weights_n_star(D, 2) == pytest.approx((0.5, 0.5))


def test_generating_matrices_reproduce_ols(rng):
    n1, n2 = 4, 6
    X = np.zeros((10, 2))
    X[:n1, 0] = X[n1:, 1] = 1
    M = rng.standard_normal((10, 2))
    D, A = generating_matrices(X, M)
    Xt = np.hstack([X, M])
    np.testing.assert_allclose(A @ X, 0.0, atol=1e-12)
    for _ in range(100):
        y = rng.standard_normal(10)
        coef = np.linalg.lstsq(Xt, y, rcond=None)[0]
        np.testing.assert_allclose(D @ y, coef[:2], atol=1e-8)
        np.testing.assert_allclose(A @ y, coef[2:], atol=1e-8)


def test_fit_linearity_and_orthogonality(rng):
    d = random_data(rng)
    fm = fit(d)
    np.testing.assert_allclose(fm.D @ d.y, fm.b_hat, atol=1e-8)
    np.testing.assert_allclose(fm.A @ d.y, fm.p_hat, atol=1e-8)
    np.testing.assert_allclose(fm.Xt.T @ fm.residuals, 0.0, atol=1e-8)
    assert min(fm.n_star) > 0


def test_n_star_brute_force():
    M = np.array([0.3, 1.9, 2.4, 1.1, 0.2, 3.0])[:, None]
    d = AncovaData(np.zeros(6), [1, 1, 1, 2, 2, 2], M)
    Xt = np.column_stack([np.repeat([1.0, 0.0], 3), np.repeat([0.0, 1.0], 3), M])
    G = np.linalg.inv(Xt.T @ Xt) @ Xt.T
    c = G[0] - G[1]
    want = (sum(c[j] ** 2 for j in range(3)), sum(c[j] ** 2 for j in range(3, 6)))
    assert fit(d).n_star == pytest.approx(want, rel=1e-12)
    # the contrast variance under unit variances equals c'(X'X)^-1 c
    ctr = np.array([1.0, -1.0, 0.0])
    assert sum(want) == pytest.approx(ctr @ np.linalg.inv(Xt.T @ Xt) @ ctr, rel=1e-12)


def test_n_tilde_symmetry_and_zero_row():
    x = np.array([-1.0, 0.0, 1.0, -1.0, 0.0, 1.0])
    d = AncovaData(np.zeros(6), [1, 1, 1, 2, 2, 2], x[:, None])
    nt1, nt2 = fit(d).n_tilde[0]
    assert nt1 == pytest.approx(nt2, rel=1e-12)
    assert weights_n_tilde(np.zeros((1, 6)), 3, 1) == (0.0, 0.0)
    with pytest.raises(InvalidInputError):
        weights_n_tilde(np.zeros((1, 6)), 3, 2)


def test_l0_weights_are_reciprocal_sizes(rng):
    d = AncovaData(rng.standard_normal(9), [1] * 4 + [2] * 5, np.zeros((9, 0)))
    assert fit(d).n_star == pytest.approx((1 / 4, 1 / 5), rel=1e-12)


def test_location_shift(rng):
    d = random_data(rng)
    a, b = fit(d), fit(d.with_response(d.y + 7.5))
    np.testing.assert_allclose(b.b_hat, a.b_hat + 7.5, atol=1e-10)
    np.testing.assert_allclose(b.p_hat, a.p_hat, atol=1e-10)
    assert b.delta_hat == pytest.approx(a.delta_hat, abs=1e-10)


def test_duplicated_covariate_keeps_contrast(rng):
    d = random_data(rng, L=1)
    dup = AncovaData(d.y, d.group, np.hstack([d.M, d.M]))
    a, b = fit(d), fit(dup)
    assert b.delta_hat == pytest.approx(a.delta_hat, abs=1e-8)
    assert a.identifiable and not b.identifiable
    # minimum-norm solution splits the slope evenly
    np.testing.assert_allclose(b.p_hat, [a.p_hat[0] / 2] * 2, atol=1e-8)


def test_unbiased_b_hat_monte_carlo(rng):
    n1, n2 = 8, 12
    M = rng.normal(3.0, 1.0, size=(20, 2))
    mean = np.repeat([1.0, 2.0], [n1, n2]) + M @ [0.4, -0.3]
    sd = np.repeat([1.0, 2.0], [n1, n2])
    d = AncovaData(mean, np.repeat([1, 2], [n1, n2]), M)
    D = fit(d).D
    Y = mean + rng.standard_normal((10_000, 20)) * sd
    B = Y @ D.T
    se = B.std(axis=0, ddof=1) / np.sqrt(len(B))
    assert np.all(np.abs(B.mean(axis=0) - [1.0, 2.0]) < 3 * se)


def test_from_arrays_canonicalizes():
    d = AncovaData.from_arrays([5.0, 1.0, 6.0, 2.0, 3.0], ["t", "c", "t", "c", "c"], control="c")
    assert d.labels == ("c", "t")
    np.testing.assert_array_equal(d.y, [1.0, 2.0, 3.0, 5.0, 6.0])
    np.testing.assert_array_equal(d.order, [1, 3, 4, 0, 2])
    d2 = AncovaData.from_arrays([5.0, 1.0, 6.0, 2.0], ["t", "c", "t", "c"])
    assert d2.labels == ("t", "c")


@pytest.mark.parametrize("kwargs,exc", [
    (dict(y=[1.0, 2, 3, 4], group=[1, 2, 1, 2], M=np.zeros((4, 0))), StructuralError),
    (dict(y=[1.0, 2, 3], group=[1, 2, 2], M=np.zeros((3, 0))), StructuralError),
    (dict(y=[1.0, np.nan, 3, 4], group=[1, 1, 2, 2], M=np.zeros((4, 0))), InvalidInputError),
    (dict(y=[1.0, 2, 3, 4], group=[1, 1, 3, 3], M=np.zeros((4, 0))), StructuralError),
    (dict(y=[1.0, 2, 3, 4], group=[1, 1, 2, 2], M=np.zeros((3, 1))), InvalidInputError),
])
def test_invalid_data(kwargs, exc):
    with pytest.raises(exc):
        AncovaData(**kwargs)


def test_three_groups_rejected():
    with pytest.raises(StructuralError):
        AncovaData.from_arrays([1.0, 2, 3, 4, 5, 6], ["a", "a", "b", "b", "c", "c"])


def test_data_is_immutable(bodyweight):
    with pytest.raises(ValueError):
        bodyweight.y[0] = 0.0
