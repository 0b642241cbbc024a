from __future__ import annotations

import math

import numpy as np
import pytest
from scipy import stats

from hetancova import (
    AncovaData,
    TestResult,
    classical_ancova_test,
    classical_covariate_test,
    covariate_test,
    fit,
    normal_approx_test,
    pooled_plain_test,
    welch_cov_test,
    welch_plain_test,
)
from hetancova.numerics import t_quantile
from hetancova.variance import estimate_variances

from .conftest import random_data

CLOSED = [welch_cov_test, normal_approx_test, classical_ancova_test]


def test_bodyweight_tkappa(bodyweight):
    r = welch_cov_test(bodyweight)
    assert r.effect == pytest.approx(-4.70, abs=0.01)
    assert r.se == pytest.approx(2.43, abs=0.01)
    assert r.statistic == pytest.approx(-1.94, abs=0.01)
    assert r.df == pytest.approx(14.95, abs=0.01)
    assert r.p_value == pytest.approx(0.072, abs=0.001)
    assert (r.ci_lower, r.ci_upper) == pytest.approx((-9.88, 0.47), abs=0.01)
    assert r.method == "welch_satterthwaite_cov"


def test_bodyweight_classical(bodyweight):
    r = classical_ancova_test(bodyweight)
    assert r.df == 49
    assert r.se == pytest.approx(2.11, abs=0.01)
    assert r.statistic == pytest.approx(-2.23, abs=0.01)
    assert r.p_value == pytest.approx(0.031, abs=0.001)
    assert (r.ci_lower, r.ci_upper) == pytest.approx((-8.95, -0.46), abs=0.01)


def test_bodyweight_normal_is_more_liberal(bodyweight):
    t, z = welch_cov_test(bodyweight), normal_approx_test(bodyweight)
    assert z.statistic == t.statistic
    assert z.df == math.inf and z.to_dict()["df"] == "asymptotic"
    assert z.p_value < t.p_value


def test_bodyweight_slope_rejected(bodyweight):
    for fn in (covariate_test, classical_covariate_test):
        r = fn(bodyweight, 1)
        assert r.effect == pytest.approx(1.276, abs=5e-4)
        assert r.p_value < 0.05 and r.rejects
        assert r.parameter == "p1"


def test_bodyweight_plain_tests(baseline, bodyweight):
    week4 = bodyweight.y
    assert welch_plain_test(baseline.y[:13], baseline.y[13:]).p_value == pytest.approx(0.7759,
                                                                                        abs=5e-4)
    assert welch_plain_test(week4[:13], week4[13:]).p_value == pytest.approx(0.4648, abs=5e-4)
    assert pooled_plain_test(baseline.y[:13], baseline.y[13:]).p_value == pytest.approx(0.7704,
                                                                                         abs=1e-3)
    assert pooled_plain_test(week4[:13], week4[13:]).p_value == pytest.approx(0.499, abs=1e-3)


def test_plain_tests_match_scipy(rng):
    a, b = rng.normal(0, 1, 9), rng.normal(0.5, 2, 14)
    w = welch_plain_test(a, b)
    ref = stats.ttest_ind(a, b, equal_var=False)
    assert w.statistic == pytest.approx(ref.statistic, rel=1e-12)
    assert w.p_value == pytest.approx(ref.pvalue, rel=1e-9)
    p = pooled_plain_test(a, b)
    ref = stats.ttest_ind(a, b, equal_var=True)
    assert p.statistic == pytest.approx(ref.statistic, rel=1e-12)
    assert p.p_value == pytest.approx(ref.pvalue, rel=1e-9)


def test_l0_reduction_to_welch(rng):
    for _ in range(20):
        d = random_data(rng, n1=int(rng.integers(2, 15)), n2=int(rng.integers(2, 15)), L=0)
        a = welch_cov_test(d)
        b = welch_plain_test(d.y[: d.n1], d.y[d.n1 :])
        assert abs(a.statistic - b.statistic) < 1e-10
        assert abs(a.df - b.df) < 1e-10 * max(1.0, b.df)
        assert abs(a.p_value - b.p_value) < 1e-10


def test_identical_groups():
    M = np.array([1.0, 2.5, 3.0, 4.2, 1.0, 2.5, 3.0, 4.2])[:, None]
    y = np.array([2.0, 3.1, 2.7, 5.0] * 2)
    d = AncovaData(y, np.repeat([1, 2], 4), M)
    for fn in CLOSED:
        r = fn(d)
        assert r.effect == pytest.approx(0.0, abs=1e-12)
        assert r.statistic == pytest.approx(0.0, abs=1e-10)
        assert r.p_value == pytest.approx(1.0, abs=1e-9)
    w = welch_plain_test(y[:4], y[4:])
    assert w.statistic == 0.0


def test_slope_zero_statistic():
    M = np.array([1.0, 2.0, 3.0, 4.0, 1.0, 2.0, 3.0, 5.0])[:, None]
    # noise-free group constants: slope estimate and SE vanish up to rounding
    d = AncovaData(np.repeat([2.0, 5.0], 4), np.repeat([1, 2], 4), M)
    r = covariate_test(d, 1)
    assert abs(r.effect) < 1e-12 and abs(r.statistic) < 1e-6
    # responses orthogonal to the centered covariate within each group
    y = np.array([1.0, 2.0, 2.0, 1.0, 5.0, 6.0, 6.0, 5.0])
    M2 = np.array([1.0, 2.0, 3.0, 4.0] * 2)[:, None]
    r = covariate_test(AncovaData(y, np.repeat([1, 2], 4), M2), 1)
    assert r.effect == pytest.approx(0.0, abs=1e-12)
    assert r.statistic == pytest.approx(0.0, abs=1e-10)


def test_slope_test_matches_simple_regression():
    # symmetric design with equal group variance estimates reduces to the OLS t-test
    x = np.array([-1.5, -0.5, 0.5, 1.5] * 2)
    e = np.array([0.3, -0.4, -0.2, 0.3, 0.3, -0.4, -0.2, 0.3])
    y = np.repeat([1.0, 2.0], 4) + 0.8 * x + e
    d = AncovaData(y, np.repeat([1, 2], 4), x[:, None])
    r = covariate_test(d, 1)
    Xt = fit(d).Xt
    res = y - Xt @ np.linalg.lstsq(Xt, y, rcond=None)[0]
    s2 = res @ res / (8 - 3)
    se = math.sqrt(s2 * np.linalg.inv(Xt.T @ Xt)[2, 2])
    c = classical_covariate_test(d, 1)
    assert c.se == pytest.approx(se, rel=1e-12)
    assert r.effect == pytest.approx(c.effect, rel=1e-12)


def test_covariate_index_checked(bodyweight):
    with pytest.raises(IndexError):
        covariate_test(bodyweight, 2)
    with pytest.raises(IndexError):
        covariate_test(bodyweight, 0)


@pytest.mark.parametrize("alpha", [0.01, 0.05, 0.2])
def test_duality_and_ci_structure(rng, alpha):
    for _ in range(15):
        d = random_data(rng)
        for r in [fn(d, alpha) for fn in CLOSED] + [covariate_test(d, 2, alpha)]:
            assert r.ci_lower <= r.ci_upper
            assert r.ci_lower == r.effect - r.critical * r.se
            assert r.ci_upper == r.effect + r.critical * r.se
            excluded = not (r.ci_lower < r.null_value < r.ci_upper)
            assert r.rejects == excluded
            assert (r.p_value <= alpha) == r.rejects or abs(abs(r.statistic) - r.critical) < 1e-8
            if r.df is not None and not math.isinf(r.df):
                assert r.critical == pytest.approx(t_quantile(1 - alpha / 2, r.df), rel=1e-12)


def test_null_value_shifts_statistic(bodyweight):
    r = welch_cov_test(bodyweight, null_value=-4.703918615687627)
    assert r.statistic == pytest.approx(0.0, abs=1e-12)
    assert r.p_value == pytest.approx(1.0, abs=1e-12)
    assert not r.rejects


def test_scale_equivariance(rng):
    d = random_data(rng)
    scaled = d.with_response(3.5 * d.y)
    for fn in CLOSED:
        a, b = fn(d), fn(scaled)
        assert b.effect == pytest.approx(3.5 * a.effect, rel=1e-10)
        assert b.se == pytest.approx(3.5 * a.se, rel=1e-10)
        assert b.statistic == pytest.approx(a.statistic, rel=1e-10)
        assert b.df == pytest.approx(a.df, rel=1e-10)
        assert b.p_value == pytest.approx(a.p_value, rel=1e-9)


def test_covariate_shift_invariance(rng):
    d = random_data(rng)
    shifted = AncovaData(d.y, d.group, d.M + np.array([10.0, -4.0]))
    assert not np.allclose(fit(d).b_hat, fit(shifted).b_hat)
    for fn in CLOSED:
        a, b = fn(d), fn(shifted)
        assert b.effect == pytest.approx(a.effect, abs=1e-9)
        assert b.statistic == pytest.approx(a.statistic, rel=1e-9)
        assert b.df == pytest.approx(a.df, rel=1e-9)
        assert b.p_value == pytest.approx(a.p_value, rel=1e-8, abs=1e-14)


def test_kappa_bounds(rng):
    for _ in range(50):
        d = random_data(rng, n1=int(rng.integers(5, 20)), n2=int(rng.integers(5, 20)),
                        L=int(rng.integers(0, 3)), s1=rng.uniform(0.2, 3), s2=rng.uniform(0.2, 3))
        v = estimate_variances(fit(d))
        k = welch_cov_test(d).df
        assert min(v.df1, v.df2) - 1e-9 <= k <= v.df1 + v.df2 + 1e-9


def test_normal_p_never_exceeds_tkappa(rng):
    for _ in range(30):
        d = random_data(rng)
        assert normal_approx_test(d).p_value <= welch_cov_test(d).p_value


def test_large_samples_normal_agrees(rng):
    d = random_data(rng, n1=500, n2=500, L=2)
    assert abs(normal_approx_test(d).p_value - welch_cov_test(d).p_value) < 0.002


def test_result_round_trip(bodyweight):
    import json

    for fn in CLOSED:
        r = fn(bodyweight)
        back = TestResult.from_dict(json.loads(json.dumps(r.to_dict())))
        assert back == r


def test_invalid_alpha(bodyweight):
    with pytest.raises(ValueError):
        welch_cov_test(bodyweight, alpha=1.0)
    with pytest.raises(ValueError):
        welch_plain_test([1.0], [2.0, 3.0])


def test_classical_size_homoscedastic(rng):
    from hetancova.simulation import paper_setting, type1_study

    res = type1_study([paper_setting(1, nsim=4000, seed=11)], ["classical"])
    assert abs(res.rate(method="classical_ancova") - 0.05) < 2.576 * math.sqrt(0.0475 / 4000)
