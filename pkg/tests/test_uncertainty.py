import numpy as np
import pytest

from lhspline.binning import LogHistogram
from lhspline.errors import NumericalError
from lhspline.fit import irls_fit, select_lambda, lambda_adjust
from lhspline.spline import penalty_matrix
from lhspline.uncertainty import (Smoother, _draw_errors, affine_basis,
                                  conditional_simulate, evaluate, interval)


def small_hist(counts):
    counts = np.asarray(counts)
    breaks = np.linspace(0.0, 2.0, counts.size + 1)
    return LogHistogram(breaks=breaks, counts=counts,
                        knots=0.5 * (breaks[:-1] + breaks[1:]), n_total=int(counts.sum()),
                        bin_width=breaks[1] - breaks[0], extension_factor=1.0)


@pytest.fixture(scope="module")
def small_fit():
    return irls_fit(small_hist([3, 9, 20, 31, 28, 17, 8, 2]), 0.05, tol=1e-12)


@pytest.fixture(scope="module")
def adjusted(egpd_hist):
    return lambda_adjust(select_lambda(egpd_hist), 0.05)


def test_affine_basis_orthonormal():
    b = affine_basis(np.linspace(-3, 7, 12))
    np.testing.assert_allclose(b.T @ b, np.eye(2), atol=1e-14)


def test_smoother_is_linear_and_reproduces_affine(small_fit):
    s = Smoother.from_fit(small_fit)
    t = small_fit.hist.knots
    line = 2.0 - 0.7 * t
    np.testing.assert_allclose(s(line), line, atol=1e-12)
    a = np.sin(t)
    b = np.cos(3 * t)
    np.testing.assert_allclose(s(a + 2 * b), s(a) + 2 * s(b), atol=1e-12)


def test_posterior_cov_is_inverse_precision(small_fit):
    s = Smoother.from_fit(small_fit)
    gamma = 2 * small_fit.lam * penalty_matrix(small_fit.hist.knots).matrix
    a = np.diag(small_fit.weights) + gamma
    np.testing.assert_allclose(s.posterior_cov() @ a, np.eye(8), atol=1e-9)


def test_error_covariance_matches_posterior(small_fit):
    # e = g* - S u* has covariance (W + Gamma)^{-1}; check the variances
    # against their Monte Carlo standard errors (var of var ~ 2 sigma^4 / M).
    s = Smoother.from_fit(small_fit)
    M = 8000
    e = _draw_errors(s, 0, M, seed=11)
    target = np.diag(s.posterior_cov())
    got = e.var(axis=1)
    se = target * np.sqrt(2.0 / M)
    assert np.all(np.abs(got - target) < 4 * se)
    assert np.all(np.abs(e.mean(axis=1)) < 4 * np.sqrt(target / M))


def test_draws_are_seeded(small_fit):
    a = conditional_simulate(small_fit, M=100, seed=4)
    b = conditional_simulate(small_fit, M=100, seed=4)
    c = conditional_simulate(small_fit, M=100, seed=5)
    np.testing.assert_array_equal(a.draws, b.draws)
    assert not np.array_equal(a.draws, c.draws)
    # draw m depends only on (seed, m), so a longer run extends a shorter one
    d = conditional_simulate(small_fit, M=150, seed=4)
    np.testing.assert_array_equal(d.draws[:100], a.draws)


def test_too_few_draws_rejected(small_fit):
    with pytest.raises(ValueError):
        conditional_simulate(small_fit, M=99)


def test_validity_guard(small_fit):
    ens = conditional_simulate(small_fit, M=100, seed=1)
    base = ens.base_fit
    ens.__dict__["densities"] = [None] * 21 + [base] * 79
    with pytest.raises(NumericalError, match="79 of 100"):
        interval(ens, ("quantile", 0.5))
    ens.__dict__["densities"] = [None] * 20 + [base] * 80
    lo, hi = interval(ens, ("quantile", 0.5))
    assert lo == hi == base.quantile(0.5)


def test_quota_mode_yields_valid_draws(adjusted):
    ens = conditional_simulate(adjusted, M=120, seed=2, valid_quota=True)
    assert ens.n_valid == 120 == len(ens.draws)
    assert ens.n_drawn >= 120
    assert 0 < ens.acceptance_rate <= 1


def test_interval_brackets_point_estimate(adjusted):
    ens = conditional_simulate(adjusted, M=200, seed=3, valid_quota=True)
    base = ens.base_fit
    for f in (("return_level", 50.0), ("quantile", 0.9), ("return_period", 150.0)):
        lo, hi = interval(ens, f)
        est = evaluate(base, f)
        assert lo < est < hi
    lo, hi = interval(ens, ("return_level", np.array([25.0, 50.0, 100.0])))
    assert lo.shape == (3,) and np.all(np.diff(lo) > 0) and np.all(hi > lo)
    narrow = interval(ens, ("quantile", 0.9), level=0.5)
    wide = interval(ens, ("quantile", 0.9), level=0.95)
    assert wide[0] <= narrow[0] and narrow[1] <= wide[1]


def test_callable_and_unknown_functionals(adjusted):
    base = conditional_simulate(adjusted, M=100, seed=0).base_fit
    assert evaluate(base, lambda d: d.quantile(0.5)) == base.quantile(0.5)
    with pytest.raises(ValueError):
        evaluate(base, ("mean", None))


def test_ensemble_csv(small_fit):
    ens = conditional_simulate(small_fit, M=100, seed=0)
    lines = ens.to_csv().splitlines()
    assert len(lines) == 101
    assert len(lines[1].split(",")) == 9
