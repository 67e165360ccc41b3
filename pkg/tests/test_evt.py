import math

import numpy as np
import pytest
from scipy import optimize, stats

from lhspline import evt
from lhspline.errors import DataError
from lhspline.evt import (DEFAULT_PRIOR, GammaPrior, egpd1_fit, egpd_cdf, egpd_isf,
                          egpd_logpdf, egpd_pdf, egpd_quantile, egpd_sf, egpd_simulate,
                          gamma_fit, gev_cdf, gev_fit, gev_quantile, gpd_cdf, gpd_fit,
                          gpd_isf, gpd_logpdf, gpd_sf, mean_residual_life,
                          return_period_delta, rl_interval_delta, rl_interval_profile,
                          shape_stability)

KAPPA, SIGMA, XI = 0.8, 8.5, 0.2


# --- distribution functions against scipy --------------------------------

@pytest.mark.parametrize("xi", [-0.3, 0.0, 1e-10, 0.2, 0.9])
def test_gpd_matches_scipy(xi):
    ref = stats.genpareto(xi, scale=2.5)
    x = ref.ppf(np.linspace(0.01, 0.99, 25))
    np.testing.assert_allclose(gpd_logpdf(x, 2.5, xi), ref.logpdf(x), rtol=1e-7, atol=1e-12)
    np.testing.assert_allclose(gpd_sf(x, 2.5, xi), ref.sf(x), rtol=1e-7)
    np.testing.assert_allclose(gpd_cdf(x, 2.5, xi), ref.cdf(x), rtol=1e-7)
    q = np.array([0.5, 1e-3, 1e-8])
    np.testing.assert_allclose(gpd_isf(q, 2.5, xi), ref.isf(q), rtol=1e-7)


@pytest.mark.parametrize("xi", [-0.2, 0.0, 0.15])
def test_gev_matches_scipy(xi):
    ref = stats.genextreme(-xi, loc=30.0, scale=7.0)
    p = np.array([0.05, 0.5, 0.96, 0.99])
    np.testing.assert_allclose(gev_quantile(p, 30.0, 7.0, xi), ref.ppf(p), rtol=1e-9)
    np.testing.assert_allclose(gev_cdf(ref.ppf(p), 30.0, 7.0, xi), p, rtol=1e-9)


def test_egpd_is_power_of_gpd():
    y = np.array([0.01, 0.5, 3.0, 40.0, 900.0])
    h = stats.genpareto.cdf(y, XI, scale=SIGMA)
    np.testing.assert_allclose(egpd_cdf(y, KAPPA, SIGMA, XI), h ** KAPPA, rtol=1e-12)
    np.testing.assert_allclose(egpd_sf(y, KAPPA, SIGMA, XI), 1 - h ** KAPPA, rtol=1e-9)


def test_egpd_kappa_one_is_gpd():
    y = np.linspace(0.1, 80, 30)
    np.testing.assert_allclose(egpd_logpdf(y, 1.0, SIGMA, XI), gpd_logpdf(y, SIGMA, XI),
                               rtol=1e-13)
    np.testing.assert_allclose(egpd_sf(y, 1.0, SIGMA, XI), gpd_sf(y, SIGMA, XI), rtol=1e-13)


def test_egpd_pdf_is_derivative_of_cdf():
    y = np.array([0.2, 1.0, 7.0, 50.0])
    step = 1e-6 * y
    num = (egpd_cdf(y + step, KAPPA, SIGMA, XI) - egpd_cdf(y - step, KAPPA, SIGMA, XI)) / (2 * step)
    np.testing.assert_allclose(egpd_pdf(y, KAPPA, SIGMA, XI), num, rtol=1e-6)
    np.testing.assert_allclose(np.exp(egpd_logpdf(y, KAPPA, SIGMA, XI)),
                               egpd_pdf(y, KAPPA, SIGMA, XI), rtol=1e-13)


def test_egpd_quantile_against_bisection():
    for p in (0.001, 0.3, 0.9, 0.999):
        ref = optimize.bisect(lambda y: egpd_cdf(y, KAPPA, SIGMA, XI) - p, 1e-12, 1e5,
                              xtol=1e-13, rtol=1e-15, maxiter=400)
        assert egpd_quantile(p, KAPPA, SIGMA, XI) == pytest.approx(ref, rel=1e-8)
    assert egpd_quantile(0.0, KAPPA, SIGMA, XI) == 0.0
    q = np.array([1e-3, 1e-6, 1e-9])
    np.testing.assert_allclose(egpd_sf(egpd_isf(q, KAPPA, SIGMA, XI), KAPPA, SIGMA, XI), q,
                               rtol=1e-9)
    for bad in (-0.1, 1.0):
        with pytest.raises(ValueError):
            egpd_quantile(bad, KAPPA, SIGMA, XI)


def test_egpd_simulate_distribution():
    y = egpd_simulate(20000, KAPPA, SIGMA, XI, np.random.default_rng(1))
    res = stats.kstest(y, lambda v: egpd_cdf(v, KAPPA, SIGMA, XI))
    assert res.pvalue > 0.001


# --- likelihood gradients --------------------------------------------------

@pytest.mark.parametrize("family,theta,data", [
    ("GPD", np.array([3.0, 0.15]), stats.genpareto.rvs(0.2, scale=3, size=300, random_state=1)),
    ("GPD", np.array([3.0, 1e-10]), stats.genpareto.rvs(0.2, scale=3, size=300, random_state=1)),
    ("GEV", np.array([40.0, 9.0, 0.1]),
     stats.genextreme.rvs(-0.1, loc=40, scale=9, size=200, random_state=2)),
    ("EGPD1", np.array([0.8, 8.0, 0.2]), egpd_simulate(300, 0.8, 8.5, 0.2,
                                                       np.random.default_rng(3))),
    ("Gamma", np.array([0.7, 0.1]), stats.gamma.rvs(0.7, scale=10, size=300, random_state=4)),
])
def test_analytic_gradient(family, theta, data):
    fn = evt._LOGLIK[family]
    _, grad = fn(theta, data)
    num = np.empty_like(theta)
    for i in range(theta.size):
        step = 1e-6 * max(abs(theta[i]), 1e-2)
        tp, tm = theta.copy(), theta.copy()
        tp[i] += step
        tm[i] -= step
        num[i] = (fn(tp, data)[0] - fn(tm, data)[0]) / (2 * step)
    np.testing.assert_allclose(grad, num, rtol=1e-5, atol=1e-5)


def test_prior_density():
    p = GammaPrior(2.0, 10.0)
    for xi in (0.05, 0.2, 0.7):
        assert p.logpdf(xi) == pytest.approx(stats.gamma.logpdf(xi, 2.0, scale=0.1))
    assert p.logpdf(-0.1) == -np.inf


# --- fits -----------------------------------------------------------------

def test_gpd_fit_recovers_parameters():
    x = stats.genpareto.rvs(0.2, scale=5.0, size=100_000, random_state=10)
    f = gpd_fit(x + 20.0, 20.0)
    assert abs(f.params["sigma"] - 5.0) < 3 * f.se[0]
    assert abs(f.params["xi"] - 0.2) < 3 * f.se[1]
    # loglik at the MLE beats random nearby points
    rng = np.random.default_rng(0)
    for _ in range(200):
        theta = f.theta * (1 + 0.01 * rng.standard_normal(2))
        assert evt._gpd_loglik(theta, x)[0] <= f.loglik + 1e-9


def test_gpd_fit_matches_scipy_mle():
    x = stats.genpareto.rvs(0.1, scale=2.0, size=2000, random_state=11)
    f = gpd_fit(x, 0.0)
    c, _, scale = stats.genpareto.fit(x, floc=0)
    ll_ref = stats.genpareto.logpdf(x, c, scale=scale).sum()
    assert f.loglik >= ll_ref - 1e-6


def test_concentrated_prior_pulls_xi():
    x = stats.genpareto.rvs(0.4, scale=5.0, size=200, random_state=12)
    tight = GammaPrior(shape=4000.0, rate=20000.0)  # mean 0.2, sd about 0.003
    f = gpd_fit(x, 0.0, prior=tight)
    assert f.params["xi"] == pytest.approx(0.2, abs=0.02)
    free = gpd_fit(x, 0.0)
    assert abs(free.params["xi"] - 0.2) > abs(f.params["xi"] - 0.2)


def test_gev_fit_recovers_parameters():
    y = stats.genextreme.rvs(-0.1, loc=50, scale=12, size=3000, random_state=13)
    f = gev_fit(y)
    for name, true in (("mu", 50.0), ("sigma", 12.0), ("xi", 0.1)):
        i = evt._NAMES["GEV"].index(name)
        assert abs(f.params[name] - true) < 3 * f.se[i]


def test_gev_degenerate_and_short_input():
    with pytest.raises(DataError, match="degenerate"):
        gev_fit(np.full(30, 12.0))
    with pytest.raises(DataError):
        gev_fit(np.arange(5.0))


def test_egpd_fit_recovers_parameters():
    y = egpd_simulate(20000, KAPPA, SIGMA, XI, np.random.default_rng(14))
    f = egpd1_fit(y)
    for i, true in enumerate((KAPPA, SIGMA, XI)):
        assert abs(f.theta[i] - true) < 3 * f.se[i]


def test_egpd_shift_handles_truncated_data():
    y = egpd_simulate(20000, KAPPA, SIGMA, XI, np.random.default_rng(15))
    f = egpd1_fit(y[y > 1.0], shift=1.0)
    assert f.quantile(0.0) == 1.0
    assert f.return_level(10) > 1.0


def test_gamma_fit_matches_scipy():
    y = stats.gamma.rvs(0.6, scale=12.0, size=5000, random_state=16)
    f = gamma_fit(y)
    a, _, scale = stats.gamma.fit(y, floc=0)
    assert f.params["shape"] == pytest.approx(a, rel=1e-4)
    assert f.params["rate"] == pytest.approx(1 / scale, rel=1e-4)
    assert abs(f.params["shape"] - 0.6) < 3 * f.se[0]


def test_return_levels_and_periods_invert():
    x = stats.genpareto.rvs(0.2, scale=5.0, size=3000, random_state=17)
    f = gpd_fit(x + 10, 10.0, exceed_rate=0.05)
    T = np.array([2.0, 25.0, 100.0])
    np.testing.assert_allclose(f.return_period(f.return_level(T)), T, rtol=1e-10)
    # by hand: the level exceeded once per T * 365 * rate exceedances
    q = 1 / (100 * 365 * 0.05)
    assert f.return_level(100) == pytest.approx(10 + gpd_isf(q, f.params["sigma"],
                                                               f.params["xi"]))


def test_block_maxima():
    v = np.arange(365 * 3 + 10, dtype=float)
    np.testing.assert_array_equal(evt.block_maxima(v), [364, 729, 1094])


# --- intervals ------------------------------------------------------------

@pytest.fixture(scope="module")
def gpd_small():
    x = stats.genpareto.rvs(0.2, scale=5.0, size=400, random_state=18)
    return gpd_fit(x + 20, 20.0, exceed_rate=0.05)


def test_delta_interval_shrinks_with_level(gpd_small):
    r = float(gpd_small.return_level(50))
    lo, hi = rl_interval_delta(gpd_small, 50, level=1e-12)
    assert lo == pytest.approx(r) and hi == pytest.approx(r)
    a = rl_interval_delta(gpd_small, 50, level=0.5)
    b = rl_interval_delta(gpd_small, 50, level=0.9)
    assert b[0] < a[0] < r < a[1] < b[1]
    # symmetric by construction
    assert r - b[0] == pytest.approx(b[1] - r)


def test_delta_interval_by_hand(gpd_small):
    sigma, xi = gpd_small.theta
    m = 50 * 365 * 0.05
    r = lambda s, x: 20 + s / x * (m ** x - 1)  # noqa: E731
    g = np.array([(r(sigma * (1 + 1e-7), xi) - r(sigma * (1 - 1e-7), xi)) / (2e-7 * sigma),
                  (r(sigma, xi + 1e-7) - r(sigma, xi - 1e-7)) / 2e-7])
    se = math.sqrt(g @ gpd_small.cov @ g)
    lo, hi = rl_interval_delta(gpd_small, 50, level=0.9)
    assert hi - lo == pytest.approx(2 * stats.norm.ppf(0.95) * se, rel=1e-5)


def test_profile_interval_is_asymmetric(gpd_small):
    r = float(gpd_small.return_level(100))
    lo, hi = rl_interval_profile(gpd_small, 100, level=0.9)
    assert lo < r < hi
    assert hi - r > r - lo  # right skew for a heavy tail
    # endpoints sit on the chi-square cutoff
    m = 100 * 365 * 0.05
    drop = 0.5 * stats.chi2.ppf(0.9, 1)
    for end in (lo, hi):
        assert evt._profile_gpd(gpd_small, end, m) == pytest.approx(gpd_small.loglik - drop,
                                                                    abs=1e-5)
    assert rl_interval_profile(gpd_small, 100, level=1e-14) == (r, r)


def test_gev_profile_interval():
    y = stats.genextreme.rvs(-0.1, loc=50, scale=12, size=60, random_state=19)
    f = gev_fit(y, prior=DEFAULT_PRIOR)
    r = float(f.return_level(50))
    lo, hi = rl_interval_profile(f, 50)
    assert lo < r < hi


def test_return_period_delta(gpd_small):
    y = float(gpd_small.return_level(30))
    est, lo, hi = return_period_delta(gpd_small, y)
    assert est == pytest.approx(30)
    assert lo < 30 < hi
    assert math.log(hi / est) == pytest.approx(math.log(est / lo))


# --- diagnostics ----------------------------------------------------------

def test_mean_residual_life_flat_for_exponential():
    y = np.random.default_rng(20).exponential(4.0, 200_000)
    mrl = mean_residual_life(y, np.linspace(0, 12, 7))
    np.testing.assert_allclose(mrl.estimate, 4.0, rtol=0.05)
    assert np.all((mrl.lo < 4.0) | (np.abs(mrl.estimate - 4.0) < 0.2))


def test_mean_residual_life_slope_for_gpd():
    # mean excess of a GPD is linear in u with slope xi / (1 - xi)
    xi = 0.2
    y = stats.genpareto.rvs(xi, scale=3.0, size=400_000, random_state=21)
    u = np.linspace(0, 6, 7)
    mrl = mean_residual_life(y, u)
    slope = np.polyfit(mrl.u, mrl.estimate, 1)[0]
    assert slope == pytest.approx(xi / (1 - xi), abs=0.03)


def test_shape_stability_and_dropped_thresholds():
    y = stats.genpareto.rvs(0.2, scale=3.0, size=20_000, random_state=22)
    s = shape_stability(y, [0.0, 2.0, 5.0, 500.0])
    assert s.dropped == (500.0,)
    assert np.all(s.lo < 0.2) and np.all(s.hi > 0.2)
    lines = s.to_csv().splitlines()
    assert lines[0] == "u,n_exceed,xi,lo,hi" and len(lines) == 4
