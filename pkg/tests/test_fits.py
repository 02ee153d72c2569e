import math

import numpy as np
import pytest

from jumpflight.fits import (BiExponentialFit, FitError, fit_bi_exponential,
                             fit_bi_gaussian, fit_exponential, fit_tanh_sech,
                             lm_least_squares, sech_jacobian, sech_model,
                             tanh_jacobian, tanh_model)

GRID = np.arange(54) * 0.26


def test_tanh_exact_recovery():
    truth = np.array([-0.07, 0.95, -2.27, 1.65])
    z = tanh_model(GRID, truth)
    x = sech_model(GRID, np.array([-0.22, 0.91, -2.05, 1.76]))
    fit = fit_tanh_sech(GRID, z, x)
    assert fit.a == pytest.approx(-0.07, abs=1e-6)
    assert fit.b == pytest.approx(0.95, abs=1e-6)
    assert fit.c == pytest.approx(-2.27, abs=1e-6)
    assert fit.tau == pytest.approx(1.65, abs=1e-6)
    assert fit.a_prime == pytest.approx(-0.22, abs=1e-6)
    assert fit.b_prime == pytest.approx(0.91, abs=1e-6)
    assert fit.c_prime == pytest.approx(-2.05, abs=1e-6)
    assert fit.tau_prime == pytest.approx(1.76, abs=1e-6)
    # zero-residual fit: reported uncertainties collapse
    assert fit.a_err < 1e-6 and fit.tau_err < 1e-6


def test_tanh_fit_with_noise_and_nans():
    rng = np.random.default_rng(3)
    z = tanh_model(GRID, np.array([-0.07, 0.95, -2.27, 1.65])) \
        + rng.normal(0, 0.03, GRID.size)
    x = sech_model(GRID, np.array([0.0, 0.60, -2.05, 1.92])) \
        + rng.normal(0, 0.03, GRID.size)
    z[40] = np.nan
    fit = fit_tanh_sech(GRID, z, x, constrain_a_prime_zero=True)
    assert fit.a_prime == 0.0
    assert fit.tau == pytest.approx(1.65, abs=0.15)
    assert fit.b_prime == pytest.approx(0.60, abs=0.05)
    assert fit.tau_err > 0


def test_zero_crossing_from_fit():
    fit = fit_tanh_sech(GRID, tanh_model(GRID, np.array([-0.07, 0.95, -2.27, 1.65])),
                        sech_model(GRID, np.array([-0.22, 0.91, -2.05, 1.76])))
    t0 = fit.z_zero_crossing()
    assert fit.z_model(np.array([t0]))[0] == pytest.approx(0.0, abs=1e-9)
    assert t0 == pytest.approx((math.atanh(0.07 / 0.95) + 2.27) * 1.65, abs=1e-6)


def test_flat_input_is_degenerate():
    with pytest.raises(FitError):
        fit_tanh_sech(GRID, np.full(GRID.size, 0.5), np.full(GRID.size, 0.1))


def test_too_few_points():
    with pytest.raises(FitError):
        fit_tanh_sech(GRID[:5], np.linspace(-1, 1, 5), np.linspace(0, 1, 5))


def test_analytic_jacobians_match_finite_differences():
    rng = np.random.default_rng(11)
    t = np.linspace(0.0, 12.0, 25)
    for _ in range(20):
        prm = np.array([rng.uniform(-0.5, 0.5), rng.uniform(0.3, 1.2),
                        rng.uniform(-3.0, -0.5), rng.uniform(0.8, 3.0)])
        for model, jac in ((tanh_model, tanh_jacobian),
                           (sech_model, sech_jacobian)):
            analytic = jac(t, prm)
            for k in range(4):
                h = 1e-6 * max(abs(prm[k]), 1.0)
                pp, pm = prm.copy(), prm.copy()
                pp[k] += h
                pm[k] -= h
                fd = (model(t, pp) - model(t, pm)) / (2 * h)
                scale = np.abs(analytic[:, k]).max() + 1e-9
                assert np.abs(analytic[:, k] - fd).max() / scale < 1e-6


def test_local_optimality_probe():
    rng = np.random.default_rng(17)
    z = tanh_model(GRID, np.array([-0.07, 0.95, -2.27, 1.65])) \
        + rng.normal(0, 0.05, GRID.size)
    x = sech_model(GRID, np.array([-0.22, 0.91, -2.05, 1.76])) \
        + rng.normal(0, 0.05, GRID.size)
    fit = fit_tanh_sech(GRID, z, x)
    prm = np.array([fit.a, fit.b, fit.c, fit.tau])
    best = float(((tanh_model(GRID, prm) - z) ** 2).sum())
    for _ in range(100):
        trial = prm * (1.0 + rng.uniform(-1e-3, 1e-3, 4))
        assert ((tanh_model(GRID, trial) - z) ** 2).sum() >= best - 1e-12


def test_lm_reports_nonconvergence():
    # a residual that never improves forces the iteration cap
    def res(x):
        return np.array([1.0 + abs(x[0])])

    def jac(x):
        return np.array([[0.0]])

    x, cov, n = lm_least_squares(res, jac, np.array([1.0]), max_iter=5)
    assert n <= 5


def test_bi_exponential_synthetic_recovery():
    rng = np.random.default_rng(29)
    n = 100_000
    fast = rng.exponential(1.0 / 1.0, int(n * 0.87))
    slow = rng.exponential(1.0 / 0.0325, n - int(n * 0.87))
    samples = np.concatenate([fast, slow])
    fit = fit_bi_exponential(samples, origin=0.0)
    assert not fit.degenerate
    assert abs(fit.rate_fast - 1.0) / 1.0 < 0.05
    assert abs(fit.rate_slow - 0.0325) / 0.0325 < 0.05
    assert fit.weight_fast == pytest.approx(0.87, abs=0.02)
    assert fit.rate_fast_err > 0 and fit.rate_slow_err > 0


def test_bi_exponential_degenerate_single_rate():
    rng = np.random.default_rng(31)
    fit = fit_bi_exponential(rng.exponential(2.0, 20_000), origin=0.0)
    assert fit.degenerate


def test_bi_exponential_scale_equivariance():
    rng = np.random.default_rng(37)
    samples = np.concatenate([rng.exponential(1.0, 5000),
                              rng.exponential(30.0, 1500)])
    f1 = fit_bi_exponential(samples, origin=0.0)
    f2 = fit_bi_exponential(samples * 2.0, origin=0.0)
    # doubling every dwell exactly halves both fitted rates
    assert f2.rate_fast == f1.rate_fast / 2.0
    assert f2.rate_slow == f1.rate_slow / 2.0
    assert f2.weight_fast == f1.weight_fast


def test_bi_exponential_needs_samples():
    with pytest.raises(FitError):
        fit_bi_exponential(np.ones(5))


def test_exponential_mle():
    rng = np.random.default_rng(41)
    tc, err = fit_exponential(rng.exponential(4.2, 50_000))
    assert tc == pytest.approx(4.2, rel=0.02)
    assert err == pytest.approx(tc / math.sqrt(50_000), rel=1e-12)


def test_bi_gaussian_snr_definition():
    rng = np.random.default_rng(43)
    mu, sigma = 1.0, 1.0
    x = np.concatenate([rng.normal(+mu, sigma, 150_000),
                        rng.normal(-mu, sigma, 150_000)])
    fit = fit_bi_gaussian(x)
    # mu/sigma = 1 means SNR = |2 mu / 2 sigma|^2 = 1 by definition
    assert fit.snr == pytest.approx(1.0, abs=0.05)
    assert fit.mean_b > fit.mean_notb


def test_bi_gaussian_rejects_single_state():
    rng = np.random.default_rng(47)
    with pytest.raises(FitError):
        fit_bi_gaussian(rng.normal(0.0, 1.0, 50_000))
