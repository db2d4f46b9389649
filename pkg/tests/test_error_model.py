"""Zero-mean Laplace error model: fitting, intervals, normality test."""

import math

import numpy as np
import pytest
import scipy.stats

from tile360.error_model import (
    ErrorSamples,
    LaplaceParams,
    fit_laplace,
    jarque_bera,
    laplace_cdf,
    laplace_interval_probability,
    read_error_csv,
    sample_laplace,
)


def test_fit_is_mean_absolute_value():
    assert fit_laplace([-2.0, 2.0]).scale == 2.0
    assert fit_laplace([1.0, 2.0, 3.0]).scale == 2.0
    assert fit_laplace(ErrorSamples(np.array([-1.0, 0.0, 2.0]))).scale == 1.0


def test_fit_validation():
    with pytest.raises(ValueError):
        fit_laplace([1.0])
    with pytest.raises(ValueError):
        fit_laplace([0.0, 0.0, 0.0])
    with pytest.raises(ValueError):
        ErrorSamples(np.array([[1.0, 2.0]]))
    with pytest.raises(ValueError):
        ErrorSamples(np.array([1.0, np.nan]))
    with pytest.raises(ValueError):
        LaplaceParams(scale=0.0)
    with pytest.raises(ValueError):
        LaplaceParams(scale=-1.0)


def test_interval_probability_closed_form():
    # P(0 <= X <= 10) for scale 5 is (1 - e^-2) / 2.
    params = LaplaceParams(scale=5.0)
    expected = (1.0 - math.exp(-2.0)) / 2.0
    assert laplace_interval_probability(params, 0.0, 10.0) == pytest.approx(
        expected, abs=1e-15
    )
    assert expected == pytest.approx(0.43233235838169365, abs=1e-15)
    # Symmetry and total mass.
    assert laplace_interval_probability(params, -10.0, 0.0) == pytest.approx(
        expected, abs=1e-15
    )
    assert laplace_interval_probability(params, -1e9, 1e9) == 1.0
    assert laplace_interval_probability(params, 3.0, 3.0) == 0.0
    with pytest.raises(ValueError):
        laplace_interval_probability(params, 1.0, 0.0)


def test_cdf_matches_scipy():
    params = LaplaceParams(scale=3.7)
    for x in (-12.0, -1.0, 0.0, 0.4, 25.0):
        assert laplace_cdf(params, x) == pytest.approx(
            scipy.stats.laplace.cdf(x, scale=3.7), abs=1e-15
        )


def test_jarque_bera_matches_scipy():
    rng = np.random.default_rng(3)
    gauss = rng.normal(0.0, 5.0, 50_000)
    stat, rejected = jarque_bera(gauss)
    assert stat == pytest.approx(scipy.stats.jarque_bera(gauss).statistic, rel=1e-9)
    assert not rejected
    heavy = sample_laplace(LaplaceParams(5.0), 50_000, rng)
    stat, rejected = jarque_bera(heavy)
    assert stat == pytest.approx(scipy.stats.jarque_bera(heavy).statistic, rel=1e-9)
    assert rejected
    with pytest.raises(ValueError):
        jarque_bera(np.zeros(10))
    with pytest.raises(ValueError):
        jarque_bera(np.arange(5.0))


def test_sampler_round_trip():
    # Inverse-CDF draws should recover the scale by maximum likelihood.
    params = LaplaceParams(scale=7.5)
    for seed in range(5):
        rng = np.random.default_rng(seed)
        draws = sample_laplace(params, 200_000, rng)
        fitted = fit_laplace(draws)
        assert fitted.scale == pytest.approx(7.5, rel=0.02)
    # Deterministic under a fixed seed.
    a = sample_laplace(params, 100, np.random.default_rng(11))
    b = sample_laplace(params, 100, np.random.default_rng(11))
    assert np.array_equal(a, b)


def test_read_error_csv(tmp_path):
    path = tmp_path / "errors.csv"
    path.write_text("1.5\n-0.25\n3.0\n")
    samples = read_error_csv(path)
    assert isinstance(samples, ErrorSamples)
    assert len(samples) == 3
    assert samples.values.tolist() == [1.5, -0.25, 3.0]
