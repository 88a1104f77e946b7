import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from onlineclust.gaussian import (
    GaussianComponent,
    NumericalDegeneracyError,
    SPDError,
    default_lambda,
    ellipsoid_volume,
    empirical_component,
    gaussian_logpdf,
    log_ellipsoid_volume,
    log_volume_ratio,
    mahalanobis,
    merged_moments,
    regularize_covariance,
    volume_ratio_det,
)

from conftest import random_spd

# chi2 quantiles obtained by root-finding the regularised incomplete gamma
# function at 40 significant digits
PI_CHI2_95_D2 = 18.822741005438134
LOG_VOLUME_D16_IDENTITY = 26.788081660275644


def test_mahalanobis_identity_is_euclidean():
    I = np.eye(2)
    assert mahalanobis([0, 0], I, [3, 4], I) == pytest.approx(5.0, abs=1e-12)


def test_mahalanobis_zero_for_equal_means(rng):
    c1, c2 = random_spd(rng, 3), random_spd(rng, 3)
    mu = rng.standard_normal(3)
    assert mahalanobis(mu, c1, mu, c2) == 0.0


def test_mahalanobis_uses_inverse():
    S = 4 * np.eye(2)
    assert mahalanobis([0, 0], S, [3, 4], S) == pytest.approx(2.5, abs=1e-12)


def test_mahalanobis_matches_explicit_inverse(rng):
    for _ in range(20):
        d = int(rng.integers(1, 8))
        c1, c2 = random_spd(rng, d), random_spd(rng, d)
        a, b = rng.standard_normal(d), rng.standard_normal(d)
        diff = a - b
        expected = math.sqrt(diff @ np.linalg.inv((c1 + c2) / 2) @ diff)
        assert mahalanobis(a, c1, b, c2) == pytest.approx(expected, rel=1e-10)


def test_mahalanobis_flags_near_singular():
    S = np.diag([1.0, 1e-14])
    with pytest.raises(NumericalDegeneracyError):
        mahalanobis([0, 0], S, [1, 1], S)


def test_mahalanobis_dimension_mismatch():
    with pytest.raises(ValueError):
        mahalanobis([0, 0], np.eye(2), [0, 0, 0], np.eye(3))


@given(st.integers(0, 2**32 - 1), st.integers(1, 6))
def test_mahalanobis_symmetric(seed, d):
    rng = np.random.default_rng(seed)
    c1, c2 = random_spd(rng, d), random_spd(rng, d)
    a, b = rng.standard_normal(d), rng.standard_normal(d)
    assert mahalanobis(a, c1, b, c2) == pytest.approx(mahalanobis(b, c2, a, c1), rel=1e-12)
    assert mahalanobis(a, c1, b, c2) > 0


def test_volume_d2_identity():
    assert ellipsoid_volume(np.eye(2)) == pytest.approx(PI_CHI2_95_D2, rel=1e-12)


def test_volume_scaling_ratio_is_4():
    assert ellipsoid_volume(4 * np.eye(2)) / ellipsoid_volume(np.eye(2)) == pytest.approx(4.0, rel=1e-12)


def test_log_volume_d16_identity():
    assert log_ellipsoid_volume(np.eye(16)) == pytest.approx(LOG_VOLUME_D16_IDENTITY, abs=1e-10)


def test_volume_rejects_non_spd():
    with pytest.raises(SPDError):
        log_ellipsoid_volume(np.diag([1.0, -1.0]))


@given(st.integers(0, 2**32 - 1), st.sampled_from([1, 2, 5, 16]))
def test_volume_ratio_paths_agree(seed, d):
    rng = np.random.default_rng(seed)
    c1 = empirical_component(rng.standard_normal((40, d)) * rng.uniform(0.1, 10))
    c2 = empirical_component(rng.standard_normal((40, d)) + rng.standard_normal(d))
    m = merged_moments(c1, c2)
    r1 = math.exp(log_volume_ratio(m.cov, c1.cov, c2.cov))
    assert r1 == pytest.approx(volume_ratio_det(m.cov, c1.cov, c2.cov), rel=1e-9)


def test_merged_moments_1d():
    c1 = GaussianComponent(0.5, np.array([0.0]), np.array([[1.0]]), 3)
    c2 = GaussianComponent(0.5, np.array([2.0]), np.array([[1.0]]), 4)
    m = merged_moments(c1, c2)
    assert m.mean[0] == pytest.approx(1.0)
    assert m.cov[0, 0] == pytest.approx(2.0)
    assert m.weight == 1.0 and m.count == 7


def test_merged_moments_identical(rng):
    c = GaussianComponent(0.3, rng.standard_normal(4), random_spd(rng, 4), 5)
    m = merged_moments(c, c)
    np.testing.assert_allclose(m.mean, c.mean, atol=1e-14)
    np.testing.assert_allclose(m.cov, c.cov, atol=1e-14)
    assert m.weight == pytest.approx(0.6)


def _pooled(a, b):
    # brute force: population moments over the concatenated samples
    x = np.vstack([a, b])
    mu = x.mean(axis=0)
    return mu, (x - mu).T @ (x - mu) / x.shape[0]


def _moment_component(x):
    mu = x.mean(axis=0)
    return GaussianComponent(float(x.shape[0]), mu, (x - mu).T @ (x - mu) / x.shape[0], x.shape[0])


@given(st.integers(0, 2**32 - 1), st.integers(1, 8), st.integers(2, 60), st.integers(2, 60))
def test_merged_moments_equal_pooled_samples(seed, d, n1, n2):
    rng = np.random.default_rng(seed)
    a = rng.standard_normal((n1, d)) * rng.uniform(0.5, 3)
    b = rng.standard_normal((n2, d)) + rng.uniform(-5, 5, d)
    m = merged_moments(_moment_component(a), _moment_component(b))
    mu, cov = _pooled(a, b)
    np.testing.assert_allclose(m.mean, mu, atol=1e-10)
    np.testing.assert_allclose(m.cov, cov, atol=1e-10)


def test_logpdf_closed_forms():
    assert gaussian_logpdf(np.array([0.0]), np.array([0.0]), np.eye(1)) == pytest.approx(-0.5 * math.log(2 * math.pi))
    assert gaussian_logpdf(np.zeros(2), np.zeros(2), np.eye(2)) == pytest.approx(-math.log(2 * math.pi), abs=1e-12)


def test_logpdf_matches_inverse_det_path(rng):
    for _ in range(20):
        d = int(rng.integers(1, 10))
        S = random_spd(rng, d)
        mu, x = rng.standard_normal(d), rng.standard_normal(d)
        diff = x - mu
        ref = -0.5 * (d * math.log(2 * math.pi) + math.log(np.linalg.det(S)) + diff @ np.linalg.inv(S) @ diff)
        assert gaussian_logpdf(x, mu, S) == pytest.approx(ref, abs=1e-10)


def test_logpdf_batch_matches_single(rng):
    S = random_spd(rng, 3)
    mu = rng.standard_normal(3)
    X = rng.standard_normal((7, 3))
    batch = gaussian_logpdf(X, mu, S)
    assert batch.shape == (7,)
    for x, v in zip(X, batch):
        assert gaussian_logpdf(x, mu, S) == pytest.approx(v, abs=1e-12)


def test_logpdf_integrates_to_one():
    g = np.linspace(-12, 12, 4001)
    p1 = np.exp(gaussian_logpdf(g[:, None], np.array([0.7]), np.array([[2.0]])))
    assert np.trapezoid(p1, g) == pytest.approx(1.0, abs=1e-3)

    g = np.linspace(-10, 10, 401)
    xx, yy = np.meshgrid(g, g, indexing="ij")
    S = np.array([[1.5, 0.6], [0.6, 1.0]])
    p2 = np.exp(gaussian_logpdf(np.column_stack([xx.ravel(), yy.ravel()]), np.array([0.3, -0.2]), S))
    h = g[1] - g[0]
    assert p2.sum() * h * h == pytest.approx(1.0, abs=1e-3)


def test_logpdf_rejects_non_spd():
    with pytest.raises(SPDError):
        gaussian_logpdf(np.zeros(2), np.zeros(2), np.diag([1.0, -1.0]))


def test_regularize_zero_matrix():
    np.testing.assert_allclose(regularize_covariance(np.zeros((3, 3)), 1e-6), 1e-6 * np.eye(3))


def test_regularize_shifts_spectrum(rng):
    S = random_spd(rng, 5)
    shifted = np.linalg.eigvalsh(regularize_covariance(S, 0.25))
    np.testing.assert_allclose(shifted, np.linalg.eigvalsh(S) + 0.25, atol=1e-12)


def test_regularize_rank_deficient_becomes_spd(rng):
    x = rng.standard_normal((3, 8))
    cov = np.cov(x.T, bias=True)
    assert np.linalg.eigvalsh(regularize_covariance(cov))[0] > 0


def test_default_lambda_floor():
    assert default_lambda(np.zeros((2, 2))) == 1e-9
    assert default_lambda(np.eye(4) * 8) == pytest.approx(8e-6)
