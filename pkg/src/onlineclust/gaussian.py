"""Dense Gaussian primitives shared by the clustering modules.

Everything here is a pure function of its inputs. Covariances are plain
``(d, d)`` float arrays; a mixture component is a :class:`GaussianComponent`.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import linalg, special, stats

__all__ = [
    "GaussianComponent",
    "NumericalDegeneracyError",
    "SPDError",
    "mahalanobis",
    "log_ellipsoid_volume",
    "ellipsoid_volume",
    "log_volume_ratio",
    "volume_ratio_det",
    "merged_moments",
    "gaussian_logpdf",
    "regularize_covariance",
    "default_lambda",
    "empirical_component",
]

# condition number above which the averaged covariance is treated as singular
MAX_CONDITION = 1e12


class NumericalDegeneracyError(ArithmeticError):
    """A covariance is too badly conditioned to invert reliably."""


class SPDError(ValueError):
    """A covariance that must be symmetric positive definite is not."""


@dataclass
class GaussianComponent:
    weight: float
    mean: np.ndarray
    cov: np.ndarray
    count: int = 1

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=float)
        self.cov = np.asarray(self.cov, dtype=float)
        self.weight = float(self.weight)
        self.count = int(self.count)

    @property
    def dim(self) -> int:
        return self.mean.shape[0]

    def copy(self) -> "GaussianComponent":
        return GaussianComponent(self.weight, self.mean.copy(), self.cov.copy(), self.count)


def default_lambda(cov: np.ndarray) -> float:
    """Scale-relative jitter: 1e-6 of the mean variance, floored at 1e-9."""
    d = cov.shape[0]
    return max(1e-6 * float(np.trace(cov)) / d, 1e-9)


def regularize_covariance(cov, lambda_reg: float | None = None) -> np.ndarray:
    """Return ``cov + lambda_reg * I`` (symmetrised).

    With ``lambda_reg=None`` the jitter is chosen by :func:`default_lambda`.
    """
    cov = np.asarray(cov, dtype=float)
    cov = 0.5 * (cov + cov.T)
    if lambda_reg is None:
        lambda_reg = default_lambda(cov)
    return cov + lambda_reg * np.eye(cov.shape[0])


def _cholesky(cov: np.ndarray) -> np.ndarray:
    try:
        return linalg.cholesky(cov, lower=True, check_finite=True)
    except linalg.LinAlgError as exc:
        raise SPDError("covariance is not positive definite") from exc


def mahalanobis(mu1, cov1, mu2, cov2) -> float:
    """Distance between two component means under the averaged covariance.

    Uses ``sqrt(diff^T inv((cov1 + cov2)/2) diff)``.

    Raises
    ------
    NumericalDegeneracyError
        If the averaged covariance has condition number above
        ``MAX_CONDITION``. Callers are expected to regularize and retry.
    """
    mu1 = np.asarray(mu1, dtype=float)
    mu2 = np.asarray(mu2, dtype=float)
    if mu1.shape != mu2.shape:
        raise ValueError(f"dimension mismatch: {mu1.shape} vs {mu2.shape}")
    avg = 0.5 * (np.asarray(cov1, dtype=float) + np.asarray(cov2, dtype=float))
    eig = np.linalg.eigvalsh(avg)
    if eig[0] <= 0 or eig[-1] / eig[0] > MAX_CONDITION:
        raise NumericalDegeneracyError(
            f"averaged covariance is near-singular (eigenvalues {eig[0]:.3g}..{eig[-1]:.3g})"
        )
    diff = mu1 - mu2
    L = _cholesky(avg)
    z = linalg.solve_triangular(L, diff, lower=True)
    return float(np.sqrt(z @ z))


def log_ellipsoid_volume(cov, quantile: float = 0.95) -> float:
    """Log volume of the chi-square confidence hyperellipsoid of ``cov``.

    ``V = pi^(d/2) / Gamma(d/2) * prod(sqrt(eig)) * chi2_q(d)^(d/2)``, evaluated
    in log space. Note the ``Gamma(d/2)`` normaliser (rather than the usual
    ``Gamma(d/2 + 1)``); it is a constant factor for fixed ``d`` and cancels in
    every volume ratio.
    """
    cov = np.asarray(cov, dtype=float)
    d = cov.shape[0]
    eig = np.linalg.eigvalsh(0.5 * (cov + cov.T))
    if eig[0] <= 0:
        raise SPDError(f"non-positive eigenvalue {eig[0]:.3g} in covariance")
    chi2 = stats.chi2.ppf(quantile, d)
    return (
        0.5 * d * np.log(np.pi)
        - special.gammaln(0.5 * d)
        + 0.5 * float(np.sum(np.log(eig)))
        + 0.5 * d * np.log(chi2)
    )


def ellipsoid_volume(cov, quantile: float = 0.95) -> float:
    return float(np.exp(log_ellipsoid_volume(cov, quantile)))


def log_volume_ratio(cov_merged, cov1, cov2) -> float:
    """``log(V_merged / (V_1 + V_2))`` with a log-sum-exp denominator."""
    lm = log_ellipsoid_volume(cov_merged)
    return lm - float(np.logaddexp(log_ellipsoid_volume(cov1), log_ellipsoid_volume(cov2)))


def volume_ratio_det(cov_merged, cov1, cov2) -> float:
    """Prefactor-free volume ratio from determinants.

    Independent of :func:`log_ellipsoid_volume`: uses ``slogdet`` so that the
    two evaluation paths can be cross-checked.
    """
    half = [0.5 * np.linalg.slogdet(np.asarray(c, dtype=float))[1] for c in (cov_merged, cov1, cov2)]
    return float(np.exp(half[0] - np.logaddexp(half[1], half[2])))


def merged_moments(c1: GaussianComponent, c2: GaussianComponent) -> GaussianComponent:
    """Moment-matched union of two weighted Gaussian components."""
    if c1.dim != c2.dim:
        raise ValueError(f"dimension mismatch: {c1.dim} vs {c2.dim}")
    w = c1.weight + c2.weight
    mean = (c1.weight * c1.mean + c2.weight * c2.mean) / w
    d1 = c1.mean - mean
    d2 = c2.mean - mean
    cov = (
        c1.weight * (c1.cov + np.outer(d1, d1))
        + c2.weight * (c2.cov + np.outer(d2, d2))
    ) / w
    cov = 0.5 * (cov + cov.T)
    return GaussianComponent(w, mean, cov, c1.count + c2.count)


def gaussian_logpdf(x, mu, cov) -> np.ndarray | float:
    """Multivariate normal log density via a Cholesky factor.

    ``x`` may be a single vector ``(d,)`` or a batch ``(n, d)``.
    """
    x = np.asarray(x, dtype=float)
    mu = np.asarray(mu, dtype=float)
    cov = np.asarray(cov, dtype=float)
    L = _cholesky(cov)
    d = mu.shape[0]
    single = x.ndim == 1
    diff = np.atleast_2d(x) - mu
    z = linalg.solve_triangular(L, diff.T, lower=True)
    maha = np.einsum("ij,ij->j", z, z)
    logdet = 2.0 * np.sum(np.log(np.diag(L)))
    out = -0.5 * (d * np.log(2.0 * np.pi) + logdet + maha)
    return float(out[0]) if single else out


def empirical_component(points, weight: float = 1.0, lambda_reg: float | None = None) -> GaussianComponent:
    """Gaussian fitted to ``points`` by maximum likelihood, covariance regularized."""
    points = np.atleast_2d(np.asarray(points, dtype=float))
    mean = points.mean(axis=0)
    diff = points - mean
    cov = diff.T @ diff / points.shape[0]
    return GaussianComponent(weight, mean, regularize_covariance(cov, lambda_reg), points.shape[0])
