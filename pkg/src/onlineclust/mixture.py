"""Mixture fitting and inference: k-means proposals, EM, and posterior labelling."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from .gaussian import GaussianComponent, empirical_component, gaussian_logpdf, regularize_covariance

__all__ = [
    "ClusterModel",
    "Assignment",
    "GMMFit",
    "kmeans",
    "choose_batch_k",
    "best_partition",
    "batch_components",
    "weighted_assign",
    "fit_gmm_em",
    "dp_assign",
    "ml_assign",
    "component_loglik",
]


@dataclass
class ClusterModel:
    """The history-maintained set of mixture components."""

    components: list[GaussianComponent] = field(default_factory=list)
    alpha: float = 1.0

    def __len__(self) -> int:
        return len(self.components)

    @property
    def total_count(self) -> int:
        return sum(c.count for c in self.components)

    @property
    def weights(self) -> np.ndarray:
        return np.array([c.weight for c in self.components])

    def normalize(self) -> None:
        total = sum(c.weight for c in self.components)
        for c in self.components:
            c.weight = c.weight / total

    def copy(self) -> "ClusterModel":
        return ClusterModel([c.copy() for c in self.components], self.alpha)

    def check(self, tol: float = 1e-9) -> None:
        """Raise ``AssertionError`` if the model invariants are broken."""
        if not self.components:
            return
        assert abs(self.weights.sum() - 1.0) <= tol, f"weights sum to {self.weights.sum()}"
        for c in self.components:
            assert c.weight > 0
            assert np.all(np.isfinite(c.mean))
            assert np.linalg.eigvalsh(c.cov)[0] > 0, "covariance not SPD"


@dataclass
class Assignment:
    labels: np.ndarray
    responsibilities: np.ndarray


@dataclass
class GMMFit:
    components: list[GaussianComponent]
    log_likelihood: float
    history: list[float]
    collapsed: bool = False

    def __iter__(self):
        # allows ``components, ll = fit_gmm_em(...)``
        return iter((self.components, self.log_likelihood))


def _sq_dists(points: np.ndarray, centers: np.ndarray, point_sq: np.ndarray | None = None) -> np.ndarray:
    if point_sq is None:
        point_sq = np.einsum("ij,ij->i", points, points)
    d2 = points @ (-2.0 * centers.T)
    d2 += point_sq[:, None]
    d2 += np.einsum("ij,ij->i", centers, centers)[None, :]
    return np.maximum(d2, 0.0, out=d2)


def _cluster_sums(points: np.ndarray, labels: np.ndarray, k: int) -> np.ndarray:
    onehot = np.zeros((points.shape[0], k))
    onehot[np.arange(points.shape[0]), labels] = 1.0
    return onehot.T @ points


def _kmeanspp(points: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = points.shape[0]
    centers = np.empty((k, points.shape[1]))
    centers[0] = points[rng.integers(n)]
    closest = _sq_dists(points, centers[:1])[:, 0]
    for j in range(1, k):
        total = closest.sum()
        if total <= 0:
            idx = rng.integers(n)
        else:
            idx = int(np.searchsorted(np.cumsum(closest), rng.random() * total, side="right"))
            idx = min(idx, n - 1)
        centers[j] = points[idx]
        closest = np.minimum(closest, _sq_dists(points, centers[j : j + 1])[:, 0])
    return centers


def kmeans(points, k: int, seed: int = 0, max_iter: int = 100, tol: float = 1e-6, init=None):
    """k-means++ seeding followed by Lloyd iterations.

    Returns ``(centroids, labels)``. Empty clusters are re-seeded with the
    point farthest from its current centroid. ``init`` supplies the starting
    centroids instead of k-means++.
    """
    points = np.asarray(points, dtype=float)
    n = points.shape[0]
    if k < 1 or k > n:
        raise ValueError(f"k must be in [1, {n}], got {k}")
    if init is None:
        centers = _kmeanspp(points, k, np.random.default_rng(seed))
    else:
        centers = np.array(init, dtype=float)
        if centers.shape != (k, points.shape[1]):
            raise ValueError(f"init must have shape {(k, points.shape[1])}")
    labels = np.zeros(n, dtype=int)
    point_sq = np.einsum("ij,ij->i", points, points)
    for _ in range(max_iter):
        d2 = _sq_dists(points, centers, point_sq)
        labels = np.argmin(d2, axis=1)
        counts = np.bincount(labels, minlength=k)
        new = _cluster_sums(points, labels, k)
        for j in np.flatnonzero(counts == 0):
            far = int(np.argmax(d2[np.arange(n), labels]))
            new[j] = points[far]
            counts[j] = 1
            d2[far, labels[far]] = -1.0
        new /= counts[:, None]
        shift = np.max(np.linalg.norm(new - centers, axis=1))
        centers = new
        if shift < tol:
            break
    labels = np.argmin(_sq_dists(points, centers, point_sq), axis=1)
    return centers, labels


def _spherical_bic(points: np.ndarray, centers: np.ndarray, labels: np.ndarray) -> float:
    n, d = points.shape
    k = centers.shape[0]
    floor = max(1e-12, 1e-9 * float(points.var(axis=0).mean()))
    ll = 0.0
    for j in range(k):
        members = points[labels == j]
        nj = members.shape[0]
        if nj == 0:
            continue
        var = max(float(((members - centers[j]) ** 2).sum()) / (nj * d), floor)
        ll += nj * np.log(nj / n) - 0.5 * nj * d * (np.log(2 * np.pi * var) + 1.0)
    n_params = k * (d + 1) + (k - 1)
    return -2.0 * ll + n_params * np.log(n)


def best_partition(points, k_max: int = 10, seed: int = 0) -> tuple[int, np.ndarray]:
    """k-means partition with the lowest spherical-Gaussian BIC over k in ``[1, k_max]``.

    Returns ``(k, labels)``.
    """
    points = np.asarray(points, dtype=float)
    n = points.shape[0]
    best_k, best, best_labels = 1, np.inf, np.zeros(n, dtype=int)
    for k in range(1, min(k_max, n) + 1):
        centers, labels = kmeans(points, k, seed)
        score = _spherical_bic(points, centers, labels)
        if score < best:
            best_k, best, best_labels = k, score, labels
    return best_k, best_labels


def choose_batch_k(points, k_max: int = 10, seed: int = 0) -> int:
    """Pick the k in ``[1, k_max]`` whose k-means partition has the lowest BIC
    under a spherical-Gaussian-per-cluster likelihood."""
    return best_partition(points, k_max, seed)[0]


def component_loglik(points: np.ndarray, components: list[GaussianComponent]) -> np.ndarray:
    """``(n, K)`` matrix of ``log N(x_i | mu_k, Sigma_k)``."""
    return np.column_stack([gaussian_logpdf(points, c.mean, c.cov) for c in components])


def fit_gmm_em(
    points,
    k: int,
    seed: int = 0,
    max_iter: int = 200,
    tol: float = 1e-6,
    lambda_reg: float | None = None,
    init_labels: np.ndarray | None = None,
) -> GMMFit:
    """Full-covariance EM, initialised from :func:`kmeans`.

    Convergence is declared when the per-point log-likelihood gain drops below
    ``tol``. A component whose weight falls under ``1/n`` is dropped and the fit
    continues with one fewer component; ``GMMFit.collapsed`` records this.
    ``init_labels`` replaces the k-means initialisation (and then sets k).
    """
    X = np.asarray(points, dtype=float)
    n, d = X.shape
    if k > n:
        raise ValueError(f"cannot fit {k} components to {n} points")
    if init_labels is None:
        _, labels = kmeans(X, k, seed)
    else:
        labels = np.unique(init_labels, return_inverse=True)[1]
        k = int(labels.max()) + 1
    resp = np.zeros((n, k))
    resp[np.arange(n), labels] = 1.0
    collapsed = False
    history: list[float] = []
    comps: list[GaussianComponent] = []
    prev = -np.inf
    for _ in range(max_iter):
        # M-step
        nk = resp.sum(axis=0)
        keep = nk / n >= 1.0 / n if k > 1 else np.ones(k, dtype=bool)
        if not keep.all():
            collapsed = True
            resp = resp[:, keep]
            resp /= np.maximum(resp.sum(axis=1, keepdims=True), 1e-300)
            nk = resp.sum(axis=0)
            k = resp.shape[1]
            if k == 0:
                raise ArithmeticError("all EM components collapsed")
        comps = []
        for j in range(k):
            mean = resp[:, j] @ X / nk[j]
            diff = X - mean
            cov = (resp[:, j, None] * diff).T @ diff / nk[j]
            comps.append(GaussianComponent(nk[j] / n, mean, regularize_covariance(cov, lambda_reg),
                                           max(1, int(round(nk[j])))))
        # E-step
        log_p = component_loglik(X, comps) + np.log([c.weight for c in comps])
        log_norm = logsumexp(log_p, axis=1)
        ll = float(log_norm.sum())
        history.append(ll)
        resp = np.exp(log_p - log_norm[:, None])
        if ll - prev < tol * n:
            break
        prev = ll
    return GMMFit(comps, history[-1], history, collapsed)


def _assign(log_p: np.ndarray) -> Assignment:
    log_norm = logsumexp(log_p, axis=1, keepdims=True)
    resp = np.exp(log_p - log_norm)
    return Assignment(np.argmax(log_p, axis=1), resp)


def dp_assign(model: ClusterModel, points) -> Assignment:
    """Posterior assignment under count-regularised (CRP-style) prior weights.

    Component k gets prior mass ``count_k / (total_count + alpha)``, so
    low-support components are penalised. No new component is opened here.
    """
    if not model.components:
        raise ValueError("model has no components")
    X = np.atleast_2d(np.asarray(points, dtype=float))
    counts = np.array([c.count for c in model.components], dtype=float)
    prior = counts / (counts.sum() + model.alpha)
    log_p = component_loglik(X, model.components) + np.log(prior)
    return _assign(log_p)


def ml_assign(model: ClusterModel, points) -> Assignment:
    """Plain maximum-likelihood assignment, no prior over components."""
    if not model.components:
        raise ValueError("model has no components")
    X = np.atleast_2d(np.asarray(points, dtype=float))
    return _assign(component_loglik(X, model.components))


def weighted_assign(model: ClusterModel, points) -> Assignment:
    """Assignment under the model's mixture weights."""
    X = np.atleast_2d(np.asarray(points, dtype=float))
    return _assign(component_loglik(X, model.components) + np.log(model.weights))


def batch_components(points: np.ndarray, labels: np.ndarray, lambda_reg: float | None = None):
    """One empirical Gaussian per non-empty label, weight = cluster size."""
    out = []
    for j in np.unique(labels):
        members = points[labels == j]
        out.append(empirical_component(members, weight=float(members.shape[0]), lambda_reg=lambda_reg))
    return out
