"""Recursive pairwise merging of overlapping mixture components."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .gaussian import (
    GaussianComponent,
    NumericalDegeneracyError,
    log_volume_ratio,
    mahalanobis,
    merged_moments,
    regularize_covariance,
)
from .mixture import ClusterModel

__all__ = ["MergeConfig", "merge_distance", "mergeable", "merge_test", "merge_pass"]


@dataclass
class MergeConfig:
    eps_d: float = 5.0
    eps_v: float = 1.1

    def __post_init__(self):
        if self.eps_d <= 0 or self.eps_v <= 0:
            raise ValueError("merge thresholds must be positive")


def merge_distance(c1: GaussianComponent, c2: GaussianComponent) -> float:
    """Mahalanobis distance between two components, regularising on degeneracy."""
    try:
        return mahalanobis(c1.mean, c1.cov, c2.mean, c2.cov)
    except NumericalDegeneracyError:
        scale = max(np.trace(c1.cov), np.trace(c2.cov)) / c1.dim
        jitter = 1e-6 * scale if scale > 0 else 1e-9
        return mahalanobis(
            c1.mean, regularize_covariance(c1.cov, jitter), c2.mean, regularize_covariance(c2.cov, jitter)
        )


def merge_test(c1: GaussianComponent, c2: GaussianComponent, cfg: MergeConfig):
    """Return ``(distance, volume_ratio, merged)`` for a candidate pair.

    The volume ratio and merged component are only computed when the distance
    criterion passes; otherwise they are ``inf`` and ``None``.
    """
    dist = merge_distance(c1, c2)
    if not dist < cfg.eps_d:
        return dist, np.inf, None
    merged = merged_moments(c1, c2)
    ratio = float(np.exp(log_volume_ratio(merged.cov, c1.cov, c2.cov)))
    return dist, ratio, merged


def mergeable(c1: GaussianComponent, c2: GaussianComponent, cfg: MergeConfig | None = None) -> bool:
    cfg = cfg or MergeConfig()
    dist, ratio, _ = merge_test(c1, c2, cfg)
    return dist < cfg.eps_d and ratio <= cfg.eps_v


def merge_pass(model: ClusterModel, cfg: MergeConfig | None = None) -> ClusterModel:
    """Greedily merge the closest mergeable pair until none is left.

    Each merge removes exactly one component, so the number of merges is the
    drop in component count. The input model is not modified.
    """
    cfg = cfg or MergeConfig()
    comps = [c.copy() for c in model.components]
    # pair cache keyed on component identity; only pairs touching a new merge
    # product need to be evaluated after each step
    cache: dict[tuple[int, int], tuple[float, GaussianComponent | None]] = {}
    retired: list[GaussianComponent] = []  # keeps ids unique while cached

    def evaluate(a: GaussianComponent, b: GaussianComponent):
        key = (id(a), id(b))
        if key not in cache:
            dist, ratio, merged = merge_test(a, b, cfg)
            ok = dist < cfg.eps_d and ratio <= cfg.eps_v
            cache[key] = (dist, merged if ok else None)
        return cache[key]

    while len(comps) > 1:
        best = None
        for i in range(len(comps)):
            for j in range(i + 1, len(comps)):
                dist, merged = evaluate(comps[i], comps[j])
                if merged is not None and (best is None or dist < best[0]):
                    best = (dist, i, j, merged)
        if best is None:
            break
        _, i, j, merged = best
        retired += [comps[i], comps[j]]
        comps = [c for idx, c in enumerate(comps) if idx not in (i, j)] + [merged]
    out = ClusterModel(comps, model.alpha)
    if comps:
        out.normalize()
    return out
