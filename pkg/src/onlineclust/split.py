"""Binary splitting of mixture components scored by AIC or BIC on representatives."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.special import logsumexp

from .gaussian import GaussianComponent, empirical_component, gaussian_logpdf
from .mixture import Assignment, ClusterModel, dp_assign, fit_gmm_em

__all__ = [
    "SplitConfig",
    "SplitDecision",
    "aic",
    "bic",
    "count_params",
    "evaluate_split",
    "evaluate_principal_split",
    "principal_axis_split",
    "split_pass",
]


@dataclass
class SplitConfig:
    criterion: str = "aic"
    min_points: int | None = None  # None -> 2 * (d + 1)
    max_rounds: int = 10
    # BIC sample size: "reps" scores with the number of points being split,
    # "history" with the parent's absorbed count
    bic_n: str = "reps"

    def __post_init__(self):
        self.criterion = self.criterion.lower()
        if self.criterion not in ("aic", "bic"):
            raise ValueError(f"unknown split criterion {self.criterion!r}")
        if self.bic_n not in ("reps", "history"):
            raise ValueError(f"unknown bic_n {self.bic_n!r}")

    def min_points_for(self, d: int) -> int:
        return self.min_points if self.min_points is not None else 2 * (d + 1)


@dataclass
class SplitDecision:
    accepted: bool
    parent_index: int
    children: tuple[GaussianComponent, GaussianComponent] | None
    score_parent: float
    score_split: float
    child_labels: np.ndarray | None = None


def aic(log_likelihood: float, k_params: int) -> float:
    return 2.0 * k_params - 2.0 * log_likelihood


def bic(log_likelihood: float, k_params: int, n: int) -> float:
    return -2.0 * log_likelihood + k_params * np.log(n)


def count_params(k: int, d: int) -> int:
    """Free parameters of a k-component full-covariance Gaussian mixture."""
    return k * (d + d * (d + 1) // 2) + (k - 1)


def _score(cfg: SplitConfig, ll: float, k: int, d: int, n: int) -> float:
    p = count_params(k, d)
    if cfg.criterion == "aic":
        return aic(ll, p)
    return bic(ll, p, n)


def _children(parent: GaussianComponent | None, fitted: list[GaussianComponent], n: int):
    pw = parent.weight if parent is not None else 1.0
    pc = parent.count if parent is not None else n
    mix = np.array([c.weight for c in fitted])
    mix = mix / mix.sum()
    ca = int(round(pc * mix[0]))
    ca = min(max(ca, 1), max(pc - 1, 1))
    counts = (ca, max(pc - ca, 1))
    return tuple(
        GaussianComponent(pw * m, c.mean, c.cov, cnt) for c, m, cnt in zip(fitted, mix, counts)
    )


def evaluate_split(
    points,
    cfg: SplitConfig | None = None,
    seed: int = 0,
    parent: GaussianComponent | None = None,
    parent_index: int = -1,
) -> SplitDecision:
    """Compare a single Gaussian against a two-component EM fit on ``points``.

    The split is accepted only when the two-component score is strictly lower.
    Too few points, or a degenerate EM fit, rejects without further ado.
    """
    cfg = cfg or SplitConfig()
    X = np.asarray(points, dtype=float)
    n = X.shape[0]
    d = X.shape[1] if X.ndim == 2 else 0
    if n < cfg.min_points_for(d) or (parent is not None and parent.count < 2):
        return SplitDecision(False, parent_index, None, np.nan, np.nan)
    one = empirical_component(X)
    ll1 = float(np.sum(gaussian_logpdf(X, one.mean, one.cov)))
    n_bic = parent.count if (cfg.bic_n == "history" and parent is not None) else n
    s1 = _score(cfg, ll1, 1, d, n_bic)
    try:
        fit = fit_gmm_em(X, 2, seed)
    except (ArithmeticError, ValueError, np.linalg.LinAlgError):
        return SplitDecision(False, parent_index, None, s1, np.nan)
    if fit.collapsed or len(fit.components) != 2:
        return SplitDecision(False, parent_index, None, s1, np.nan)
    s2 = _score(cfg, fit.log_likelihood, 2, d, n_bic)
    if not s2 < s1:
        return SplitDecision(False, parent_index, None, s1, s2)
    log_p = np.column_stack(
        [gaussian_logpdf(X, c.mean, c.cov) + np.log(c.weight) for c in fit.components]
    )
    labels = np.argmax(log_p, axis=1)
    return SplitDecision(True, parent_index, _children(parent, fit.components, n), s1, s2, labels)


def principal_axis_split(points, parent: GaussianComponent) -> tuple[GaussianComponent, GaussianComponent]:
    """Cut ``points`` at their mean along the parent's leading eigenvector.

    Child weights and counts are the parent's, shared by side size. Raises
    ``ValueError`` when every point lands on one side.
    """
    X = np.asarray(points, dtype=float)
    if X.shape[0] < 2:
        raise ValueError("need at least two points to split")
    _, vecs = np.linalg.eigh(parent.cov)
    proj = X @ vecs[:, -1]
    side = proj > proj.mean()
    if side.all() or not side.any():
        raise ValueError("all points fall on one side of the principal axis")
    fitted = [empirical_component(X[~side]), empirical_component(X[side])]
    for f, m in zip(fitted, (~side, side)):
        f.weight = float(m.sum())
    kids = _children(parent, fitted, X.shape[0])
    return kids


def evaluate_principal_split(
    points,
    cfg: SplitConfig | None = None,
    seed: int = 0,
    parent: GaussianComponent | None = None,
    parent_index: int = -1,
) -> SplitDecision:
    """Like :func:`evaluate_split`, but the candidate is the principal-axis cut."""
    cfg = cfg or SplitConfig()
    X = np.asarray(points, dtype=float)
    n, d = X.shape
    if parent is None:
        parent = empirical_component(X)
    if n < cfg.min_points_for(d) or parent.count < 2:
        return SplitDecision(False, parent_index, None, np.nan, np.nan)
    one = empirical_component(X)
    ll1 = float(np.sum(gaussian_logpdf(X, one.mean, one.cov)))
    n_bic = parent.count if cfg.bic_n == "history" else n
    s1 = _score(cfg, ll1, 1, d, n_bic)
    try:
        kids = principal_axis_split(X, parent)
    except ValueError:
        return SplitDecision(False, parent_index, None, s1, np.nan)
    mix = np.array([k.weight for k in kids])
    mix = mix / mix.sum()
    log_p = np.column_stack(
        [gaussian_logpdf(X, k.mean, k.cov) + np.log(m) for k, m in zip(kids, mix)]
    )
    s2 = _score(cfg, float(logsumexp(log_p, axis=1).sum()), 2, d, n_bic)
    if not s2 < s1:
        return SplitDecision(False, parent_index, None, s1, s2)
    return SplitDecision(True, parent_index, kids, s1, s2, np.argmax(log_p, axis=1))


def split_pass(
    model: ClusterModel,
    reps,
    cfg: SplitConfig | None = None,
    seed: int = 0,
    assign: Callable[[ClusterModel, np.ndarray], Assignment] = dp_assign,
    method: str = "em",
) -> ClusterModel:
    """Recursively split components whose representatives look multimodal.

    Representatives are assigned to components with ``assign``; accepted
    splits put both children back in the queue for the next round, up to
    ``cfg.max_rounds`` rounds. Returns a new model; accepted splits are the
    increase in component count.
    """
    cfg = cfg or SplitConfig()
    evaluate = {"em": evaluate_split, "principal": evaluate_principal_split}[method]
    reps = np.asarray(reps, dtype=float)
    if not model.components or reps.shape[0] == 0:
        return model.copy()
    rng = np.random.default_rng(seed)
    labels = assign(model, reps).labels
    # each slot is (component, its representatives, still open for testing)
    slots = [(c.copy(), reps[labels == k], True) for k, c in enumerate(model.components)]
    for _ in range(cfg.max_rounds):
        if not any(open_ for *_, open_ in slots):
            break
        nxt = []
        for idx, (comp, pts, open_) in enumerate(slots):
            if not open_:
                nxt.append((comp, pts, False))
                continue
            dec = evaluate(pts, cfg, int(rng.integers(2**31)), parent=comp, parent_index=idx)
            if dec.accepted:
                a, b = dec.children
                nxt.append((a, pts[dec.child_labels == 0], True))
                nxt.append((b, pts[dec.child_labels == 1], True))
            else:
                nxt.append((comp, pts, False))
        slots = nxt
    out = ClusterModel([c for c, *_ in slots], model.alpha)
    out.normalize()
    return out
