"""Density-based data distillation.

Every ingested latent is kept in a pool together with its local density, the
mean L1 distance to its ``k_nn`` nearest pool neighbours. The pool is kept in
a queue sorted by density and representatives are drawn from it at a fixed
stride, so the selected subset follows the density profile of the whole
history. Random and hierarchical k-means selectors are provided as baselines.
"""
from __future__ import annotations

import math

import numpy as np
from scipy.spatial.distance import cdist

from .mixture import kmeans

__all__ = [
    "RepresentativeSet",
    "local_density",
    "update_queue",
    "select_representatives",
    "stride_positions",
    "random_sample",
    "random_sample_indices",
    "hkmeans_sample",
    "hkmeans_sample_indices",
]

_CHUNK = 4096


def _l1(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return cdist(a, b, metric="cityblock")


def local_density(points, query, k_nn: int = 10, self_index: int | None = None):
    """Mean L1 distance from ``query`` to its ``k_nn`` nearest ``points``.

    ``self_index`` marks the query's own row in ``points`` so it is not its
    own neighbour. Returns ``(density, knn_cache)``; when fewer than ``k_nn``
    neighbours exist, the cache is shorter than ``k_nn``.
    """
    points = np.atleast_2d(np.asarray(points, dtype=float))
    dist = _l1(np.atleast_2d(np.asarray(query, dtype=float)), points)[0]
    if self_index is not None:
        dist = np.delete(dist, self_index)
    k = min(k_nn, dist.shape[0])
    if k == 0:
        return 0.0, np.empty(0)
    cache = np.sort(np.partition(dist, k - 1)[:k])
    return float(cache.mean()), cache


def _merge_knn(dist_a, id_a, dist_b, id_b, k):
    """Row-wise k smallest of two candidate sets, sorted ascending."""
    dist = np.concatenate([dist_a, dist_b], axis=1)
    ids = np.concatenate([id_a, id_b], axis=1)
    if dist.shape[1] > k:
        part = np.argpartition(dist, k - 1, axis=1)[:, :k]
        dist = np.take_along_axis(dist, part, axis=1)
        ids = np.take_along_axis(ids, part, axis=1)
    order = np.argsort(dist, axis=1, kind="stable")
    return np.take_along_axis(dist, order, axis=1), np.take_along_axis(ids, order, axis=1)


def _density_of(knn: np.ndarray) -> np.ndarray:
    finite = np.isfinite(knn)
    n = finite.sum(axis=1)
    total = np.where(finite, knn, 0.0).sum(axis=1)
    return np.where(n > 0, total / np.maximum(n, 1), 0.0)


class RepresentativeSet:
    """Pool of stored latents with a density-sorted queue.

    Parameters
    ----------
    dim
        Feature dimensionality.
    capacity
        Number of representatives requested from :meth:`select`.
    eps_m
        Minimum stride; at or below it the whole pool is returned.
    resort_period
        Batches between full resorts of the queue. In between, only the
        entries touched by a batch are re-inserted.
    k_nn
        Neighbourhood size for the density estimate.
    pool_cap
        Optional bound on the stored pool; the oldest entries are evicted
        first and their former neighbours are recomputed exactly.
    track_density
        With ``False`` the set is a plain latent store: :meth:`update` only
        appends and no queue is kept.
    """

    def __init__(self, dim: int, capacity: int = 4000, eps_m: int = 1, resort_period: int = 5,
                 k_nn: int = 10, pool_cap: int | None = None, track_density: bool = True):
        self.track_density = track_density
        self.dim = dim
        self.capacity = capacity
        self.eps_m = eps_m
        self.resort_period = resort_period
        self.k_nn = k_nn
        self.pool_cap = pool_cap
        self.features = np.empty((0, dim), dtype=np.float32)
        self.density = np.empty(0)
        self.knn = np.empty((0, k_nn))
        self.knn_ids = np.empty((0, k_nn), dtype=np.int64)
        self.ids = np.empty(0, dtype=np.int64)
        self.batch_index = np.empty(0, dtype=np.int64)
        self.order = np.empty(0, dtype=np.int64)
        self.next_id = 0
        self.batches_since_resort = 0

    def __len__(self) -> int:
        return self.features.shape[0]

    # -- updates -----------------------------------------------------------

    def update(self, batch, batch_index: int = 0) -> int:
        """Add a batch and refresh every density it can affect.

        An existing entry is refreshed only when its L1 distance to the
        nearest new point is below its current k-th neighbour distance, which
        is exactly when its neighbour set can change. Returns the number of
        pre-existing entries that were refreshed.
        """
        batch = np.asarray(batch, dtype=np.float32).reshape(-1, self.dim)
        m, k = batch.shape[0], self.k_nn
        if m == 0:
            return 0
        if not self.track_density:
            self._append_plain(batch, batch_index)
            return 0
        n_old = len(self)
        new64 = batch.astype(np.float64)
        new_ids = np.arange(self.next_id, self.next_id + m, dtype=np.int64)

        # new points against each other
        dnn = _l1(new64, new64)
        np.fill_diagonal(dnn, np.inf)
        new_knn, new_kid = _merge_knn(
            np.full((m, 0), np.inf), np.empty((m, 0), dtype=np.int64),
            dnn, np.broadcast_to(new_ids, (m, m)), k,
        )

        touched_old = []
        old64 = self.features.astype(np.float64)
        for lo in range(0, n_old, _CHUNK):
            hi = min(lo + _CHUNK, n_old)
            block = _l1(old64[lo:hi], new64)  # (chunk, m)
            # new points gain old neighbours
            new_knn, new_kid = _merge_knn(
                new_knn, new_kid, block.T, np.broadcast_to(self.ids[lo:hi], (m, hi - lo)), k
            )
            # old points in the vicinity of the batch
            near = np.flatnonzero(block.min(axis=1) < self.knn[lo:hi, -1])
            if near.size:
                rows = lo + near
                d, i = _merge_knn(
                    self.knn[rows], self.knn_ids[rows], block[near], np.broadcast_to(new_ids, (near.size, m)), k
                )
                self.knn[rows] = d
                self.knn_ids[rows] = i
                self.density[rows] = _density_of(d)
                touched_old.append(rows)

        pad = k - new_knn.shape[1]
        if pad > 0:
            new_knn = np.hstack([new_knn, np.full((m, pad), np.inf)])
            new_kid = np.hstack([new_kid, np.full((m, pad), -1, dtype=np.int64)])

        self.features = np.vstack([self.features, batch])
        self.knn = np.vstack([self.knn, new_knn])
        self.knn_ids = np.vstack([self.knn_ids, new_kid])
        self.density = np.concatenate([self.density, _density_of(new_knn)])
        self.ids = np.concatenate([self.ids, new_ids])
        self.batch_index = np.concatenate([self.batch_index, np.full(m, batch_index, dtype=np.int64)])
        self.next_id += m

        touched = np.concatenate(touched_old + [np.arange(n_old, n_old + m)])
        self.batches_since_resort += 1
        evicted = self._evict()
        if evicted or self.batches_since_resort >= self.resort_period:
            self.resort()
        else:
            self._reinsert(touched)
        return int(sum(t.size for t in touched_old))

    def _append_plain(self, batch: np.ndarray, batch_index: int) -> None:
        m = batch.shape[0]
        self.features = np.vstack([self.features, batch])
        self.ids = np.concatenate([self.ids, np.arange(self.next_id, self.next_id + m, dtype=np.int64)])
        self.batch_index = np.concatenate([self.batch_index, np.full(m, batch_index, dtype=np.int64)])
        self.next_id += m
        if self.pool_cap is not None and len(self) > self.pool_cap:
            keep = slice(len(self) - self.pool_cap, None)
            self.features, self.ids, self.batch_index = self.features[keep], self.ids[keep], self.batch_index[keep]

    def pool(self) -> np.ndarray:
        return self.features.astype(np.float64)

    def _evict(self) -> bool:
        if self.pool_cap is None or len(self) <= self.pool_cap:
            return False
        n_drop = len(self) - self.pool_cap
        gone = self.ids[:n_drop]
        keep = slice(n_drop, None)
        for name in ("features", "density", "knn", "knn_ids", "ids", "batch_index"):
            setattr(self, name, getattr(self, name)[keep])
        stale = np.flatnonzero(np.isin(self.knn_ids, gone).any(axis=1))
        if stale.size:
            pool = self.features.astype(np.float64)
            k = self.k_nn
            for lo in range(0, stale.size, _CHUNK):
                rows = stale[lo : lo + _CHUNK]
                dist = _l1(pool[rows], pool)
                dist[np.arange(rows.size), rows] = np.inf
                d, i = _merge_knn(
                    np.full((rows.size, 0), np.inf), np.empty((rows.size, 0), dtype=np.int64),
                    dist, np.broadcast_to(self.ids, dist.shape), k,
                )
                if d.shape[1] < k:
                    d = np.hstack([d, np.full((rows.size, k - d.shape[1]), np.inf)])
                    i = np.hstack([i, np.full((rows.size, k - i.shape[1]), -1, dtype=np.int64)])
                self.knn[rows], self.knn_ids[rows] = d, i
                self.density[rows] = _density_of(d)
        return True

    def resort(self) -> None:
        self.order = np.lexsort((self.ids, self.density))
        self.batches_since_resort = 0

    def _reinsert(self, touched: np.ndarray) -> None:
        mask = np.ones(len(self), dtype=bool)
        mask[touched] = False
        mask_old = mask[self.order] if self.order.size else np.empty(0, dtype=bool)
        kept = self.order[mask_old]
        moved = touched[np.lexsort((self.ids[touched], self.density[touched]))]
        pos = np.searchsorted(self.density[kept], self.density[moved], side="right")
        self.order = np.insert(kept, pos, moved)

    # -- selection ---------------------------------------------------------

    def is_sorted(self) -> bool:
        return bool(np.all(np.diff(self.density[self.order]) >= 0))

    def select_indices(self, n_select: int | None = None) -> np.ndarray:
        """Pool rows chosen by stride sampling over the density queue."""
        if not self.track_density:
            raise RuntimeError("density queue is not tracked for this set")
        if len(self) == 0:
            return np.empty(0, dtype=np.int64)
        if self.order.size != len(self) or not self.is_sorted():
            self.resort()
        n_select = n_select or self.capacity
        pos = stride_positions(len(self), n_select, self.eps_m)
        return self.order[pos]

    def select(self, n_select: int | None = None) -> np.ndarray:
        return self.features[self.select_indices(n_select)].astype(np.float64)


def stride_positions(n: int, n_select: int, eps_m: int = 1) -> np.ndarray:
    """0-based queue positions picked at stride ``floor(n / n_select)``.

    If the stride does not exceed ``eps_m`` every position is returned.
    """
    if n == 0:
        return np.empty(0, dtype=np.int64)
    m = n // n_select
    if m <= eps_m:
        return np.arange(n)
    return np.arange(0, n, m)


def update_queue(reps: RepresentativeSet, new_batch, batch_index: int = 0) -> RepresentativeSet:
    reps.update(new_batch, batch_index)
    return reps


def select_representatives(reps: RepresentativeSet, n_select: int) -> np.ndarray:
    return reps.select(n_select)


def random_sample_indices(n: int, n_select: int, seed: int = 0) -> np.ndarray:
    if n_select >= n:
        return np.arange(n)
    rng = np.random.default_rng(seed)
    return np.sort(rng.choice(n, size=n_select, replace=False))


def random_sample(points, n_select: int, seed: int = 0) -> np.ndarray:
    points = np.asarray(points)
    return points[random_sample_indices(points.shape[0], n_select, seed)]


def hkmeans_sample_indices(points, n_select: int, seed: int = 0) -> np.ndarray:
    """Hierarchical binary k-means selection of centre and boundary points.

    The pool is bisected with 2-means until every leaf holds at most
    ``ceil(N / (n_select / 2))`` points. Each leaf contributes its point
    nearest the centroid and the one farthest from it; further points (next
    nearest, next farthest, ...) are taken round-robin over leaves, larger
    leaves first, until exactly ``min(n_select, N)`` are chosen.
    """
    X = np.asarray(points, dtype=float)
    n = X.shape[0]
    if n_select >= n:
        return np.arange(n)
    leaf_max = max(1, math.ceil(n / (n_select / 2)))
    rng = np.random.default_rng(seed)
    leaves = []
    stack = [np.arange(n)]
    while stack:
        idx = stack.pop()
        if idx.size <= leaf_max:
            leaves.append(idx)
            continue
        _, lab = kmeans(X[idx], 2, int(rng.integers(2**31)), max_iter=30)
        if lab.all() or not lab.any():
            half = idx.size // 2
            lab = np.zeros(idx.size, dtype=int)
            lab[half:] = 1
        stack.append(idx[lab == 1])
        stack.append(idx[lab == 0])

    ranks, sizes, leaf_ids, members = [], [], [], []
    for lid, idx in enumerate(leaves):
        dist = np.linalg.norm(X[idx] - X[idx].mean(axis=0), axis=1)
        by_dist = np.argsort(dist, kind="stable")
        # nearest, farthest, 2nd nearest, 2nd farthest, ...
        alt = np.empty(idx.size, dtype=np.int64)
        alt[0::2] = by_dist[: (idx.size + 1) // 2]
        alt[1::2] = by_dist[::-1][: idx.size // 2]
        members.append(idx[alt])
        ranks.append(np.arange(idx.size))
        sizes.append(np.full(idx.size, idx.size))
        leaf_ids.append(np.full(idx.size, lid))
    members = np.concatenate(members)
    key = np.lexsort((np.concatenate(leaf_ids), -np.concatenate(sizes), np.concatenate(ranks)))
    return np.sort(members[key[:n_select]])


def hkmeans_sample(points, n_select: int, seed: int = 0) -> np.ndarray:
    points = np.asarray(points)
    return points[hkmeans_sample_indices(points, n_select, seed)]
