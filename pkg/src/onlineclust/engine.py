"""Batch-triggered online clustering engine.

Observations are buffered; every ``batch_size`` of them triggers one model
update. For the default ``oc-density`` variant an update is:

1. cluster the batch with k-means (k picked by BIC) and turn every cluster
   into a Gaussian component,
2. merge overlapping components, old and new alike, to a fixpoint,
3. add the batch to the latent pool and refresh local densities,
4. stride-sample representatives from the density queue,
5. split components whose representatives favour two Gaussians,
6. label the batch with the updated model.

The six comparison variants reuse the same machinery with different
backbones, representative selectors or steps switched off.
"""
from __future__ import annotations

import dataclasses
import hashlib
import json
import logging
import time
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterable

import numpy as np

from .distill import RepresentativeSet, hkmeans_sample_indices, random_sample_indices
from .gaussian import GaussianComponent
from .merge import MergeConfig, merge_pass
from .mixture import (
    Assignment,
    ClusterModel,
    batch_components,
    best_partition,
    dp_assign,
    fit_gmm_em,
    ml_assign,
)
from .split import SplitConfig, split_pass
from .streams import Observation

__all__ = [
    "Variant",
    "EngineConfig",
    "TriggerEvent",
    "OnlineClusterer",
    "NotReadyError",
    "SnapshotError",
    "SNAPSHOT_VERSION",
]

log = logging.getLogger(__name__)

SNAPSHOT_VERSION = 1
_STEP_ERRORS = (ArithmeticError, ValueError, np.linalg.LinAlgError, AssertionError)


class Variant(str, Enum):
    OC_DENSITY = "oc-density"
    OC_HKMEANS = "oc-hkmeans"
    SAM_DENSITY = "sam-density"
    SAM_RANDOM = "sam-random"
    SAM_PRINCIPAL = "sam-principal"
    ONLY_MERGING = "only-merging"
    FULL_HISTORY = "full-history"

    @classmethod
    def parse(cls, value) -> "Variant":
        if isinstance(value, cls):
            return value
        v = str(value).strip().lower().replace("_", "-")
        for member in cls:
            if member.value == v:
                return member
        raise ValueError(f"unknown variant {value!r}; choose from {[m.value for m in cls]}")

    @property
    def uses_dp(self) -> bool:
        return not self.value.startswith("sam-")


@dataclass
class EngineConfig:
    dim: int = 16
    batch_size: int = 1000
    n_sub: int = 4000
    merge: MergeConfig = field(default_factory=MergeConfig)
    split: SplitConfig = field(default_factory=SplitConfig)
    alpha: float = 1.0
    k_max: int = 10
    lambda_reg: float | None = None  # None: 1e-6 * trace/d, floored at 1e-9
    seed: int = 0
    variant: Variant = Variant.OC_DENSITY
    k_nn: int = 10
    eps_m: int = 1
    resort_period: int = 5
    pool_cap: int | None = None
    split_first: bool = False  # ablation: split before merging

    def __post_init__(self):
        self.variant = Variant.parse(self.variant)
        if isinstance(self.merge, dict):
            self.merge = MergeConfig(**self.merge)
        if isinstance(self.split, dict):
            self.split = SplitConfig(**self.split)
        for name in ("dim", "batch_size", "n_sub", "k_max", "k_nn", "eps_m", "resort_period"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.alpha <= 0:
            raise ValueError("alpha must be positive")

    def to_dict(self) -> dict:
        out = dataclasses.asdict(self)
        out["variant"] = self.variant.value
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "EngineConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown engine config keys: {sorted(unknown)}")
        return cls(**data)


@dataclass
class TriggerEvent:
    trigger_index: int
    cumulative_count: int
    n_clusters_before: int
    n_clusters_after: int
    merged_pairs: int
    accepted_splits: int
    wall_time_ms: float
    labels_emitted: np.ndarray
    ids: list[str]
    failures: list[str] = field(default_factory=list)


class NotReadyError(RuntimeError):
    """Inference was requested before the first trigger."""


class SnapshotError(ValueError):
    pass


class OnlineClusterer:
    """Single-owner streaming clusterer; see the module docstring for the pipeline."""

    def __init__(self, config: EngineConfig | None = None):
        self.config = config or EngineConfig()
        cfg = self.config
        self.model = ClusterModel([], cfg.alpha)
        self.reps = RepresentativeSet(
            cfg.dim, cfg.n_sub, cfg.eps_m, cfg.resort_period, cfg.k_nn, cfg.pool_cap,
            track_density=cfg.variant in (Variant.OC_DENSITY, Variant.SAM_DENSITY),
        )
        self.rng = np.random.default_rng(cfg.seed)
        self.buffer_ids: list[str] = []
        self.buffer: list[np.ndarray] = []
        self.trigger_index = 0
        self.n_processed = 0

    # -- streaming ------------------------------------------------------------

    @property
    def ready(self) -> bool:
        return bool(self.model.components)

    def ingest(self, obs: Observation) -> TriggerEvent | None:
        feature = np.asarray(obs.feature, dtype=float)
        if feature.shape != (self.config.dim,):
            raise ValueError(
                f"observation {obs.id!r} has feature shape {feature.shape}, engine expects ({self.config.dim},)"
            )
        self.buffer_ids.append(obs.id)
        self.buffer.append(feature)
        if len(self.buffer) >= self.config.batch_size:
            ids, batch = self.buffer_ids, np.stack(self.buffer)
            self.buffer_ids, self.buffer = [], []
            return self.process_trigger(batch, ids)
        return None

    def ingest_many(self, observations: Iterable[Observation]) -> list[TriggerEvent]:
        events = []
        for obs in observations:
            ev = self.ingest(obs)
            if ev is not None:
                events.append(ev)
        return events

    def process_trigger(self, batch: np.ndarray, ids: list[str] | None = None) -> TriggerEvent:
        cfg = self.config
        batch = np.asarray(batch, dtype=float)
        ids = ids if ids is not None else [str(i) for i in range(batch.shape[0])]
        t0 = time.perf_counter()
        self.trigger_index += 1
        seeds = [int(s) for s in self.rng.integers(2**31, size=3)]
        before = len(self.model)
        failures: list[str] = []
        merged = splits = 0

        if cfg.variant is Variant.FULL_HISTORY:
            self.reps.update(batch, self.trigger_index)
            self._guard("refit", failures, lambda: self._refit_full_history(seeds[0]))
        else:
            self._guard("batch-cluster", failures, lambda: self._absorb_batch(batch, seeds[0]))
            n_union = len(self.model)
            if cfg.split_first and cfg.variant is not Variant.ONLY_MERGING:
                self.reps.update(batch, self.trigger_index)
                splits = self._split_step(seeds[1], failures)
                n_union = len(self.model)
                merged = self._merge_step(failures, n_union)
            else:
                merged = self._merge_step(failures, n_union)
                if cfg.variant is not Variant.ONLY_MERGING:
                    self.reps.update(batch, self.trigger_index)
                    splits = self._split_step(seeds[1], failures)
                else:
                    self.reps.update(batch, self.trigger_index)

        self.model.normalize()
        self.model.check()
        self.n_processed += batch.shape[0]
        labels = self.assign(batch).labels
        elapsed = (time.perf_counter() - t0) * 1e3
        if failures:
            log.warning("trigger %d: failed steps %s", self.trigger_index, failures)
        return TriggerEvent(
            trigger_index=self.trigger_index,
            cumulative_count=self.n_processed,
            n_clusters_before=before,
            n_clusters_after=len(self.model),
            merged_pairs=merged,
            accepted_splits=splits,
            wall_time_ms=elapsed,
            labels_emitted=labels,
            ids=list(ids),
            failures=failures,
        )

    def _guard(self, name: str, failures: list[str], step) -> bool:
        saved = self.model.copy()
        try:
            step()
            self.model.check()
            return True
        except _STEP_ERRORS as exc:
            log.debug("step %s failed: %s", name, exc)
            self.model = saved
            failures.append(name)
            return False

    def _absorb_batch(self, batch: np.ndarray, seed: int) -> None:
        cfg = self.config
        _, labels = best_partition(batch, cfg.k_max, seed)
        new = batch_components(batch, labels, cfg.lambda_reg)
        old_total = self.model.total_count
        total = old_total + batch.shape[0]
        comps = []
        for c in self.model.components:
            c = c.copy()
            c.weight *= old_total / total
            comps.append(c)
        for c in new:
            c.weight = c.count / total
        self.model = ClusterModel(comps + new, cfg.alpha)
        self.model.normalize()

    def _merge_step(self, failures: list[str], n_union: int) -> int:
        def step():
            self.model = merge_pass(self.model, self.config.merge)

        if self._guard("merge", failures, step):
            return n_union - len(self.model)
        return 0

    def _select_reps(self, seed: int) -> np.ndarray:
        v = self.config.variant
        n_sub = self.config.n_sub
        if v in (Variant.OC_DENSITY, Variant.SAM_DENSITY):
            return self.reps.select(n_sub)
        pool = self.reps.pool()
        if v is Variant.OC_HKMEANS:
            return pool[hkmeans_sample_indices(pool, n_sub, seed)]
        return pool[random_sample_indices(pool.shape[0], n_sub, seed)]

    def _split_step(self, seed: int, failures: list[str]) -> int:
        before = len(self.model)
        method = "principal" if self.config.variant is Variant.SAM_PRINCIPAL else "em"

        def step():
            reps = self._select_reps(seed)
            self.model = split_pass(self.model, reps, self.config.split, seed + 1, self._assign_fn, method)

        if self._guard("split", failures, step):
            return len(self.model) - before
        return 0

    def _refit_full_history(self, seed: int) -> None:
        cfg = self.config
        pool = self.reps.pool()
        k, labels = best_partition(pool, cfg.k_max, seed)
        fit = fit_gmm_em(pool, k, seed, lambda_reg=cfg.lambda_reg, init_labels=labels)
        comps = fit.components
        hard = np.bincount(
            dp_assign(ClusterModel(comps, cfg.alpha), pool).labels, minlength=len(comps)
        ) if len(comps) > 1 else np.array([pool.shape[0]])
        comps = [GaussianComponent(c.weight, c.mean, c.cov, int(h)) for c, h in zip(comps, hard) if h > 0]
        self.model = ClusterModel(comps, cfg.alpha)
        self.model.normalize()

    # -- inference --------------------------------------------------------------

    @property
    def _assign_fn(self):
        return dp_assign if self.config.variant.uses_dp else ml_assign

    def assign(self, points) -> Assignment:
        if not self.ready:
            raise NotReadyError("no trigger has completed yet")
        return self._assign_fn(self.model, points)

    def predict(self, points) -> np.ndarray:
        return self.assign(points).labels

    def infer(self, x) -> int:
        return int(self.assign(np.atleast_2d(x)).labels[0])

    # -- persistence ------------------------------------------------------------

    def state_dict(self) -> tuple[dict, np.ndarray]:
        """JSON-ready state and the float32 latent pool it refers to."""
        r = self.reps
        queue = []
        if r.track_density:
            for pos in r.order:
                queue.append({
                    "index": int(pos),
                    "id": int(r.ids[pos]),
                    "density": float(r.density[pos]),
                    "batch_index": int(r.batch_index[pos]),
                    "knn": [None if not np.isfinite(v) else float(v) for v in r.knn[pos]],
                    "knn_ids": [int(v) for v in r.knn_ids[pos]],
                })
        state = {
            "version": SNAPSHOT_VERSION,
            "config": self.config.to_dict(),
            "components": [
                {"weight": c.weight, "mean": c.mean.tolist(), "cov": c.cov.ravel().tolist(), "count": c.count}
                for c in self.model.components
            ],
            "pool_ref": None,
            "pool_shape": list(r.features.shape),
            "pool_ids": r.ids.tolist(),
            "pool_batch_index": r.batch_index.tolist(),
            "queue": queue,
            "rng_state": self.rng.bit_generator.state,
            "engine": {
                "trigger_index": self.trigger_index,
                "n_processed": self.n_processed,
                "next_id": r.next_id,
                "batches_since_resort": r.batches_since_resort,
                "buffer_ids": list(self.buffer_ids),
                "buffer": [b.tolist() for b in self.buffer],
            },
        }
        return state, np.ascontiguousarray(r.features, dtype="<f4")

    def snapshot(self, path) -> Path:
        """Write ``path`` (JSON) and the adjacent ``<name>.pool.bin``."""
        path = Path(path)
        state, pool = self.state_dict()
        pool_path = path.with_name(path.name + ".pool.bin")
        raw = pool.tobytes()
        state["pool_ref"] = pool_path.name
        state["pool_sha256"] = hashlib.sha256(raw).hexdigest()
        pool_path.write_bytes(raw)
        path.write_text(json.dumps(state), encoding="utf-8")
        return path

    @classmethod
    def from_state(cls, state: dict, pool: np.ndarray) -> "OnlineClusterer":
        if state.get("version") != SNAPSHOT_VERSION:
            raise SnapshotError(f"unsupported snapshot version {state.get('version')!r}")
        cfg = EngineConfig.from_dict(state["config"])
        eng = cls(cfg)
        d = cfg.dim
        n = int(state["pool_shape"][0])
        if pool.shape != (n, d):
            raise SnapshotError(f"pool shape {pool.shape} does not match {(n, d)}")
        comps = []
        for c in state["components"]:
            mean = np.asarray(c["mean"], dtype=float)
            cov = np.asarray(c["cov"], dtype=float)
            if mean.shape != (d,) or cov.shape != (d * d,):
                raise SnapshotError("component dimension does not match config")
            comps.append(GaussianComponent(c["weight"], mean, cov.reshape(d, d), c["count"]))
        eng.model = ClusterModel(comps, cfg.alpha)
        r = eng.reps
        r.features = pool.astype(np.float32)
        r.ids = np.asarray(state["pool_ids"], dtype=np.int64)
        r.batch_index = np.asarray(state["pool_batch_index"], dtype=np.int64)
        if r.ids.shape != (n,) or r.batch_index.shape != (n,):
            raise SnapshotError("pool metadata length mismatch")
        if r.track_density:
            q = state["queue"]
            if len(q) != n:
                raise SnapshotError("queue length does not match pool")
            order = np.array([e["index"] for e in q], dtype=np.int64)
            if sorted(order.tolist()) != list(range(n)):
                raise SnapshotError("queue is not a permutation of the pool")
            r.order = order
            r.density = np.empty(n)
            r.knn = np.empty((n, cfg.k_nn))
            r.knn_ids = np.empty((n, cfg.k_nn), dtype=np.int64)
            for e in q:
                i = e["index"]
                r.density[i] = e["density"]
                r.knn[i] = [np.inf if v is None else v for v in e["knn"]]
                r.knn_ids[i] = e["knn_ids"]
        eng_state = state["engine"]
        r.next_id = int(eng_state["next_id"])
        r.batches_since_resort = int(eng_state["batches_since_resort"])
        eng.trigger_index = int(eng_state["trigger_index"])
        eng.n_processed = int(eng_state["n_processed"])
        eng.buffer_ids = list(eng_state["buffer_ids"])
        eng.buffer = [np.asarray(b, dtype=float) for b in eng_state["buffer"]]
        if any(b.shape != (d,) for b in eng.buffer) or len(eng.buffer) != len(eng.buffer_ids):
            raise SnapshotError("buffered observations are malformed")
        eng.rng.bit_generator.state = state["rng_state"]
        return eng

    @classmethod
    def restore(cls, path) -> "OnlineClusterer":
        """Rebuild an engine from :meth:`snapshot` output; raises :class:`SnapshotError`."""
        path = Path(path)
        try:
            state = json.loads(path.read_text(encoding="utf-8"))
            pool_path = path.with_name(state["pool_ref"])
            raw = pool_path.read_bytes()
            if hashlib.sha256(raw).hexdigest() != state["pool_sha256"]:
                raise SnapshotError("pool checksum mismatch")
            n, d = state["pool_shape"]
            pool = np.frombuffer(raw, dtype="<f4")
            if pool.size != n * d:
                raise SnapshotError("pool size does not match pool_shape")
            return cls.from_state(state, pool.reshape(n, d))
        except SnapshotError:
            raise
        except (OSError, ValueError, KeyError, TypeError, IndexError) as exc:
            raise SnapshotError(f"cannot restore snapshot {path}: {exc}") from exc
