"""Post-hoc evaluation: majority-vote F1, contingency tables, cluster entropy."""
from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

__all__ = [
    "Contingency",
    "EvalReport",
    "contingency",
    "majority_map",
    "majority_vote_f1",
    "cluster_entropy",
    "consistency_flags",
    "order_robustness",
    "evaluate",
    "emit_reports",
    "METRICS_HEADER",
    "POINTS_HEADER",
]

UNLABELED = -1
METRICS_HEADER = ["trigger_index", "cumulative", "n_clusters", "f1", "wall_time_ms"]
POINTS_HEADER = ["id", "x", "y", "truth", "pred", "mapped_pred", "consistent", "entropy_of_cluster"]


@dataclass
class Contingency:
    counts: np.ndarray  # (n_clusters, n_classes)
    cluster_ids: np.ndarray
    class_ids: np.ndarray

    @property
    def cluster_sizes(self) -> np.ndarray:
        return self.counts.sum(axis=1)

    @property
    def class_sizes(self) -> np.ndarray:
        return self.counts.sum(axis=0)

    @property
    def total(self) -> int:
        return int(self.counts.sum())


@dataclass
class EvalReport:
    f1: float
    per_class_f1: np.ndarray
    micro_f1: float
    cluster_entropy: dict[int, float]
    majority_map: dict[int, int]
    consistency: np.ndarray
    table: Contingency
    timing: list = field(default_factory=list)


def contingency(pred, truth, n_classes: int | None = None) -> Contingency:
    """Cluster-by-class counts over the labelled points (truth >= 0)."""
    pred = np.asarray(pred, dtype=int)
    truth = np.asarray(truth, dtype=int)
    if pred.shape != truth.shape:
        raise ValueError("pred and truth must have equal length")
    keep = truth != UNLABELED
    pred, truth = pred[keep], truth[keep]
    clusters = np.unique(pred)
    n_cls = n_classes if n_classes is not None else (int(truth.max()) + 1 if truth.size else 0)
    counts = np.zeros((clusters.size, n_cls), dtype=np.int64)
    np.add.at(counts, (np.searchsorted(clusters, pred), truth), 1)
    return Contingency(counts, clusters, np.arange(n_cls))


def majority_map(table: Contingency) -> dict[int, int]:
    """Cluster id -> its most frequent class; ties go to the smallest class id.

    Clusters without labelled members are left out (with a warning).
    """
    out = {}
    empty = []
    for row, cid in zip(table.counts, table.cluster_ids):
        if row.sum() == 0:
            empty.append(int(cid))
            continue
        out[int(cid)] = int(np.argmax(row))
    if empty:
        warnings.warn(f"clusters without labelled members: {empty}", stacklevel=2)
    return out


def _mapped(pred: np.ndarray, mapping: dict[int, int]) -> np.ndarray:
    return np.array([mapping.get(int(p), UNLABELED) for p in pred], dtype=int)


def majority_vote_f1(pred, truth, n_classes: int | None = None, average: str = "macro"):
    """F1 after relabelling each cluster with its majority class.

    Returns ``(f1, per_class_f1)``. ``average`` is ``"macro"`` (mean over
    ground-truth classes) or ``"micro"``.
    """
    pred = np.asarray(pred, dtype=int)
    truth = np.asarray(truth, dtype=int)
    table = contingency(pred, truth, n_classes)
    if table.total == 0:
        raise ValueError("no labelled points to evaluate")
    mapping = majority_map(table)
    keep = truth != UNLABELED
    mapped = _mapped(pred[keep], mapping)
    t = truth[keep]
    n_cls = table.counts.shape[1]
    tp = np.array([np.sum((mapped == c) & (t == c)) for c in range(n_cls)], dtype=float)
    n_pred = np.array([np.sum(mapped == c) for c in range(n_cls)], dtype=float)
    n_true = np.array([np.sum(t == c) for c in range(n_cls)], dtype=float)
    with np.errstate(invalid="ignore", divide="ignore"):
        denom = n_pred + n_true
        per_class = np.where(denom > 0, 2 * tp / np.where(denom > 0, denom, 1), 0.0)
    present = n_true > 0
    if average == "macro":
        f1 = float(per_class[present].mean())
    elif average == "micro":
        f1 = float(2 * tp.sum() / (n_pred.sum() + n_true.sum()))
    else:
        raise ValueError(f"unknown average {average!r}")
    return f1, per_class


def cluster_entropy(table: Contingency) -> np.ndarray:
    """Shannon entropy (bits) of the class mix inside each cluster."""
    counts = table.counts.astype(float)
    sizes = counts.sum(axis=1, keepdims=True)
    p = np.divide(counts, sizes, out=np.zeros_like(counts), where=sizes > 0)
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(p > 0, -p * np.log2(np.where(p > 0, p, 1.0)), 0.0)
    return terms.sum(axis=1)


def consistency_flags(pred, truth, n_classes: int | None = None) -> np.ndarray:
    """Per point: 1 if the majority-mapped prediction matches truth, 0 if not,
    -1 where the point is unlabelled."""
    pred = np.asarray(pred, dtype=int)
    truth = np.asarray(truth, dtype=int)
    mapping = majority_map(contingency(pred, truth, n_classes))
    mapped = _mapped(pred, mapping)
    flags = (mapped == truth).astype(int)
    flags[truth == UNLABELED] = -1
    return flags


def order_robustness(reports: Sequence) -> tuple[float, float]:
    """Mean and population standard deviation of final F1 across orderings.

    Accepts :class:`EvalReport` objects or bare floats.
    """
    if len(reports) < 2:
        raise ValueError("need at least two reports")
    f1 = np.array([r.f1 if isinstance(r, EvalReport) else float(r) for r in reports])
    return float(f1.mean()), float(f1.std())


def evaluate(pred, truth, n_classes: int | None = None, timing=None) -> EvalReport:
    table = contingency(pred, truth, n_classes)
    f1, per_class = majority_vote_f1(pred, truth, n_classes)
    micro, _ = majority_vote_f1(pred, truth, n_classes, average="micro")
    ent = cluster_entropy(table)
    return EvalReport(
        f1=f1,
        per_class_f1=per_class,
        micro_f1=micro,
        cluster_entropy={int(c): float(e) for c, e in zip(table.cluster_ids, ent)},
        majority_map=majority_map(table),
        consistency=consistency_flags(pred, truth, n_classes),
        table=table,
        timing=list(timing or []),
    )


def _fmt(x) -> str:
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return str(x)


def _write(path: Path, header, rows) -> None:
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_fmt(v) for v in r])


def emit_reports(report: EvalReport | None, out_dir, *, metrics_rows=(), points=None, pred=None,
                 truth=None) -> list[Path]:
    """Write plot-ready CSVs into ``out_dir``.

    ``metrics.csv`` holds one row per trigger; ``contingency.csv`` and
    ``entropy.csv`` describe the final clustering; ``points.csv`` has one row
    per observation with its truth, raw and majority-mapped prediction,
    consistency flag and the entropy of its cluster. ``report`` may be
    ``None`` for unlabelled data, in which case the class-dependent columns
    are left empty.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []

    p = out / "metrics.csv"
    _write(p, METRICS_HEADER, metrics_rows)
    written.append(p)

    if report is not None:
        t = report.table
        p = out / "contingency.csv"
        _write(p, ["cluster_id"] + [f"class_{c}" for c in t.class_ids],
               ([int(cid)] + [int(v) for v in row] for cid, row in zip(t.cluster_ids, t.counts)))
        written.append(p)

    if pred is not None:
        pred = np.asarray(pred, dtype=int)
        ids, sizes = np.unique(pred, return_counts=True)
        ent = report.cluster_entropy if report is not None else {}
        p = out / "entropy.csv"
        _write(p, ["cluster_id", "entropy", "size"],
               ([int(c), ent.get(int(c), ""), int(s)] for c, s in zip(ids, sizes)))
        written.append(p)

    if points is not None and pred is not None:
        truth = np.asarray(truth, dtype=int) if truth is not None else np.full(len(points), UNLABELED)
        mapping = report.majority_map if report is not None else {}
        ent = report.cluster_entropy if report is not None else {}
        flags = report.consistency if report is not None else np.full(len(points), UNLABELED)
        rows = []
        for o, tr, pr, fl in zip(points, truth, pred, flags):
            rows.append([
                o.id, _fmt(o.easting), _fmt(o.northing),
                "" if tr == UNLABELED else int(tr),
                int(pr),
                mapping.get(int(pr), ""),
                "" if fl == UNLABELED else int(fl),
                ent.get(int(pr), ""),
            ])
        p = out / "points.csv"
        _write(p, POINTS_HEADER, rows)
        written.append(p)
    return written
