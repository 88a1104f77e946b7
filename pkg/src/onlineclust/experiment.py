"""Drive an engine over an ordered stream and collect per-trigger metrics."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .engine import EngineConfig, OnlineClusterer, TriggerEvent
from .evaluation import EvalReport, evaluate, majority_vote_f1
from .streams import Observation, as_arrays

__all__ = ["RunResult", "run_stream"]


@dataclass
class RunResult:
    engine: OnlineClusterer
    events: list[TriggerEvent]
    metrics_rows: list[list] = field(default_factory=list)
    pred: np.ndarray | None = None
    report: EvalReport | None = None

    @property
    def final_f1(self) -> float:
        return self.report.f1 if self.report is not None else float("nan")


def run_stream(obs: Sequence[Observation], config: EngineConfig, *, track_f1: bool = True,
               n_classes: int | None = None) -> RunResult:
    """Stream ``obs`` in the given order through a fresh engine.

    After every trigger the F1 of all points seen so far, labelled by the
    current model, is recorded next to the trigger's wall time; scoring is not
    part of the timed section. Trailing observations that never fill a batch
    are labelled by the final model.
    """
    feats, _, truth = as_arrays(obs)
    labelled = bool(np.any(truth >= 0))
    eng = OnlineClusterer(config)
    events: list[TriggerEvent] = []
    rows: list[list] = []
    for o in obs:
        ev = eng.ingest(o)
        if ev is None:
            continue
        events.append(ev)
        f1 = float("nan")
        if track_f1 and labelled:
            seen = ev.cumulative_count
            f1, _ = majority_vote_f1(eng.predict(feats[:seen]), truth[:seen], n_classes)
        rows.append([ev.trigger_index, ev.cumulative_count, ev.n_clusters_after, f1, ev.wall_time_ms])
    if not eng.ready:
        return RunResult(eng, events, rows)
    pred = eng.predict(feats)
    report = evaluate(pred, truth, n_classes, timing=[e.wall_time_ms for e in events]) if labelled else None
    return RunResult(eng, events, rows, pred, report)
