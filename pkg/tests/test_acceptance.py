"""Acceptance suite: one pass/fail line per criterion, each within its runtime bound.

Run with ``pytest tests/test_acceptance.py -v``; the per-criterion lines are
printed in the terminal summary.
"""
import itertools
import math
import time

import numpy as np
import pytest
from scipy.spatial.distance import cdist
from scipy.stats import hypergeom

from onlineclust.cli import main
from onlineclust.distill import RepresentativeSet, random_sample_indices, stride_positions
from onlineclust.engine import EngineConfig, OnlineClusterer
from onlineclust.experiment import run_stream
from onlineclust.gaussian import (
    GaussianComponent,
    log_volume_ratio,
    mahalanobis,
    merged_moments,
    volume_ratio_det,
)
from onlineclust.merge import MergeConfig, merge_pass, merge_test
from onlineclust.mixture import ClusterModel
from onlineclust.split import SplitConfig, aic, bic, count_params, evaluate_split
from onlineclust.streams import SynthConfig, as_arrays, order_stream, synth_generate

pytestmark = pytest.mark.acceptance

PROPORTIONS = (0.4, 0.25, 0.2, 0.1, 0.05)


@pytest.fixture
def record(request):
    """Print and store one summary line, then fail the test if the criterion failed."""

    def _record(name, ok, elapsed, bound, detail):
        ok = bool(ok) and elapsed < bound
        line = f"{'PASS' if ok else 'FAIL'} {name}: {detail} [{elapsed:.1f} s, bound {bound:g} s]"
        request.config.acceptance_lines.append(line)
        print(line)
        assert ok, line

    return _record


# -- 1. formula oracles --------------------------------------------------------

def test_c1_formula_oracles(record):
    t0 = time.perf_counter()
    rng = np.random.default_rng(1)
    failures = []

    if abs(mahalanobis([0.0, 0.0], np.eye(2), [3.0, 4.0], np.eye(2)) - 5.0) > 1e-12:
        failures.append("mahalanobis 3-4-5")

    worst = 0.0
    for _ in range(100):
        d = int(rng.integers(1, 9))
        a = rng.standard_normal((int(rng.integers(2, 60)), d)) * rng.uniform(0.2, 3) + rng.uniform(-5, 5, d)
        b = rng.standard_normal((int(rng.integers(2, 60)), d)) * rng.uniform(0.2, 3) + rng.uniform(-5, 5, d)
        ca, cb = (GaussianComponent(float(len(x)), x.mean(axis=0), np.atleast_2d(np.cov(x.T, bias=True)), len(x))
                  for x in (a, b))
        m = merged_moments(ca, cb)
        union = np.vstack([a, b])
        worst = max(worst, np.abs(m.mean - union.mean(axis=0)).max(),
                    np.abs(m.cov - np.atleast_2d(np.cov(union.T, bias=True))).max())
    if worst > 1e-10:
        failures.append(f"pooled moments off by {worst:.2e}")

    worst = 0.0
    for _ in range(100):
        d = int(rng.integers(1, 17))
        covs = []
        for _ in range(3):
            q = rng.standard_normal((d, d))
            covs.append(q @ q.T / d + 0.1 * np.eye(d))
        worst = max(worst, abs(math.exp(log_volume_ratio(*covs)) - volume_ratio_det(*covs)))
    if worst > 1e-9:
        failures.append(f"volume ratio paths differ by {worst:.2e}")

    if aic(-100.0, 2) != 204.0 or bic(-100.0, 2, 100) != 200.0 + 2 * math.log(100):
        failures.append("AIC/BIC substitution")
    if count_params(2, 16) != 2 * (16 + 136) + 1:
        failures.append("parameter count")

    if set((stride_positions(10, 5) + 1).tolist()) != {1, 3, 5, 7, 9}:
        failures.append("stride positions")

    record("C1 formula oracles", not failures, time.perf_counter() - t0, 5,
           "all exact" if not failures else "; ".join(failures))


# -- 2. incremental density --------------------------------------------------

def test_c2_incremental_density_lossless(record):
    t0 = time.perf_counter()
    rng = np.random.default_rng(2)
    reps = RepresentativeSet(16, capacity=4000)
    for b in range(20):
        shift = rng.uniform(-4, 4, 16) if b % 3 else np.zeros(16)
        reps.update(rng.standard_normal((200, 16)) + shift, batch_index=b)
    pool = reps.pool()
    dist = cdist(pool, pool, "cityblock")
    np.fill_diagonal(dist, np.inf)
    scratch = np.sort(dist, axis=1)[:, :10].mean(axis=1)
    err = float(np.abs(reps.density - scratch).max())
    record("C2 incremental density", err <= 1e-9, time.perf_counter() - t0, 30,
           f"max |incremental - scratch| = {err:.2e} over {len(pool)} entries")


# -- 3. split / merge behaviour ------------------------------------------------

def _random_model(rng, k, d):
    comps = []
    for _ in range(k):
        a = rng.standard_normal((d, d)) * rng.uniform(0.3, 1.5)
        comps.append(GaussianComponent(rng.uniform(0.1, 1.0), rng.uniform(-6, 6, d), a @ a.T + 0.3 * np.eye(d),
                                       int(rng.integers(1, 100))))
    m = ClusterModel(comps)
    m.normalize()
    return m


def test_c3_split_merge_suite(record):
    t0 = time.perf_counter()
    d, n = 16, 400
    rates = {}
    for crit in ("aic", "bic"):
        cfg = SplitConfig(criterion=crit)
        two = one = 0
        for seed in range(20):
            rng = np.random.default_rng(seed)
            blobs = np.vstack([rng.standard_normal((n // 2, d)) - 2.5, rng.standard_normal((n // 2, d)) + 2.5])
            two += evaluate_split(blobs, cfg, seed).accepted
            one += not evaluate_split(rng.standard_normal((n, d)), cfg, seed).accepted
        rates[crit] = (two, one)
    split_ok = all(two >= 19 and one >= 19 for two, one in rates.values())

    rng = np.random.default_rng(3)
    merge_bad = 0
    cfg = MergeConfig()
    for _ in range(100):
        model = _random_model(rng, int(rng.integers(2, 8)), int(rng.integers(1, 5)))
        out = merge_pass(model, cfg)
        again = merge_pass(out, cfg)
        ok = abs(sum(c.weight for c in out.components) - 1.0) <= 1e-9 and out.total_count == model.total_count
        ok &= all(dist >= cfg.eps_d or ratio > cfg.eps_v
                  for dist, ratio, _ in (merge_test(a, b, cfg) for a, b in itertools.combinations(out.components, 2)))
        ok &= len(again) == len(out) and all(
            np.allclose(a.mean, b.mean, atol=1e-12) and np.allclose(a.cov, b.cov, atol=1e-12)
            for a, b in zip(out.components, again.components))
        merge_bad += not ok

    detail = "; ".join(f"{c.upper()} two-blob accepted {t}/20, single-blob rejected {o}/20"
                       for c, (t, o) in rates.items())
    detail += f"; merge properties violated on {merge_bad}/100 models"
    record("C3 split/merge suite", split_ok and merge_bad == 0, time.perf_counter() - t0, 60, detail)


# -- 4 and 5. end-to-end accuracy and order robustness -------------------------

@pytest.fixture(scope="module")
def runs():
    """Lazily computed, timed runs shared by criteria 4 and 5."""
    cache = {}

    def get(variant, ordering="WE", planted=None):
        key = (variant, ordering, planted)
        if key not in cache:
            obs = synth_generate(SynthConfig(n_classes=5, n_points=20000, class_proportions=PROPORTIONS,
                                             d=16, feature_separation=8.0, planted=planted, seed=0))
            obs = order_stream(obs, ordering, seed=0)
            t0 = time.perf_counter()
            res = run_stream(obs, EngineConfig(dim=16, variant=variant, seed=0), track_f1=False, n_classes=5)
            cache[key] = (res.final_f1, time.perf_counter() - t0)
        return cache[key]

    return get


@pytest.mark.slow
def test_c4_end_to_end_accuracy(record, runs):
    oc, t_oc = runs("oc-density")
    oc_p, t1 = runs("oc-density", planted=(0, 4))
    om_p, t2 = runs("only-merging", planted=(0, 4))
    ok = oc >= 0.90 and om_p < oc_p
    record("C4 end-to-end accuracy", ok, t_oc + t1 + t2, 300,
           f"OC F1 {oc:.4f} (>= 0.90); planted sub-mode: only-merging {om_p:.4f} < OC {oc_p:.4f}")


@pytest.mark.slow
def test_c5_order_robustness(record, runs):
    scores, elapsed = [], 0.0
    for ordering in ("WE", "NS", "RANDOM"):
        f1, t = runs("oc-density", ordering)
        scores.append(f1)
        elapsed += t
    std = float(np.std(scores))
    mean = float(np.mean(scores))
    ok = std <= 0.05 and abs(mean - scores[0]) <= 0.03
    record("C5 order robustness", ok, elapsed, 900,
           f"F1 WE/NS/RANDOM = {', '.join(f'{s:.4f}' for s in scores)}; std {std:.4f}, "
           f"|mean - WE| {abs(mean - scores[0]):.4f}")


# -- 6. bounded per-trigger time -------------------------------------------------

def _trigger_medians(obs, variant, triggers=(10, 40), repeats=3):
    """Median wall time of the given triggers, each replayed from the state just before it."""
    feats, _, _ = as_arrays(obs)
    eng = OnlineClusterer(EngineConfig(dim=16, variant=variant, seed=0))
    batch = eng.config.batch_size
    saved = {}
    for t in range(1, max(triggers) + 1):
        if t in triggers:
            saved[t] = eng.state_dict()
        eng.process_trigger(feats[(t - 1) * batch : t * batch])
    out = {}
    for t, (state, pool) in saved.items():
        times = []
        for _ in range(repeats):
            replay = OnlineClusterer.from_state(state, pool.copy())
            times.append(replay.process_trigger(feats[(t - 1) * batch : t * batch]).wall_time_ms)
        out[t] = float(np.median(times))
    return out


@pytest.mark.slow
def test_c6_bounded_time(record):
    t0 = time.perf_counter()
    obs = order_stream(synth_generate(SynthConfig(n_classes=5, n_points=40000, class_proportions=PROPORTIONS,
                                                  d=16, feature_separation=8.0, seed=0)), "WE")
    oc = _trigger_medians(obs, "oc-density")
    fh = _trigger_medians(obs, "full-history")
    ok = oc[40] <= 2 * oc[10] and fh[40] >= 3 * fh[10]
    record("C6 bounded time", ok, time.perf_counter() - t0, 1200,
           f"OC t10 {oc[10]:.0f} ms, t40 {oc[40]:.0f} ms (ratio {oc[40] / oc[10]:.2f} <= 2); "
           f"full-history t10 {fh[10]:.0f} ms, t40 {fh[40]:.0f} ms (ratio {fh[40] / fh[10]:.2f} >= 3)")


# -- 7. minority inclusion under imbalance ---------------------------------------

def test_c7_minority_inclusion(record):
    t0 = time.perf_counter()
    n, d = 800, 16
    n_select = n // 40
    density_hits = random_hits = 0
    expected = 0.0
    for seed in range(50):
        obs = synth_generate(SynthConfig(n_classes=2, n_points=n, class_proportions=(0.95, 0.05), d=d, seed=seed))
        feats, _, truth = as_arrays(obs)
        minority = truth == 1
        expected += 1 - hypergeom(n, int(minority.sum()), n_select).pmf(0)
        reps = RepresentativeSet(d, capacity=n_select)
        reps.update(feats)
        density_hits += minority[reps.select_indices(n_select)].any()
        random_hits += minority[random_sample_indices(n, n_select, seed)].any()
    record("C7 minority inclusion", density_hits > random_hits, time.perf_counter() - t0, 120,
           f"density {density_hits}/50 vs random {random_hits}/50 "
           f"(random expectation {expected:.1f}/50), N={n}, n_select={n_select}")


# -- 8. determinism and persistence ----------------------------------------------

def test_c8_determinism_and_persistence(record, tmp_path):
    t0 = time.perf_counter()
    data = tmp_path / "d.csv"
    assert main(["synth", "--n-points", "4000", "--d", "8", "--n-classes", "4", "--seed", "3",
                 "--out", str(data)]) == 0
    files = []
    for name in ("a", "b"):
        out = tmp_path / name
        assert main(["run", "--data", str(data), "--batch", "500", "--reps", "800", "--seed", "7",
                     "--no-timing", "--out", str(out)]) == 0
        files.append((out / "metrics.csv").read_bytes())
    identical_metrics = files[0] == files[1]

    obs = order_stream(synth_generate(SynthConfig(n_classes=4, n_points=4000, d=8, seed=3)), "WE")
    feats, _, _ = as_arrays(obs)
    cfg = EngineConfig(dim=8, batch_size=500, n_sub=800, seed=7)
    whole = OnlineClusterer(cfg)
    ev_whole = whole.ingest_many(obs)
    first = OnlineClusterer(cfg)
    ev_first = first.ingest_many(obs[:2250])
    first.snapshot(tmp_path / "snap.json")
    resumed = OnlineClusterer.restore(tmp_path / "snap.json")
    ev_rest = resumed.ingest_many(obs[2250:])
    same_labels = len(ev_whole) == len(ev_first + ev_rest) and all(
        np.array_equal(a.labels_emitted, b.labels_emitted) for a, b in zip(ev_whole, ev_first + ev_rest))
    same_pred = np.array_equal(whole.predict(feats), resumed.predict(feats))
    same_model = len(whole.model) == len(resumed.model) and all(
        np.array_equal(a.mean, b.mean) and np.array_equal(a.cov, b.cov)
        for a, b in zip(whole.model.components, resumed.model.components))
    ok = identical_metrics and same_labels and same_pred and same_model
    record("C8 determinism and persistence", ok, time.perf_counter() - t0, 120,
           f"metrics.csv identical: {identical_metrics}; continuation labels/predictions/model identical: "
           f"{same_labels}/{same_pred}/{same_model}")
