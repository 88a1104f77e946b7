"""Command-line interface: ``run``, ``compare``, ``synth`` and ``eval``.

Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.
Human-readable output goes to stderr; results are written as files.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .engine import EngineConfig, OnlineClusterer, SnapshotError, Variant
from .evaluation import EvalReport, emit_reports, evaluate, order_robustness
from .experiment import run_stream
from .merge import MergeConfig
from .split import SplitConfig
from .streams import DatasetError, Observation, SynthConfig, as_arrays, load_dataset, order_stream, save_dataset, synth_generate

log = logging.getLogger("onlineclust")

ORDERINGS = ("WE", "NS", "RANDOM")
COMPARE_HEADER = ["variant", "ordering", "trigger_index", "cumulative", "f1", "wall_time_ms"]

# flag dest -> default; config files use the same keys
RUN_DEFAULTS = {
    "batch": 1000,
    "reps": 4000,
    "eps_d": 5.0,
    "eps_v": 1.1,
    "criterion": "aic",
    "alpha": 1.0,
    "k_max": 10,
    "lambda_reg": None,
    "order": "we",
    "variant": Variant.OC_DENSITY.value,
    "seed": 0,
    "data": None,
    "synth": None,
    "timing": True,
}
SYNTH_KEYS = {f for f in SynthConfig.__dataclass_fields__}


class UsageError(Exception):
    """Bad flags, config or input files (exit code 2)."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _load_config_file(path: str) -> dict:
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"config file not found: {path}")
    text = p.read_text(encoding="utf-8")
    try:
        if p.suffix.lower() in (".yaml", ".yml"):
            import yaml

            data = yaml.safe_load(text) or {}
        else:
            data = json.loads(text)
    except ImportError as exc:
        raise UsageError("YAML config files need PyYAML installed") from exc
    except Exception as exc:
        raise UsageError(f"cannot parse config file {path}: {exc}") from exc
    if not isinstance(data, dict):
        raise UsageError("config file must hold a mapping")
    data = {k.replace("-", "_"): v for k, v in data.items()}
    unknown = set(data) - set(RUN_DEFAULTS)
    if unknown:
        raise UsageError(f"unknown config keys: {sorted(unknown)}")
    return data


def _effective(args: argparse.Namespace) -> dict:
    """defaults < config file < explicit flags."""
    eff = dict(RUN_DEFAULTS)
    if getattr(args, "config", None):
        eff.update(_load_config_file(args.config))
    for key in RUN_DEFAULTS:
        val = getattr(args, key, None)
        if val is not None:
            eff[key] = val
    eff["order"] = str(eff["order"]).upper()
    if eff["order"] not in ORDERINGS:
        raise UsageError(f"unknown ordering {eff['order']!r}")
    try:
        eff["variant"] = Variant.parse(eff["variant"]).value
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    if eff["data"] and eff["synth"]:
        raise UsageError("give either --data or --synth, not both")
    return eff


def _engine_config(eff: dict, dim: int, variant: str | None = None) -> EngineConfig:
    try:
        return EngineConfig(
            dim=dim,
            batch_size=int(eff["batch"]),
            n_sub=int(eff["reps"]),
            merge=MergeConfig(float(eff["eps_d"]), float(eff["eps_v"])),
            split=SplitConfig(criterion=str(eff["criterion"])),
            alpha=float(eff["alpha"]),
            k_max=int(eff["k_max"]),
            lambda_reg=None if eff["lambda_reg"] is None else float(eff["lambda_reg"]),
            seed=int(eff["seed"]),
            variant=variant or eff["variant"],
        )
    except (TypeError, ValueError) as exc:
        raise UsageError(f"invalid engine configuration: {exc}") from exc


def _synth_config(spec) -> SynthConfig:
    if spec is None or spec is True:
        spec = {}
    if isinstance(spec, str):
        spec = _load_json_or_yaml(spec)
    unknown = set(spec) - SYNTH_KEYS
    if unknown:
        raise UsageError(f"unknown synth keys: {sorted(unknown)}")
    try:
        return SynthConfig(**spec)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"invalid synth configuration: {exc}") from exc


def _load_json_or_yaml(path: str) -> dict:
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"file not found: {path}")
    try:
        if p.suffix.lower() in (".yaml", ".yml"):
            import yaml

            return yaml.safe_load(p.read_text(encoding="utf-8")) or {}
        return json.loads(p.read_text(encoding="utf-8"))
    except Exception as exc:
        raise UsageError(f"cannot parse {path}: {exc}") from exc


def _load_observations(eff: dict) -> list[Observation]:
    if eff["data"]:
        path = Path(eff["data"])
        if not path.is_file():
            raise UsageError(f"data file not found: {path}")
        try:
            obs = load_dataset(path)
        except DatasetError as exc:
            raise UsageError(str(exc)) from exc
    else:
        obs = synth_generate(_synth_config(eff["synth"]))
    if not obs:
        raise UsageError("dataset is empty")
    return obs


def _metrics_rows(rows, timing: bool):
    if timing:
        return rows
    return [r[:-1] + [""] for r in rows]


def _run_one(obs, eff, out: Path, variant: str | None = None, snapshot: bool = True):
    ordered = order_stream(obs, eff["order"], int(eff["seed"]))
    dim = ordered[0].feature.shape[0]
    cfg = _engine_config(eff, dim, variant)
    result = run_stream(ordered, cfg)
    if result.pred is None:
        raise RuntimeError(f"stream of {len(ordered)} observations never filled a batch of {cfg.batch_size}")
    rows = _metrics_rows(result.metrics_rows, eff["timing"])
    _, _, truth = as_arrays(ordered)
    emit_reports(result.report, out, metrics_rows=rows, points=ordered, pred=result.pred, truth=truth)
    if snapshot:
        result.engine.snapshot(out / "snapshot.json")
    return result, rows


def cmd_run(args) -> int:
    eff = _effective(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(json.dumps(dict(eff), indent=2), encoding="utf-8")
    obs = _load_observations(eff)
    result, _ = _run_one(obs, eff, out)
    summary = {
        "variant": eff["variant"],
        "ordering": eff["order"],
        "n_observations": len(obs),
        "n_triggers": len(result.events),
        "n_clusters": len(result.engine.model),
        "f1": None if result.report is None else result.report.f1,
        "micro_f1": None if result.report is None else result.report.micro_f1,
        "failed_steps": sum(len(e.failures) for e in result.events),
    }
    (out / "summary.json").write_text(json.dumps(summary, indent=2), encoding="utf-8")
    log.info("%s/%s: %d triggers, %d clusters, F1 %s", eff["variant"], eff["order"], len(result.events),
             summary["n_clusters"], summary["f1"])
    return 0


def cmd_compare(args) -> int:
    eff = _effective(args)
    variants = [v.strip() for v in args.variants.split(",")] if args.variants else [v.value for v in Variant]
    try:
        variants = [Variant.parse(v).value for v in variants]
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(json.dumps({**dict(eff), "variants": variants}, indent=2),
                                     encoding="utf-8")
    obs = _load_observations(eff)
    rows = []
    final: dict[str, dict[str, float]] = {}
    failed = []
    for variant in variants:
        for ordering in ORDERINGS:
            cell = dict(eff, order=ordering)
            try:
                result, cell_rows = _run_one(obs, cell, out / f"{variant}-{ordering.lower()}", variant, snapshot=False)
            except UsageError:
                raise
            except Exception as exc:  # one failing cell must not sink the others
                log.error("%s/%s failed: %s", variant, ordering, exc)
                failed.append((variant, ordering))
                continue
            rows.extend([variant, ordering] + r for r in cell_rows)
            if result.report is not None:
                final.setdefault(variant, {})[ordering] = result.report.f1
    with (out / "compare.csv").open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(COMPARE_HEADER)
        for r in rows:
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in r])
    with (out / "summary.csv").open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["variant", "n_orderings", "mean_f1", "std_f1"])
        for variant in variants:
            f1s = [final.get(variant, {}).get(o) for o in ORDERINGS]
            f1s = [f for f in f1s if f is not None]
            if len(f1s) >= 2:
                mean, std = order_robustness(f1s)
            elif f1s:
                mean, std = f1s[0], float("nan")
            else:
                mean = std = float("nan")
            w.writerow([variant, len(f1s), repr(mean), repr(std)])
            log.info("%-14s F1 %.4f +/- %.4f over %d orderings", variant, mean, std, len(f1s))
    return 1 if failed else 0


def cmd_synth(args) -> int:
    spec = _load_json_or_yaml(args.config) if args.config else {}
    for key in ("n_classes", "n_points", "d", "seed", "feature_separation", "feature_noise", "patch_layout"):
        val = getattr(args, key)
        if val is not None:
            spec[key] = val
    if args.proportions:
        spec["class_proportions"] = [float(p) for p in args.proportions.split(",")]
    if args.planted:
        spec["planted"] = tuple(int(p) for p in args.planted.split(","))
    cfg = _synth_config(spec)
    try:
        obs = synth_generate(cfg)
    except ValueError as exc:
        log.error("%s", exc)
        return 1
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_dataset(obs, out)
    log.info("wrote %d observations to %s", len(obs), out)
    return 0


def _read_points(path: Path):
    if not path.is_file():
        raise UsageError(f"points file not found: {path}")
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        need = {"id", "x", "y", "truth", "pred"}
        if reader.fieldnames is None or not need <= set(reader.fieldnames):
            raise UsageError(f"{path}: expected columns {sorted(need)}")
        obs, truth, pred = [], [], []
        for line, row in enumerate(reader, start=2):
            try:
                obs.append(Observation(row["id"], float(row["x"]), float(row["y"]),
                                       None if row["truth"] == "" else int(row["truth"]), np.empty(0)))
                truth.append(-1 if row["truth"] == "" else int(row["truth"]))
                pred.append(int(row["pred"]))
            except ValueError as exc:
                raise UsageError(f"{path}:{line}: {exc}") from exc
    return obs, np.array(truth, dtype=int), np.array(pred, dtype=int)


def cmd_eval(args) -> int:
    out = Path(args.out)
    if args.points:
        obs, truth, pred = _read_points(Path(args.points))
    else:
        if not (args.snapshot and args.data):
            raise UsageError("eval needs --points, or --snapshot together with --data")
        if not Path(args.data).is_file():
            raise UsageError(f"data file not found: {args.data}")
        try:
            eng = OnlineClusterer.restore(args.snapshot)
            obs = load_dataset(args.data)
        except (SnapshotError, DatasetError) as exc:
            raise UsageError(str(exc)) from exc
        feats, _, truth = as_arrays(obs)
        if obs and feats.shape[1] != eng.config.dim:
            raise UsageError(f"data has d={feats.shape[1]}, snapshot expects d={eng.config.dim}")
        pred = eng.predict(feats) if obs else np.empty(0, dtype=int)
    if pred.size == 0:
        raise UsageError("no predictions to evaluate")
    labelled = bool(np.any(truth >= 0))
    report: EvalReport | None = evaluate(pred, truth) if labelled else None
    emit_reports(report, out, metrics_rows=[], points=obs, pred=pred, truth=truth)
    summary = {
        "n_points": int(pred.size),
        "n_clusters": int(np.unique(pred).size),
        "f1": None if report is None else report.f1,
        "micro_f1": None if report is None else report.micro_f1,
        "labelled": labelled,
    }
    (out / "eval.json").write_text(json.dumps(summary, indent=2), encoding="utf-8")
    if report is None:
        log.info("no ground-truth labels: wrote cluster sizes only")
    else:
        log.info("F1 %.4f over %d points", report.f1, pred.size)
    return 0


def _add_run_flags(p: argparse.ArgumentParser, with_variant: bool = True) -> None:
    p.add_argument("--config", help="JSON or YAML file with defaults for these flags")
    src = p.add_mutually_exclusive_group()
    src.add_argument("--data", help="dataset CSV (id,x,y,label,f0..)")
    src.add_argument("--synth", help="synthetic-data config file (JSON/YAML)")
    p.add_argument("--batch", type=int, help="observations per trigger (default 1000)")
    p.add_argument("--reps", type=int, help="representative cap (default 4000)")
    p.add_argument("--eps-d", dest="eps_d", type=float, help="merge distance threshold (default 5.0)")
    p.add_argument("--eps-v", dest="eps_v", type=float, help="merge volume-ratio threshold (default 1.1)")
    p.add_argument("--criterion", choices=["aic", "bic"])
    p.add_argument("--alpha", type=float, help="DP concentration (default 1.0)")
    p.add_argument("--k-max", dest="k_max", type=int)
    p.add_argument("--lambda-reg", dest="lambda_reg", type=float)
    if with_variant:
        p.add_argument("--order", type=str.lower, choices=["we", "ns", "random"])
        p.add_argument("--variant", choices=[v.value for v in Variant])
    p.add_argument("--seed", type=int)
    p.add_argument("--no-timing", dest="timing", action="store_const", const=False,
                   help="leave wall_time_ms empty so repeated runs give identical files")
    p.add_argument("--out", required=True, help="output directory")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="onlineclust", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("run", help="stream one dataset through one variant")
    _add_run_flags(p)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("compare", help="run several variants over all three orderings")
    _add_run_flags(p, with_variant=False)
    p.add_argument("--variants", help="comma-separated variant names (default: all)")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("synth", help="write a synthetic dataset CSV")
    p.add_argument("--config", help="JSON or YAML file with generator settings")
    p.add_argument("--n-classes", dest="n_classes", type=int)
    p.add_argument("--n-points", dest="n_points", type=int)
    p.add_argument("--proportions", help="comma-separated class proportions")
    p.add_argument("--d", type=int)
    p.add_argument("--separation", dest="feature_separation", type=float)
    p.add_argument("--noise", dest="feature_noise", type=float)
    p.add_argument("--layout", dest="patch_layout", type=str.upper, choices=["GRID", "VORONOI"])
    p.add_argument("--planted", help="HOST,GUEST class ids for a late-revealed sub-mode")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True, help="output CSV path")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("eval", help="recompute reports from saved predictions")
    p.add_argument("--points", help="points.csv written by run")
    p.add_argument("--snapshot", help="snapshot.json written by run")
    p.add_argument("--data", help="dataset CSV to label with the snapshot")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eval)
    return parser


def main(argv=None) -> int:
    logging.basicConfig(stream=sys.stderr, format="%(levelname)s %(message)s", level=logging.INFO)
    try:
        args = build_parser().parse_args(argv)
        if args.verbose:
            logging.getLogger().setLevel(logging.DEBUG)
        return args.func(args)
    except UsageError as exc:
        print(f"onlineclust: error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:
        log.exception("runtime failure: %s", exc)
        return 1


if __name__ == "__main__":
    sys.exit(main())
