"""Command-line interface: thin wrappers over the library.

Every command writes into an output directory chosen by ``--out``, else
the ``MAENSEMBLE_OUTPUT_DIR`` environment variable, else the config's
``output_dir``. Files are written atomically and contain no timestamps,
so re-running a command with the same inputs reproduces them byte for
byte.
"""
from __future__ import annotations

import argparse
import csv
import io
import math
import os
import sys
from dataclasses import replace
from pathlib import Path

import yaml

from . import data_io
from .config import PipelineConfig, load_config
from .core import CandidateSet, ConfigError, DetectorPair, Ensemble, MAError
from .evaluation import cpm, froc, grade, partial_auc
from .fuse import fuse
from .pipeline import CandidateCache
from .search import membership_table, run_search
from .synthetic import SyntheticSpec, generate_synthetic

OUTPUT_ENV = "MAENSEMBLE_OUTPUT_DIR"


def _csv(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerows(rows)
    return buf.getvalue()


def _num(v):
    """JSON-safe number: NaN becomes null."""
    if v is None or (isinstance(v, float) and math.isnan(v)):
        return None
    return v


def output_dir(args, cfg: PipelineConfig) -> Path:
    if getattr(args, "out", None):
        return Path(args.out)
    env = os.environ.get(OUTPUT_ENV)
    return Path(env) if env else Path(cfg.output_dir)


def _manifest(args, cfg: PipelineConfig, fallback: str | None) -> Path:
    path = args.manifest or fallback
    if not path:
        raise ConfigError("no dataset manifest given (use --manifest or the config's data section)")
    return Path(path)


def read_ensemble_file(path, merge_radius: float) -> Ensemble:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read ensemble file {path}: {exc.strerror}") from None
    ids = [ln.split("#", 1)[0].strip() for ln in text.splitlines()]
    ids = [i for i in ids if i]
    if not ids:
        raise ConfigError(f"ensemble file {path} lists no pairs")
    return Ensemble.from_ids(ids, merge_radius)


def format_ensemble(e: Ensemble) -> str:
    return "# ensemble members, one pair per line\n" + "".join(f"{m.id}\n" for m in e.members)


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_synth(args, cfg: PipelineConfig) -> Path:
    spec = SyntheticSpec()
    if args.spec:
        try:
            data = yaml.safe_load(Path(args.spec).read_text(encoding="utf-8")) or {}
        except OSError as exc:
            raise ConfigError(f"cannot read synthetic spec {args.spec}: {exc.strerror}") from None
        if not isinstance(data, dict):
            raise ConfigError("synthetic spec must be a mapping")
        known = {f for f in SyntheticSpec.__dataclass_fields__}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"synthetic spec: unknown key(s) {unknown}")
        conv = {k: (tuple(tuple(x) if isinstance(x, list) else x for x in v) if isinstance(v, list) else v)
                for k, v in data.items()}
        spec = SyntheticSpec(**conv)
    if args.seed is not None:
        spec = replace(spec, seed=args.seed)
    out = output_dir(args, cfg)
    return data_io.save_dataset(generate_synthetic(spec), out)


def _cache(ds, cfg: PipelineConfig, jobs: int) -> CandidateCache:
    return CandidateCache([s.image for s in ds], cfg.pair_params.at_scale(ds.scale), jobs)


def cmd_extract(args, cfg: PipelineConfig) -> Path:
    pair = DetectorPair.parse(args.pair)
    ds = data_io.load_dataset(_manifest(args, cfg, cfg.data.train_manifest))
    cache = _cache(ds, cfg, args.jobs or cfg.jobs).build([pair])
    out = output_dir(args, cfg) / "candidates" / pair.id.replace("/", "__")
    for i, s in enumerate(ds):
        data_io.save_candidates(out / data_io.candidate_filename(s.name), cache.get(pair, i))
    return out


def cmd_fuse(args, cfg: PipelineConfig) -> Path:
    ds = data_io.load_dataset(_manifest(args, cfg, cfg.data.test_manifest))
    ens = read_ensemble_file(args.ensemble, cfg.fusion.merge_radius * ds.scale)
    cache = _cache(ds, cfg, args.jobs or cfg.jobs).build(ens.members)
    out = output_dir(args, cfg) / "fused"
    for i, s in enumerate(ds):
        fused = fuse({m: cache.get(m, i) for m in ens.members}, ens)
        data_io.save_candidates(out / data_io.candidate_filename(s.name), fused)
    return out


def search_report(result, cfg) -> dict:
    return {
        "best_cpm": result.best_cpm,
        "ensemble": [m.id for m in result.best_ensemble.members],
        "membership": membership_table(result.best_ensemble),
        "mode": cfg.mode,
        "evaluations": [{"ensemble": sig, "cpm": score} for sig, score in result.evaluation_log],
    }


def cmd_search(args, cfg: PipelineConfig) -> Path:
    ds = data_io.load_dataset(_manifest(args, cfg, cfg.data.train_manifest))
    scfg = cfg.search_config(ds.scale, args.seed)
    if args.mode:
        scfg = replace(scfg, mode=args.mode)
    cache = _cache(ds, cfg, args.jobs or cfg.jobs)
    result = run_search(scfg, cache, [s.gt for s in ds])
    out = output_dir(args, cfg) / "search"
    data_io.write_text_atomic(out / "ensemble.txt", format_ensemble(result.best_ensemble))
    report = search_report(result, scfg)
    if args.report == "csv":
        data_io.write_text_atomic(out / "membership.csv", _csv(report["membership"]))
        data_io.write_text_atomic(out / "log.csv", _csv(
            [["step", "ensemble", "cpm"]]
            + [[i, sig, repr(score)] for i, (sig, score) in enumerate(result.evaluation_log)]))
        data_io.write_text_atomic(out / "summary.csv", _csv(
            [["best_cpm", "ensemble"], [repr(result.best_cpm), result.best_ensemble.signature]]))
    else:
        data_io.write_text_atomic(out / "report.json", data_io.dumps_json(report))
    return out


def _fused_sets(args, ds) -> list[CandidateSet]:
    sets = data_io.load_candidate_dir(args.fused, [s.name for s in ds])
    for s, c in zip(ds, sets):
        if len(c) and c.confidence is None:
            raise data_io.LoadError(f"fused file for {s.name} has no confidence column")
    return [c if c.confidence is not None else CandidateSet.empty(with_confidence=True) for c in sets]


def cmd_evaluate(args, cfg: PipelineConfig) -> Path:
    ds = data_io.load_dataset(_manifest(args, cfg, cfg.data.test_manifest))
    sets = _fused_sets(args, ds)
    curve = froc(sets, [s.gt for s in ds], cfg.evaluation.radius * ds.scale)
    out = output_dir(args, cfg) / "evaluation"
    data_io.write_text_atomic(out / "froc.csv", _csv(
        [["threshold", "avg_fp_per_image", "sensitivity"]]
        + [[repr(t), repr(f), repr(s)] for t, f, s in zip(curve.thresholds, curve.avg_fp, curve.sensitivity)]))
    summary = {"cpm": cpm(curve), "partial_auc": partial_auc(curve),
               "n_images": curve.n_images, "n_lesions": curve.n_lesions}
    if args.report == "csv":
        keys = sorted(summary)
        data_io.write_text_atomic(out / "summary.csv", _csv([keys, [repr(summary[k]) for k in keys]]))
    else:
        data_io.write_text_atomic(out / "report.json", data_io.dumps_json(summary))
    return out


def _thresholds(text: str | None, cfg: PipelineConfig) -> list[float]:
    if not text:
        return list(cfg.evaluation.grade_thresholds)
    try:
        return [float(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise ConfigError(f"--thresholds must be comma-separated numbers, got {text!r}") from None


def cmd_grade(args, cfg: PipelineConfig) -> Path:
    ds = data_io.load_dataset(_manifest(args, cfg, cfg.data.test_manifest))
    if not ds.grading:
        raise ConfigError("grading needs a manifest that declares grading mode")
    sets = _fused_sets(args, ds)
    rep = grade(sets, [s.grade for s in ds], _thresholds(args.thresholds, cfg))
    out = output_dir(args, cfg) / "grading"
    header = ["threshold", "tp", "fn", "tn", "fp", "sensitivity", "specificity", "accuracy",
              "R0", "R1", "R2", "R3"]
    rows = [[repr(r.threshold), r.tp, r.fn, r.tn, r.fp, repr(r.sensitivity), repr(r.specificity),
             repr(r.accuracy), *[repr(v) for v in r.per_grade]] for r in rep.rows]
    data_io.write_text_atomic(out / "grade.csv", _csv([header] + rows))
    if args.report == "json":
        doc = {
            "auc": rep.auc,
            "rows": [{"threshold": r.threshold, "tp": r.tp, "fn": r.fn, "tn": r.tn, "fp": r.fp,
                      "sensitivity": _num(r.sensitivity), "specificity": _num(r.specificity),
                      "accuracy": _num(r.accuracy), "per_grade": [_num(v) for v in r.per_grade]}
                     for r in rep.rows],
        }
        data_io.write_text_atomic(out / "report.json", data_io.dumps_json(doc))
    return out


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="maensemble", description="Ensemble microaneurysm detection pipeline.")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="pipeline config (YAML); defaults apply when omitted")
    common.add_argument("--seed", type=int, default=None, help="seed for stochastic steps")
    common.add_argument("--jobs", type=int, default=None, help="worker threads (default from config)")
    common.add_argument("--report", choices=("json", "csv"), default="json")
    common.add_argument("--out", help=f"output directory (overrides ${OUTPUT_ENV} and the config)")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", parents=[common], help="write a synthetic dataset and manifest")
    s.add_argument("--spec", help="YAML file with synthetic generator settings")
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("extract", parents=[common], help="run one pair on every image")
    s.add_argument("--pair", required=True, help="pair id, e.g. clahe/walter")
    s.add_argument("--manifest")
    s.set_defaults(func=cmd_extract)

    s = sub.add_parser("fuse", parents=[common], help="fuse an ensemble's candidates per image")
    s.add_argument("--ensemble", required=True, help="file with one pair id per line")
    s.add_argument("--manifest")
    s.set_defaults(func=cmd_fuse)

    s = sub.add_parser("search", parents=[common], help="select the ensemble maximizing training CPM")
    s.add_argument("--manifest")
    s.add_argument("--mode", choices=("exhaustive", "annealing"))
    s.set_defaults(func=cmd_search)

    s = sub.add_parser("evaluate", parents=[common], help="FROC, CPM and partial AUC of fused output")
    s.add_argument("--fused", required=True, help="directory of fused candidate files")
    s.add_argument("--manifest")
    s.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("grade", parents=[common], help="image-level DR grading at confidence thresholds")
    s.add_argument("--fused", required=True)
    s.add_argument("--manifest")
    s.add_argument("--thresholds", help="comma-separated thresholds (default from config)")
    s.set_defaults(func=cmd_grade)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.jobs is not None and args.jobs < 1:
            raise ConfigError("--jobs must be >= 1")
        cfg = load_config(args.config)
        out = args.func(args, cfg)
    except (MAError, OSError) as exc:
        print(f"maensemble {args.command}: error: {exc}", file=sys.stderr)
        return 2
    print(out)
    return 0


if __name__ == "__main__":
    sys.exit(main())
