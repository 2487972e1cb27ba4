import json

import numpy as np
import pytest

from maensemble import data_io
from maensemble.cli import OUTPUT_ENV, main
from maensemble.config import PipelineConfig
from maensemble.core import CandidateSet, DetectorPair
from maensemble.pipeline import CandidateCache
from maensemble.search import SearchConfig, search_exhaustive

from conftest import POOL3, all_commands, run, tree


def test_synth_deterministic(tmp_path, workspace):
    for d in ("a", "b"):
        assert run("synth", "--spec", workspace / "spec.yaml", "--seed", 7, "--out", tmp_path / d) == 0
    assert tree(tmp_path / "a") == tree(tmp_path / "b")
    assert tree(tmp_path / "a") != tree(workspace / "data")


def test_search_matches_library(tmp_path, workspace):
    manifest = workspace / "data" / "manifest.json"
    assert run("search", "--config", workspace / "config.yaml", "--manifest", manifest, "--out", tmp_path) == 0
    report = json.loads((tmp_path / "search" / "report.json").read_text())
    ds = data_io.load_dataset(manifest)
    cfg = SearchConfig(pool=tuple(DetectorPair.parse(p) for p in POOL3), mode="exhaustive")
    lib = search_exhaustive(cfg, CandidateCache([s.image for s in ds]), [s.gt for s in ds])
    assert report["best_cpm"] == lib.best_cpm
    assert report["ensemble"] == [m.id for m in lib.best_ensemble.members]
    assert [(e["ensemble"], e["cpm"]) for e in report["evaluations"]] == lib.evaluation_log
    ens = (tmp_path / "search" / "ensemble.txt").read_text().split("\n")[1:-1]
    assert ens == report["ensemble"]


def test_evaluate_perfect_detector(tmp_path, workspace):
    manifest = workspace / "data" / "manifest.json"
    ds = data_io.load_dataset(manifest)
    for s in ds:
        data_io.save_candidates(tmp_path / "fused" / f"{s.name}.txt", CandidateSet(s.gt, np.ones(len(s.gt))))
    assert run("evaluate", "--fused", tmp_path / "fused", "--manifest", manifest, "--out", tmp_path / "o") == 0
    report = json.loads((tmp_path / "o" / "evaluation" / "report.json").read_text())
    assert report["cpm"] == 1.0 and report["partial_auc"] == 1.0
    assert report["n_lesions"] == sum(len(s.gt) for s in ds)


@pytest.mark.parametrize("report", ["json", "csv"])
def test_every_command_byte_identical_on_rerun(tmp_path, workspace, report):
    all_commands(workspace, tmp_path / "a", report)
    all_commands(workspace, tmp_path / "b", report)
    a, b = tree(tmp_path / "a"), tree(tmp_path / "b")
    assert a == b
    expected = {"manifest.json", "candidates/clahe__spencer/img_000.txt", "fused/img_003.txt",
                "search/ensemble.txt", "evaluation/froc.csv", "grading/grade.csv"}
    assert expected <= set(a)
    if report == "csv":
        assert {"search/log.csv", "search/membership.csv", "evaluation/summary.csv"} <= set(a)
        assert not any(k.endswith(".json") and k != "manifest.json" for k in a)


def test_grade_csv_columns(tmp_path, workspace):
    manifest = workspace / "data" / "manifest.json"
    run("fuse", "--ensemble", workspace / "ensemble.txt", "--manifest", manifest, "--out", tmp_path)
    assert run("grade", "--fused", tmp_path / "fused", "--manifest", manifest,
               "--thresholds", "0.5,1.0", "--out", tmp_path) == 0
    lines = (tmp_path / "grading" / "grade.csv").read_text().splitlines()
    assert lines[0].split(",") == ["threshold", "tp", "fn", "tn", "fp", "sensitivity", "specificity",
                                   "accuracy", "R0", "R1", "R2", "R3"]
    assert len(lines) == 3


def test_output_dir_precedence(tmp_path, workspace, monkeypatch, capsys):
    monkeypatch.setenv(OUTPUT_ENV, str(tmp_path / "env"))
    assert run("synth", "--spec", workspace / "spec.yaml") == 0
    assert (tmp_path / "env" / "manifest.json").is_file()
    assert run("synth", "--spec", workspace / "spec.yaml", "--out", tmp_path / "flag") == 0
    assert (tmp_path / "flag" / "manifest.json").is_file()
    monkeypatch.delenv(OUTPUT_ENV)
    monkeypatch.chdir(tmp_path)
    assert run("synth", "--spec", workspace / "spec.yaml") == 0
    assert (tmp_path / PipelineConfig().output_dir / "manifest.json").is_file()


@pytest.mark.parametrize("argv,msg", [
    (["extract", "--pair", "clahe/bogus", "--manifest", "{ws}/data/manifest.json"], "bad pair id"),
    (["evaluate", "--fused", "{ws}/nowhere", "--manifest", "{ws}/data/manifest.json"], "not found"),
    (["search", "--manifest", "{ws}/missing.json"], "cannot read manifest"),
    (["search", "--manifest", "{ws}/data/manifest.json", "--config", "{ws}/spec.yaml"], "unknown"),
    (["search", "--manifest", "{ws}/data/manifest.json", "--jobs", "0"], "jobs"),
    (["synth", "--spec", "{ws}/config.yaml"], "unknown"),
    (["search"], "manifest"),
])
def test_errors_exit_nonzero_with_diagnostic(tmp_path, workspace, capsys, argv, msg):
    argv = [a.format(ws=workspace) for a in argv] + ["--out", str(tmp_path)]
    assert main(argv) == 2
    err = capsys.readouterr().err
    assert err.startswith(f"maensemble {argv[0]}: error:") and msg in err
