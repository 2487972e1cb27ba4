import os

from pathlib import Path

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from maensemble.cli import main

settings.register_profile(
    "default", max_examples=60, deadline=None,
    suppress_health_check=[HealthCheck.too_slow, HealthCheck.data_too_large],
)
settings.register_profile("ci", max_examples=200, deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def small_dataset():
    from maensemble.synthetic import SyntheticSpec, generate_synthetic

    return generate_synthetic(SyntheticSpec(n_images=6, seed=3, ma_counts=((2, 4),) * 4))


# --- CLI helpers shared by the CLI and acceptance suites ---

SPEC = """n_images: 4
height: 96
width: 96
seed: 1
ma_counts: [[0, 0], [2, 3], [3, 5], [5, 6]]
ma_radius: [2.5, 4.0]
"""
POOL3 = ["none/walter", "clahe/spencer", "illumination_eq/lazar"]


def run(*argv):
    return main([str(a) for a in argv])


def all_commands(ws, out, report):
    manifest = ws / "data" / "manifest.json"
    common = ["--config", ws / "config.yaml", "--report", report, "--out", out, "--seed", 3]
    assert run("synth", "--spec", ws / "spec.yaml", *common) == 0
    assert run("extract", "--pair", "clahe/spencer", "--manifest", manifest, *common) == 0
    assert run("fuse", "--ensemble", ws / "ensemble.txt", "--manifest", manifest, *common) == 0
    assert run("search", "--manifest", manifest, "--mode", "annealing", *common) == 0
    assert run("evaluate", "--fused", out / "fused", "--manifest", manifest, *common) == 0
    assert run("grade", "--fused", out / "fused", "--manifest", manifest, *common) == 0


def tree(root: Path) -> dict:
    return {p.relative_to(root).as_posix(): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


@pytest.fixture(scope="session")
def workspace(tmp_path_factory):
    ws = tmp_path_factory.mktemp("cli")
    (ws / "spec.yaml").write_text(SPEC)
    (ws / "config.yaml").write_text(
        "search:\n  mode: exhaustive\n  pool:\n" + "".join(f"  - {p}\n" for p in POOL3))
    (ws / "ensemble.txt").write_text("# two members\nnone/walter\nclahe/spencer\n")
    assert run("synth", "--spec", ws / "spec.yaml", "--out", ws / "data") == 0
    return ws
