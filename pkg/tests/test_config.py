import dataclasses

import pytest

from maensemble.config import (
    DEFAULTS_PATH, PipelineConfig, config_from_dict, config_to_dict, dump_config, load_config,
)
from maensemble.core import ConfigError


def test_committed_defaults_match_dataclasses():
    assert load_config(DEFAULTS_PATH) == PipelineConfig()
    assert load_config(None) == PipelineConfig()


def test_dump_load_roundtrip(tmp_path):
    cfg = config_from_dict({"search": {"mode": "exhaustive", "pool": ["clahe/walter"]}, "jobs": 2})
    p = tmp_path / "c.yaml"
    p.write_text(dump_config(cfg))
    assert load_config(p) == cfg
    assert config_to_dict(cfg)["search"]["pool"] == ["clahe/walter"]


def test_partial_override_keeps_defaults():
    cfg = config_from_dict({"fusion": {"merge_radius": 7}})
    assert cfg.fusion.merge_radius == 7.0 and isinstance(cfg.fusion.merge_radius, float)
    assert cfg.evaluation == PipelineConfig().evaluation


def test_search_config_scales_radii_and_overrides_seed():
    sc = PipelineConfig().search_config(scale=2.0, seed=9)
    assert sc.merge_radius == 10.0 and sc.eval_radius == 10.0 and sc.annealing.seed == 9
    assert len(sc.pool) == 25


@pytest.mark.parametrize("data,msg", [
    ({"fusion": {"radius": 3}}, "unknown"),
    ({"nonsense": 1}, "unknown"),
    ({"search": {"annealing": {"colling": 0.9}}}, "search.annealing"),
    ({"jobs": 1.5}, "integer"),
    ({"jobs": "2"}, "number"),
    ({"jobs": True}, "number"),
    ({"fusion": {"merge_radius": -1}}, "positive"),
    ({"search": {"pool": ["clahe/nothing"]}}, "pair"),
    ({"search": {"pool": "clahe/walter"}}, "list"),
    ({"search": {"mode": "greedy"}}, "mode"),
    ({"search": {"annealing": {"cooling": 2.0}}}, "cooling"),
    ({"fusion": 5}, "mapping"),
])
def test_invalid_configs_rejected(data, msg):
    with pytest.raises(ConfigError, match=msg):
        cfg = config_from_dict(data)
        cfg.search_config()


def test_unreadable_and_malformed_files(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.yaml")
    bad = tmp_path / "bad.yaml"
    bad.write_text("a: [1, 2\n")
    with pytest.raises(ConfigError, match="YAML"):
        load_config(bad)


def test_every_section_is_a_frozen_dataclass():
    cfg = PipelineConfig()
    for f in dataclasses.fields(cfg):
        v = getattr(cfg, f.name)
        if dataclasses.is_dataclass(v):
            with pytest.raises(dataclasses.FrozenInstanceError):
                setattr(v, dataclasses.fields(v)[0].name, None)
