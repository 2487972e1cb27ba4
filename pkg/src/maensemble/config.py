"""Pipeline configuration: nested dataclasses loaded from YAML.

Every section mirrors a parameter dataclass; unknown keys are rejected
and omitted keys keep their defaults. ``defaults.yaml`` next to this file
materializes the full default tree.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import yaml

from .core import ConfigError, DetectorPair, all_pairs
from .extract import ExtractParams
from .pipeline import PairParams
from .preprocess import PreprocessParams
from .search import AnnealingConfig, SearchConfig

DEFAULTS_PATH = Path(__file__).with_name("defaults.yaml")
GRADE_THRESHOLDS = (0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0)


@dataclass(frozen=True)
class FusionConfig:
    merge_radius: float = 5.0


@dataclass(frozen=True)
class EvaluationConfig:
    radius: float = 5.0
    grade_thresholds: tuple[float, ...] = GRADE_THRESHOLDS


@dataclass(frozen=True)
class SearchSection:
    pool: tuple[str, ...] = tuple(p.id for p in all_pairs())
    mode: str = "annealing"
    exhaustive_cap: int = 12
    annealing: AnnealingConfig = field(default_factory=AnnealingConfig)


@dataclass(frozen=True)
class DataConfig:
    train_manifest: str | None = None
    test_manifest: str | None = None


@dataclass(frozen=True)
class PipelineConfig:
    preprocess: PreprocessParams = field(default_factory=PreprocessParams)
    extract: ExtractParams = field(default_factory=ExtractParams)
    fusion: FusionConfig = field(default_factory=FusionConfig)
    evaluation: EvaluationConfig = field(default_factory=EvaluationConfig)
    search: SearchSection = field(default_factory=SearchSection)
    data: DataConfig = field(default_factory=DataConfig)
    output_dir: str = "maensemble_out"
    jobs: int = 1

    def __post_init__(self):
        if not (self.fusion.merge_radius > 0 and self.evaluation.radius > 0):
            raise ConfigError("fusion.merge_radius and evaluation.radius must be positive")
        if self.jobs < 1:
            raise ConfigError("jobs must be >= 1")
        self.pool()  # validates pair ids

    @property
    def pair_params(self) -> PairParams:
        return PairParams(self.preprocess, self.extract)

    def pool(self) -> tuple[DetectorPair, ...]:
        return tuple(DetectorPair.parse(p) for p in self.search.pool)

    def search_config(self, scale: float = 1.0, seed: int | None = None) -> SearchConfig:
        ann = self.search.annealing
        if seed is not None:
            ann = dataclasses.replace(ann, seed=seed)
        return SearchConfig(
            pool=self.pool(), mode=self.search.mode, annealing=ann,
            exhaustive_cap=self.search.exhaustive_cap,
            merge_radius=self.fusion.merge_radius * scale,
            eval_radius=self.evaluation.radius * scale,
        )


def _build(cls, data: Any, where: str):
    if data is None:
        return cls()
    if not isinstance(data, dict):
        raise ConfigError(f"{where or 'config'}: expected a mapping, got {type(data).__name__}")
    defaults = cls()
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - names)
    if unknown:
        raise ConfigError(f"{where or 'config'}: unknown key(s) {unknown}")
    kwargs = {}
    for key, value in data.items():
        path = f"{where}.{key}" if where else key
        default = getattr(defaults, key)
        if dataclasses.is_dataclass(default):
            kwargs[key] = _build(type(default), value, path)
        elif isinstance(default, tuple):
            if not isinstance(value, (list, tuple)):
                raise ConfigError(f"{path}: expected a list")
            kwargs[key] = tuple(value)
        elif isinstance(default, bool):
            if not isinstance(value, bool):
                raise ConfigError(f"{path}: expected true/false")
            kwargs[key] = value
        elif isinstance(default, (int, float)):
            if isinstance(value, bool) or not isinstance(value, (int, float)):
                raise ConfigError(f"{path}: expected a number, got {value!r}")
            if isinstance(default, int) and not float(value).is_integer():
                raise ConfigError(f"{path}: expected an integer, got {value!r}")
            kwargs[key] = type(default)(value)
        else:
            kwargs[key] = value
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where or 'config'}: {exc}") from None


def config_from_dict(data: dict | None) -> PipelineConfig:
    return _build(PipelineConfig, data, "")


def load_config(path=None) -> PipelineConfig:
    """Config from a YAML file; ``None`` gives the built-in defaults."""
    if path is None:
        return PipelineConfig()
    try:
        data = yaml.safe_load(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    except yaml.YAMLError as exc:
        raise ConfigError(f"config {path} is not valid YAML: {exc}") from None
    return config_from_dict(data)


def config_to_dict(cfg) -> dict:
    out = {}
    for f in dataclasses.fields(cfg):
        v = getattr(cfg, f.name)
        if dataclasses.is_dataclass(v):
            out[f.name] = config_to_dict(v)
        elif isinstance(v, tuple):
            out[f.name] = list(v)
        else:
            out[f.name] = v
    return out


def dump_config(cfg: PipelineConfig) -> str:
    return yaml.safe_dump(config_to_dict(cfg), sort_keys=False, default_flow_style=False)
