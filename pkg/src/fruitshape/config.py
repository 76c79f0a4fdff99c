"""Hierarchical pipeline configuration (JSON on disk)."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields

from .fit import FitConfig
from .scene import SceneSpec
from .segment import ClusterParams, ColorThreshold
from .tsdf import TsdfConfig


@dataclass(frozen=True)
class FilterConfig:
    mean_k: int = 50
    stddev_mult: float = 1.0
    normal_k: int = 30

    def __post_init__(self):
        if self.mean_k < 1:
            raise ValueError("mean_k must be >= 1")
        if self.normal_k < 2:
            raise ValueError("normal_k must be >= 2")


@dataclass(frozen=True)
class EvalConfig:
    max_center_dist: float = 0.20
    thresholds: tuple[float, ...] = (float("-inf"), 0.0, 0.5)

    def __post_init__(self):
        if not self.max_center_dist > 0:
            raise ValueError("max_center_dist must be positive")


@dataclass(frozen=True)
class PipelineConfig:
    tsdf: TsdfConfig = field(default_factory=TsdfConfig)
    cluster: ClusterParams = field(default_factory=ClusterParams)
    fit: FitConfig = field(default_factory=FitConfig)
    scene: SceneSpec = field(default_factory=SceneSpec)
    color: ColorThreshold = field(default_factory=ColorThreshold)
    filter: FilterConfig = field(default_factory=FilterConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    threads: int = 1

    def to_dict(self) -> dict:
        d = asdict(self)
        d["eval"]["thresholds"] = [_enc_float(v) for v in d["eval"]["thresholds"]]
        return d

    @classmethod
    def from_dict(cls, data: dict | None) -> PipelineConfig:
        data = dict(data or {})
        kwargs = {}
        known = {f.name: f for f in fields(cls)}
        for key, value in data.items():
            if key not in known:
                raise ValueError(f"unknown config section {key!r}")
            if key == "threads":
                kwargs[key] = int(value)
                continue
            section_cls = _SECTIONS[key]
            kwargs[key] = _build(section_cls, value, key)
        return cls(**kwargs)

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


_SECTIONS = {
    "tsdf": TsdfConfig,
    "cluster": ClusterParams,
    "fit": FitConfig,
    "scene": SceneSpec,
    "color": ColorThreshold,
    "filter": FilterConfig,
    "eval": EvalConfig,
}


def _enc_float(v):
    if v == float("inf"):
        return "inf"
    if v == float("-inf"):
        return "-inf"
    return v


def _build(section_cls, value, name):
    if not isinstance(value, dict):
        raise ValueError(f"config section {name!r} must be a mapping")
    names = {f.name for f in fields(section_cls)}
    unknown = set(value) - names
    if unknown:
        raise ValueError(f"unknown keys in section {name!r}: {sorted(unknown)}")
    return section_cls(**{k: _tuplify(v) for k, v in value.items()})


def _tuplify(v):
    if isinstance(v, list):
        return tuple(_tuplify(x) for x in v)
    if v in ("inf", "-inf"):
        return float(v)
    return v


def load_config(path=None) -> PipelineConfig:
    if path is None:
        return PipelineConfig()
    with open(path) as fh:
        return PipelineConfig.from_dict(json.load(fh))
