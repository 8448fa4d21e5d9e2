"""Experiment configuration: one JSON document, strictly validated.

Unknown keys are rejected and every error names the offending field by its
dotted path, e.g. ``optimizer.tau: must be > 0``.
"""
from __future__ import annotations

import dataclasses
import json
import typing
from dataclasses import dataclass, field
from pathlib import Path

from geomatch.errors import ConfigError
from geomatch.optimizer import OptimizerConfig

SCHEMA_VERSION = 1
METHODS = ("baseline", "geo", "geo+anchors", "anchors-concat", "gt")
DEFAULT_METHODS = ("baseline", "geo", "geo+anchors", "anchors-concat")


@dataclass(frozen=True)
class SceneSection:
    n_points: int = 400
    ambiguity_fraction: float = 0.3
    descriptor_dim: int = 64
    fine_dim: int = 16
    half_extent: float = 5.0
    texture_scale: float = 0.3
    planar: bool = False


@dataclass(frozen=True)
class RenderSection:
    image_width: int = 832
    image_height: int = 624
    coarse_cell_px: int = 16
    fine_cell_px: int = 4
    noise_sigma: float = 0.05


@dataclass(frozen=True)
class BaseView:
    distance: float = 10.0
    alpha: float = 0.0
    beta: float = 0.0


@dataclass(frozen=True)
class SweepSection:
    variables: tuple[str, ...] = ("distance", "alpha", "beta")
    start: float = 5.0
    end: float = 40.0
    step: float = 5.0
    pairs_per_step: int = 5
    base: BaseView = BaseView()


@dataclass(frozen=True)
class AnchorSection:
    count: int = 64
    pixel_noise: float = 0.5
    min_confidence: float = 0.6


@dataclass(frozen=True)
class MatchingSection:
    temperature: float = 0.1


@dataclass(frozen=True)
class RefinementSection:
    window: int = 5
    temperature: float = 0.1


@dataclass(frozen=True)
class EvaluationSection:
    precision_threshold: float = 1e-4
    pose_thresholds: tuple[float, ...] = (5.0, 10.0, 20.0)
    homography_thresholds: tuple[float, ...] = (3.0, 5.0, 10.0)
    ransac_threshold_px: float = 1.0
    homography_ransac_threshold_px: float = 3.0
    ransac_max_iters: int = 2000
    quantize_px: typing.Optional[float] = None


@dataclass(frozen=True)
class ExperimentConfig:
    schema_version: int = SCHEMA_VERSION
    seed: int = 0
    scene: SceneSection = SceneSection()
    render: RenderSection = RenderSection()
    sweep: SweepSection = SweepSection()
    anchors: AnchorSection = AnchorSection()
    matching: MatchingSection = MatchingSection()
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    refinement: RefinementSection = RefinementSection()
    evaluation: EvaluationSection = EvaluationSection()
    methods: tuple[str, ...] = DEFAULT_METHODS

    def to_dict(self) -> dict:
        return _to_plain(self)


def _to_plain(obj):
    if dataclasses.is_dataclass(obj):
        return {f.name: _to_plain(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
    if isinstance(obj, tuple):
        return [_to_plain(v) for v in obj]
    return obj


def _coerce(tp, value, path):
    origin = typing.get_origin(tp)
    if dataclasses.is_dataclass(tp):
        return _build(tp, value, path)
    if origin is typing.Union:
        args = [a for a in typing.get_args(tp) if a is not type(None)]
        if value is None:
            return None
        return _coerce(args[0], value, path)
    if origin is tuple:
        if not isinstance(value, list):
            raise ConfigError(f"{path}: expected a list")
        (inner, _) = typing.get_args(tp)
        return tuple(_coerce(inner, v, f"{path}[{k}]") for k, v in enumerate(value))
    if tp is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"{path}: expected true/false")
        return value
    if tp is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{path}: expected an integer")
        return value
    if tp is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{path}: expected a number")
        return float(value)
    if tp is str:
        if not isinstance(value, str):
            raise ConfigError(f"{path}: expected a string")
        return value
    raise ConfigError(f"{path}: unsupported field type {tp}")  # pragma: no cover


def _build(cls, data, path):
    if not isinstance(data, dict):
        raise ConfigError(f"{path or '<root>'}: expected an object")
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - names)
    if unknown:
        where = f"{path}.{unknown[0]}" if path else unknown[0]
        raise ConfigError(f"{where}: unknown key")
    kwargs = {k: _coerce(hints[k], v, f"{path}.{k}" if path else k) for k, v in data.items()}
    try:
        return cls(**kwargs)
    except ValueError as exc:
        raise ConfigError(f"{path or '<root>'}: {exc}") from exc


def _validate(cfg: ExperimentConfig) -> None:
    def need(cond, where, msg):
        if not cond:
            raise ConfigError(f"{where}: {msg}")

    need(cfg.schema_version == SCHEMA_VERSION, "schema_version", f"unsupported version (expected {SCHEMA_VERSION})")
    s, r, sw, ev = cfg.scene, cfg.render, cfg.sweep, cfg.evaluation
    need(s.n_points >= 8, "scene.n_points", "must be >= 8")
    need(0 <= s.ambiguity_fraction < 1, "scene.ambiguity_fraction", "must lie in [0, 1)")
    need(s.descriptor_dim >= 1, "scene.descriptor_dim", "must be >= 1")
    need(s.fine_dim >= 1, "scene.fine_dim", "must be >= 1")
    need(s.half_extent > 0, "scene.half_extent", "must be > 0")
    need(s.texture_scale > 0, "scene.texture_scale", "must be > 0")
    need(r.coarse_cell_px > 0, "render.coarse_cell_px", "must be > 0")
    need(r.fine_cell_px > 0 and r.coarse_cell_px % r.fine_cell_px == 0, "render.fine_cell_px", "must divide coarse_cell_px")
    need(r.image_width > 0 and r.image_width % r.coarse_cell_px == 0, "render.image_width", "must be a positive multiple of coarse_cell_px")
    need(r.image_height > 0 and r.image_height % r.coarse_cell_px == 0, "render.image_height", "must be a positive multiple of coarse_cell_px")
    need(r.noise_sigma >= 0, "render.noise_sigma", "must be >= 0")
    need(len(sw.variables) > 0, "sweep.variables", "must not be empty")
    for k, v in enumerate(sw.variables):
        need(v in ("distance", "alpha", "beta"), f"sweep.variables[{k}]", f"unknown variable {v!r}")
    need(len(set(sw.variables)) == len(sw.variables), "sweep.variables", "duplicates")
    need(sw.start <= sw.end, "sweep.start", "must not exceed sweep.end")
    need(sw.step > 0, "sweep.step", "must be > 0")
    need(sw.pairs_per_step >= 1, "sweep.pairs_per_step", "must be >= 1")
    need(sw.base.distance > 0, "sweep.base.distance", "must be > 0")
    need(cfg.anchors.count >= 0, "anchors.count", "must be >= 0")
    need(cfg.anchors.pixel_noise >= 0, "anchors.pixel_noise", "must be >= 0")
    need(0 <= cfg.anchors.min_confidence <= 1, "anchors.min_confidence", "must lie in [0, 1]")
    need(cfg.matching.temperature > 0, "matching.temperature", "must be > 0")
    need(cfg.refinement.window >= 3 and cfg.refinement.window % 2 == 1, "refinement.window", "must be odd and >= 3")
    need(cfg.refinement.temperature > 0, "refinement.temperature", "must be > 0")
    need(ev.precision_threshold > 0, "evaluation.precision_threshold", "must be > 0")
    for name in ("pose_thresholds", "homography_thresholds"):
        th = getattr(ev, name)
        need(len(th) > 0 and all(t > 0 for t in th) and list(th) == sorted(set(th)), f"evaluation.{name}", "must be positive and strictly ascending")
    need(ev.ransac_threshold_px > 0, "evaluation.ransac_threshold_px", "must be > 0")
    need(ev.homography_ransac_threshold_px > 0, "evaluation.homography_ransac_threshold_px", "must be > 0")
    need(ev.ransac_max_iters >= 1, "evaluation.ransac_max_iters", "must be >= 1")
    need(ev.quantize_px is None or ev.quantize_px > 0, "evaluation.quantize_px", "must be > 0 or null")
    need(len(cfg.methods) > 0, "methods", "must not be empty")
    for k, m in enumerate(cfg.methods):
        need(m in METHODS, f"methods[{k}]", f"unknown method {m!r} (choose from {', '.join(METHODS)})")


def config_from_dict(data: dict) -> ExperimentConfig:
    if not isinstance(data, dict):
        raise ConfigError("<root>: expected a JSON object")
    if "schema_version" not in data:
        raise ConfigError("schema_version: required")
    cfg = _build(ExperimentConfig, data, "")
    _validate(cfg)
    return cfg


def load_config(path) -> ExperimentConfig:
    if path is None:
        return ExperimentConfig()
    try:
        text = Path(path).read_text()
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON at line {exc.lineno}: {exc.msg}") from exc
    return config_from_dict(data)


def replace(cfg: ExperimentConfig, **changes) -> ExperimentConfig:
    out = dataclasses.replace(cfg, **changes)
    _validate(out)
    return out
