"""Run configuration: YAML text mapped onto nested dataclasses.

Unknown keys anywhere in the file are errors, so a misspelt loss weight
cannot silently fall back to its default.
"""
from __future__ import annotations

import dataclasses
import types
import typing
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .losses import ALPHA_SSIM, ALL_TERMS, HUBER_BETA, LossWeights
from .metrics import DEPTH_CAP, GARG_CROP
from .optimizer import OptimizerConfig
from .sampling import ALPHA1, ALPHA2
from .triangulation import TAU_PARALLAX


class ConfigError(ValueError):
    pass


@dataclass
class SceneConfig:
    preset: str = "static"
    height: int = 64
    width: int = 96
    seed: int = 0
    # full scene description; overrides the preset when given
    spec: dict | None = None


@dataclass
class InputsConfig:
    # directory written by `gen`; when unset the scene is rendered in memory
    dir: str | None = None
    flow_noise: float = 0.25
    # reference flow handed to the flow-dependent terms: "noisy" or "gt"
    reference_flow: str = "noisy"
    depth_next: bool = False
    motion_flow_bwd: bool = False
    depth_labels: bool = False
    init_fill: float = 10.0

    def __post_init__(self):
        if self.reference_flow not in ("noisy", "gt"):
            raise ConfigError("inputs.reference_flow must be 'noisy' or 'gt'")
        if self.flow_noise < 0:
            raise ConfigError("inputs.flow_noise must be >= 0")


@dataclass
class MaskConfig:
    alpha1: float = ALPHA1
    alpha2: float = ALPHA2
    tau_parallax: float = TAU_PARALLAX
    # "fb": forward-backward check on the (noisy) flows, "gt": rendered co-visibility
    source: str = "fb"

    def __post_init__(self):
        if self.source not in ("fb", "gt", "none"):
            raise ConfigError("masks.source must be 'fb', 'gt' or 'none'")


@dataclass
class MetricsConfig:
    cap: float = DEPTH_CAP
    crop: typing.Any = None
    median_scale: bool = False
    disparity_scale: float | None = None
    baseline: float = 0.54

    def crop_box(self):
        if self.crop is None:
            return None
        if self.crop == "garg":
            return GARG_CROP
        if isinstance(self.crop, (list, tuple)) and len(self.crop) == 4:
            return tuple(float(c) for c in self.crop)
        raise ConfigError("metrics.crop must be null, 'garg' or four fractions")


@dataclass
class ExperimentConfig:
    name: str = "run"
    # evaluate only this surface id (e.g. 1 for the moving panel)
    eval_surface: int | None = None
    # erode the evaluation region by this many pixels
    eval_erode: int = 0


@dataclass
class OptimizerSection:
    lr: float = 1e-2
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    max_iter: int = 2000
    tol: float = 1e-7
    window: int = 10
    grad_tol: float = 1e-9
    mask_refresh: int = 25
    optimize_depth: bool = True
    optimize_sceneflow: bool = True
    freeze_invalid: bool = True
    alpha_ssim: float = ALPHA_SSIM
    huber_beta: float = HUBER_BETA


@dataclass
class RunConfig:
    seed: int = 0
    out: str = "out"
    scene: SceneConfig = field(default_factory=SceneConfig)
    inputs: InputsConfig = field(default_factory=InputsConfig)
    terms: tuple[str, ...] = ("photo_mot", "smooth")
    weights: LossWeights = field(default_factory=LossWeights)
    optimizer: OptimizerSection = field(default_factory=OptimizerSection)
    masks: MaskConfig = field(default_factory=MaskConfig)
    metrics: MetricsConfig = field(default_factory=MetricsConfig)
    experiment: ExperimentConfig = field(default_factory=ExperimentConfig)

    def __post_init__(self):
        self.terms = tuple(self.terms)
        bad = set(self.terms) - set(ALL_TERMS)
        if bad:
            raise ConfigError(f"unknown terms: {sorted(bad)}")
        try:
            self.optimizer_config()
        except ValueError as e:
            raise ConfigError(f"optimizer: {e}") from e

    def optimizer_config(self) -> OptimizerConfig:
        return OptimizerConfig(
            terms=self.terms, weights=self.weights, **dataclasses.asdict(self.optimizer)
        )

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["terms"] = list(self.terms)
        return d


def _build(cls, data, where: str):
    if data is None:
        return cls()
    if not isinstance(data, dict):
        raise ConfigError(f"{where or 'config'}: expected a mapping")
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    extra = set(data) - names
    if extra:
        raise ConfigError(f"unknown keys in {where or 'config'}: {sorted(extra)}")
    kwargs = {}
    for k, v in data.items():
        hint = hints[k]
        if dataclasses.is_dataclass(hint):
            kwargs[k] = _build(hint, v, f"{where}.{k}" if where else k)
        else:
            kwargs[k] = _coerce(hint, v, f"{where}.{k}" if where else k)
    try:
        return cls(**kwargs)
    except ConfigError:
        raise
    except (TypeError, ValueError) as e:
        raise ConfigError(f"{where or 'config'}: {e}") from e


def _coerce(hint, v, where):
    origin = typing.get_origin(hint)
    args = typing.get_args(hint)
    if origin in (typing.Union, types.UnionType):
        if v is None and type(None) in args:
            return None
        hint = next(a for a in args if a is not type(None))
        origin = typing.get_origin(hint)
    if hint is typing.Any:
        return v
    if v is None:
        raise ConfigError(f"{where}: value required")
    if origin is tuple:
        if not isinstance(v, (list, tuple)):
            raise ConfigError(f"{where}: expected a list")
        return tuple(v)
    if hint is bool:
        if not isinstance(v, bool):
            raise ConfigError(f"{where}: expected true/false")
        return v
    if hint is float:
        # YAML 1.1 reads exponent literals without a dot (1e-2) as strings
        if isinstance(v, str):
            try:
                return float(v)
            except ValueError:
                pass
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            raise ConfigError(f"{where}: expected a number")
        return float(v)
    if hint is int:
        if isinstance(v, bool) or not isinstance(v, int):
            raise ConfigError(f"{where}: expected an integer")
        return v
    if hint is str and not isinstance(v, str):
        raise ConfigError(f"{where}: expected a string")
    return v


def from_dict(data: dict | None) -> RunConfig:
    return _build(RunConfig, {} if data is None else data, "")


def load(path) -> RunConfig:
    try:
        data = yaml.safe_load(Path(path).read_text())
    except yaml.YAMLError as e:
        raise ConfigError(f"{path}: {e}") from e
    return from_dict(data)


def dump(cfg: RunConfig) -> str:
    return yaml.safe_dump(cfg.to_dict(), sort_keys=True)
