""" Typed configuration for every tunable constant of the navigation pipeline. """

from __future__ import annotations

import dataclasses
import hashlib
import json
import logging
import os
from dataclasses import asdict, dataclass, field, fields, is_dataclass
from pathlib import Path
from typing import Any, Dict, Literal, Optional, Union

REASONER_URL_ENV: str = "TOPV_REASONER_URL"

FusionMode = Literal["gaussian", "max"]
DecayMode = Literal["relative", "absolute"]
ScalingRule = Literal["iou", "separating"]
ReasonerKind = Literal["heuristic", "scripted", "random", "remote"]


@dataclass(frozen=True)
class WorldConfig:
    forward_step: float = 0.25
    turn_degrees: float = 30.0
    fov_degrees: float = 90.0
    max_depth: float = 5.0
    success_distance: float = 1.0
    meters_per_cell: float = 0.05

    def __post_init__(self) -> None:
        if self.forward_step <= 0 or self.max_depth <= 0 or self.meters_per_cell <= 0:
            raise ValueError(f"World lengths must be positive, got {self}")
        if not 0 < self.fov_degrees <= 360:
            raise ValueError(f"fov_degrees={self.fov_degrees} must be in (0, 360]")


@dataclass(frozen=True)
class MapConfig:
    width: int = 1000
    height: int = 1000
    min_frontier_size: int = 3
    dedup_radius: float = 0.25

    def __post_init__(self) -> None:
        if self.width <= 0 or self.height <= 0:
            raise ValueError(f"Map must have cells, got {self.width}x{self.height}")


@dataclass(frozen=True)
class ClusterConfig:
    epsilon: float = 1.3
    min_pts: int = 2

    def __post_init__(self) -> None:
        if self.epsilon <= 0:
            raise ValueError(f"epsilon={self.epsilon} must be positive")
        if self.min_pts < 1:
            raise ValueError(f"min_pts={self.min_pts} must be at least 1")


@dataclass(frozen=True)
class FusionConfig:
    beta: float = 0.5
    decay_level: float = 0.1
    sigma_floor: float = 1.0
    decay_mode: DecayMode = "relative"

    def __post_init__(self) -> None:
        if not 0 < self.beta <= 1:
            raise ValueError(f"beta={self.beta} must be in (0, 1]")
        if not 0 < self.decay_level < 1:
            raise ValueError(f"decay_level={self.decay_level} must be in (0, 1)")
        if self.sigma_floor <= 0:
            raise ValueError(f"sigma_floor={self.sigma_floor} must be positive")
        if self.decay_mode not in ("relative", "absolute"):
            raise ValueError(f"Unknown decay_mode {self.decay_mode}")


@dataclass(frozen=True)
class RenderConfig:
    pixels_per_meter: float = 20.0
    raster_size: int = 1000
    max_scale: float = 5.0
    scaling_rule: ScalingRule = "iou"
    history: bool = True
    obstacle: bool = True
    textboxes: bool = True
    coordinate: bool = True

    def __post_init__(self) -> None:
        if self.pixels_per_meter <= 0 or self.raster_size <= 0:
            raise ValueError(f"Render scale and size must be positive, got {self}")
        if self.max_scale < 1:
            raise ValueError(f"max_scale={self.max_scale} must be at least 1")
        if self.scaling_rule not in ("iou", "separating"):
            raise ValueError(f"Unknown scaling_rule {self.scaling_rule}")

    def without(self, layer: str) -> "RenderConfig":
        """ Returns a copy with one of the history/obstacle/textboxes/coordinate layers removed. """
        if layer not in ("history", "obstacle", "textboxes", "coordinate"):
            raise ValueError(f"Unknown render layer {layer}")
        return dataclasses.replace(self, **{layer: False})


@dataclass(frozen=True)
class PolicyConfig:
    step_limit: int = 500
    replan_every: int = 25
    heading_tolerance_degrees: float = 15.0
    waypoint_radius: float = 0.2
    clearance: float = 0.15
    revisit_radius: float = 1.0
    initial_spin: bool = True


@dataclass(frozen=True)
class ReasonerConfig:
    kind: ReasonerKind = "heuristic"
    endpoint: Optional[str] = None
    retries: int = 2
    deadline: float = 30.0
    backoff: float = 0.5
    send_image: bool = True

    def resolve_endpoint(self) -> Optional[str]:
        return self.endpoint if self.endpoint is not None else os.environ.get(REASONER_URL_ENV)


@dataclass(frozen=True)
class NavConfig:
    world: WorldConfig = field(default_factory=WorldConfig)
    grid: MapConfig = field(default_factory=MapConfig)
    cluster: ClusterConfig = field(default_factory=ClusterConfig)
    ptd: FusionConfig = field(default_factory=FusionConfig)
    render: RenderConfig = field(default_factory=RenderConfig)
    policy: PolicyConfig = field(default_factory=PolicyConfig)
    reasoner: ReasonerConfig = field(default_factory=ReasonerConfig)
    use_dms: bool = True
    use_ptd: bool = True
    fusion_mode: FusionMode = "gaussian"

    def __post_init__(self) -> None:
        if self.fusion_mode not in ("gaussian", "max"):
            raise ValueError(f"Unknown fusion_mode {self.fusion_mode}")


def _build(cls: Any, values: Dict[str, Any], path: str) -> Any:
    known = {f.name: f for f in fields(cls)}
    kwargs: Dict[str, Any] = {}
    for key, value in values.items():
        if key not in known:
            raise ValueError(f"Unknown config key {path}{key}")
        factory = known[key].default_factory  # type: ignore
        default = factory() if factory is not dataclasses.MISSING else None
        if is_dataclass(default):
            if not isinstance(value, dict):
                raise ValueError(f"Config key {path}{key} must be a mapping")
            kwargs[key] = _build(type(default), value, f"{path}{key}.")
        else:
            kwargs[key] = value
    return cls(**kwargs)


def config_from_dict(values: Dict[str, Any]) -> NavConfig:
    return _build(NavConfig, values, "")


def load_config(path: Union[str, Path, None]) -> NavConfig:
    if path is None:
        return NavConfig()
    with open(path) as f:
        values = json.load(f)
    logging.info(f"Loaded config from {path}")
    return config_from_dict(values)


def override(config: NavConfig, section: Optional[str] = None, **changes: Any) -> NavConfig:
    """ Applies flag overrides, skipping any left as None. """
    changes = {k: v for k, v in changes.items() if v is not None}
    if not changes:
        return config
    if section is None:
        return dataclasses.replace(config, **changes)
    return dataclasses.replace(
        config, **{section: dataclasses.replace(getattr(config, section), **changes)}
    )


def config_to_dict(config: NavConfig) -> Dict[str, Any]:
    return asdict(config)


def fingerprint(config: NavConfig) -> str:
    canonical = json.dumps(config_to_dict(config), sort_keys=True)
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()
