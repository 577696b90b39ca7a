"""Pipeline configuration.

All geometric thresholds are expressed in normalized plant units, i.e. after
the input cloud is rescaled so its bounding-box diagonal equals 1.
"""

from __future__ import annotations

import dataclasses
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .errors import ParameterError


@dataclass
class SegmentationConfig:
    n_samples: int = 8192        # sparse sample size for apex/tree analysis
    n_neighbors: int = 512       # kNN count on the sample
    tau: float = 0.5             # apex-grouping margin (config knob, see README)
    delta: float = 0.01          # iso-geodesic band width
    epsilon: float = 0.05        # petiole diameter threshold
    rho: float = 0.25            # early protection ratio along the tip path
    backend: str = "heat"        # heat | dijkstra
    desk_scale_neighbors: int = 32  # kNN cap for clouds below n_samples points
    min_leaf_points: int = 20    # smaller detections (bare stem tips) become stem


@dataclass
class RegistrationConfig:
    control_count: int = 32      # control points per leaf (K)
    sigma: float = 0.1           # MLS kernel width, shared with denoising
    steps: int = 200
    learning_rate: float = 7e-3
    chamfer_weight: float = 0.7  # lambda
    depth_resolution: int = 256
    footprint_px: float = 1.5    # screen-space splat footprint


@dataclass
class MeshingConfig:
    vertex_budget: int = 2048
    atlas_width: int = 1024      # left half front, right half back
    atlas_height: int = 512
    hole_edge_limit: int = 24
    dilation_px: int = 4


@dataclass
class StemConfig:
    root_radius: float = 0.01
    petiole_radius: float = 0.003
    sides: int = 8


@dataclass
class RetargetConfig:
    samples_per_side: int = 16
    interior_samples: int = 64


@dataclass
class PipelineConfig:
    segmentation: SegmentationConfig = field(default_factory=SegmentationConfig)
    registration: RegistrationConfig = field(default_factory=RegistrationConfig)
    meshing: MeshingConfig = field(default_factory=MeshingConfig)
    stem: StemConfig = field(default_factory=StemConfig)
    retarget: RetargetConfig = field(default_factory=RetargetConfig)

    def to_dict(self) -> Dict[str, Any]:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "PipelineConfig":
        cfg = cls()
        for section, values in data.items():
            if not hasattr(cfg, section):
                raise ParameterError(f"unknown config section '{section}'")
            sub = getattr(cfg, section)
            if not isinstance(values, dict):
                raise ParameterError(f"config section '{section}' must be a table")
            for key, value in values.items():
                if not hasattr(sub, key):
                    raise ParameterError(f"unknown config key '{section}.{key}'")
                setattr(sub, key, value)
        return cfg

    @classmethod
    def from_toml(cls, path: str | Path) -> "PipelineConfig":
        with open(path, "rb") as fh:
            return cls.from_dict(tomllib.load(fh))
