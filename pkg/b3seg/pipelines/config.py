# Run configuration for the segmentation pipeline.
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Any, Dict, Literal, Optional, Tuple, Union

from .._b3seg_exception import (
    B3SegConfigError,
    InvalidCandidatesError,
    InvalidIterationsError,
    InvalidPriorError,
    InvalidResolutionError,
    UnknownStrategyError,
)
from ..masker import NoiseSpec
from ..posterior import accuracy_target_to_entropy
from ..scene import SceneSpec
from .helpers import filter_config, parse_generator_spec, parse_resolution

Strategy = Literal["eig", "random_sphere", "random_holdout"]
STRATEGIES = ("eig", "random_sphere", "random_holdout")


@dataclass
class RunConfig:
    """Everything one pipeline run needs; defaults are the reference setting."""
    # Scene source: a splat file, or a generator spec when no file is given
    scene_path: Optional[str] = None
    generator: Optional[SceneSpec] = None
    target_class: int = 1

    iterations: int = 20
    n_candidates: int = 20
    a_init: float = 1.0
    b_init: float = 1.0
    resolution: Tuple[int, int] = (128, 128)
    fov_deg: float = 60.0
    noise: NoiseSpec = field(default_factory=NoiseSpec)
    seed: int = 0
    strategy: Strategy = "eig"

    # Stopping: a mean predictive entropy target, or an accuracy it is derived from
    early_stop_target: Optional[float] = None
    early_stop_accuracy: Optional[float] = None

    output_dir: Optional[str] = None
    masker: str = "oracle"
    num_classes: int = 2
    prior_blend_weight: float = 0.0
    holdout_views: int = 8
    center_shift: float = 0.0
    canonical_camera: Optional[Tuple[float, float, float]] = None
    checkpoint: Optional[str] = None
    debug_png: bool = False
    threads: Optional[int] = None

    def __post_init__(self):
        if int(self.iterations) < 1:
            raise InvalidIterationsError(f"iterations must be >= 1, got {self.iterations}")
        if int(self.n_candidates) < 1:
            raise InvalidCandidatesError(f"n_candidates must be >= 1, got {self.n_candidates}")
        if not (self.a_init > 0 and self.b_init > 0):
            raise InvalidPriorError(f"a_init={self.a_init}, b_init={self.b_init} must be > 0")
        if isinstance(self.resolution, str):
            self.resolution = parse_resolution(self.resolution)
        w, h = (int(v) for v in self.resolution)
        if w < 1 or h < 1:
            raise InvalidResolutionError(f"resolution must be positive, got {self.resolution}")
        self.resolution = (w, h)
        if not 0.0 < self.fov_deg < 180.0:
            raise B3SegConfigError(f"fov_deg must lie in (0, 180), got {self.fov_deg}")
        if self.strategy not in STRATEGIES:
            raise UnknownStrategyError(f"strategy {self.strategy!r}")
        if int(self.num_classes) < 2:
            raise B3SegConfigError(f"num_classes must be >= 2, got {self.num_classes}")
        if self.num_classes > 2 and not 1 <= self.target_class < self.num_classes:
            raise B3SegConfigError(f"target_class {self.target_class} outside [1, {self.num_classes})")
        if self.target_class < 0:
            raise B3SegConfigError(f"target_class must be >= 0, got {self.target_class}")
        if int(self.holdout_views) < 1:
            raise B3SegConfigError(f"holdout_views must be >= 1, got {self.holdout_views}")
        if self.center_shift < 0:
            raise B3SegConfigError(f"center_shift must be >= 0, got {self.center_shift}")
        if self.early_stop_target is None and self.early_stop_accuracy is not None:
            self.early_stop_target = accuracy_target_to_entropy(self.early_stop_accuracy)
        if self.early_stop_target is not None and self.early_stop_target < 0:
            raise B3SegConfigError(f"early_stop_target must be >= 0, got {self.early_stop_target}")
        if self.scene_path is None and self.generator is None:
            self.generator = SceneSpec()

    @property
    def fov(self) -> float:
        return math.radians(self.fov_deg)

    # ------------------------------------------------------------------
    # Dict / JSON round trip (used by ``--config`` and report.json)
    # ------------------------------------------------------------------
    def to_dict(self) -> Dict[str, Any]:
        d = asdict(self)
        d["resolution"] = f"{self.resolution[0]}x{self.resolution[1]}"
        return d

    @classmethod
    def from_dict(cls, cfg: Dict[str, Any]) -> "RunConfig":
        cfg = dict(cfg)
        noise = cfg.pop("noise", None)
        generator = cfg.pop("generator", None)
        kwargs = filter_config(cls, cfg)
        if isinstance(noise, dict):
            noise.setdefault("seed", kwargs.get("seed", 0))
            kwargs["noise"] = NoiseSpec(**filter_config(NoiseSpec, noise))
        elif isinstance(noise, NoiseSpec):
            kwargs["noise"] = noise
        if isinstance(generator, str):
            kwargs["generator"] = parse_generator_spec(generator)
        elif isinstance(generator, dict):
            kwargs["generator"] = SceneSpec(**filter_config(SceneSpec, generator))
        elif isinstance(generator, SceneSpec):
            kwargs["generator"] = generator
        if isinstance(kwargs.get("canonical_camera"), list):
            kwargs["canonical_camera"] = tuple(float(v) for v in kwargs["canonical_camera"])
        return cls(**kwargs)

    @classmethod
    def from_json(cls, path: Union[str, Path], **overrides) -> "RunConfig":
        with open(path, encoding="utf-8") as fh:
            cfg = json.load(fh)
        if not isinstance(cfg, dict):
            raise B3SegConfigError(f"{path}: top-level JSON value must be an object")
        cfg.update({k: v for k, v in overrides.items() if v is not None})
        return cls.from_dict(cfg)

    def with_updates(self, **changes) -> "RunConfig":
        return replace(self, **changes)
