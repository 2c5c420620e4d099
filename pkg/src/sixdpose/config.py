"""Top-level experiment configuration, serialized as config JSON.

One file carries the camera, per-object training/codebook settings, the
evaluation thresholds and the synthetic-generation settings, so a whole
run is reproducible from (config, seed).
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

from .augment import AugmentationConfig
from .render import CameraIntrinsics
from .train import TrainConfig

DEFAULT_CAMERA = CameraIntrinsics(fx=600.0, fy=600.0, cx=320.0, cy=240.0, width=640, height=480)


@dataclass(frozen=True)
class ObjectConfig:
    mesh: str
    render_distance: float = 700.0
    n_views: int = 200
    inplane_steps: int = 8
    pad_factor: float = 1.2
    train: TrainConfig = field(default_factory=TrainConfig)
    augment: AugmentationConfig = field(default_factory=AugmentationConfig)

    def to_json(self) -> dict:
        return {
            "mesh": self.mesh,
            "render_distance": self.render_distance,
            "n_views": self.n_views,
            "inplane_steps": self.inplane_steps,
            "pad_factor": self.pad_factor,
            "train": self.train.to_json(),
            "augment": self.augment.to_json(),
        }

    @staticmethod
    def from_json(obj: dict) -> "ObjectConfig":
        kwargs = dict(obj)
        if "train" in kwargs:
            kwargs["train"] = TrainConfig.from_json(kwargs["train"])
        if "augment" in kwargs:
            kwargs["augment"] = AugmentationConfig.from_json(kwargs["augment"])
        return ObjectConfig(**kwargs)


@dataclass(frozen=True)
class EvalThresholds:
    adi_k: tuple[float, ...] = (0.1, 0.2, 0.3)
    cou_theta: tuple[float, ...] = (0.3, 0.5, 0.7)
    map_iou: tuple[float, ...] = (0.5,)

    def to_json(self) -> dict:
        return {"adi_k": list(self.adi_k), "cou_theta": list(self.cou_theta), "map_iou": list(self.map_iou)}

    @staticmethod
    def from_json(obj: dict) -> "EvalThresholds":
        return EvalThresholds(
            adi_k=tuple(obj.get("adi_k", (0.1, 0.2, 0.3))),
            cou_theta=tuple(obj.get("cou_theta", (0.3, 0.5, 0.7))),
            map_iou=tuple(obj.get("map_iou", (0.5,))),
        )


@dataclass(frozen=True)
class GenSettings:
    frames: int = 50
    scenes: int = 1
    depth_range_mm: tuple[float, float] = (400.0, 3000.0)
    n_backgrounds: int = 8
    occluder_probability: float = 0.0

    def to_json(self) -> dict:
        d = dataclasses.asdict(self)
        d["depth_range_mm"] = list(d["depth_range_mm"])
        return d

    @staticmethod
    def from_json(obj: dict) -> "GenSettings":
        kwargs = dict(obj)
        if "depth_range_mm" in kwargs:
            kwargs["depth_range_mm"] = tuple(kwargs["depth_range_mm"])
        return GenSettings(**kwargs)


@dataclass(frozen=True)
class PipelineConfig:
    camera: CameraIntrinsics = DEFAULT_CAMERA
    objects: dict[str, ObjectConfig] = field(default_factory=dict)
    eval: EvalThresholds = field(default_factory=EvalThresholds)
    gen: GenSettings = field(default_factory=GenSettings)
    seed: int = 0

    def to_json(self) -> dict:
        return {
            "camera": self.camera.to_json(),
            "objects": {k: v.to_json() for k, v in sorted(self.objects.items())},
            "eval": self.eval.to_json(),
            "gen": self.gen.to_json(),
            "seed": self.seed,
        }

    @staticmethod
    def from_json(obj: dict) -> "PipelineConfig":
        return PipelineConfig(
            camera=CameraIntrinsics.from_json(obj["camera"]) if "camera" in obj else DEFAULT_CAMERA,
            objects={k: ObjectConfig.from_json(v) for k, v in obj.get("objects", {}).items()},
            eval=EvalThresholds.from_json(obj.get("eval", {})),
            gen=GenSettings.from_json(obj.get("gen", {})),
            seed=int(obj.get("seed", 0)),
        )


def load_config(path) -> PipelineConfig:
    with open(Path(path), "r", encoding="utf-8") as fh:
        return PipelineConfig.from_json(json.load(fh))


def save_config(config: PipelineConfig, path) -> None:
    with open(Path(path), "w", encoding="utf-8") as fh:
        json.dump(config.to_json(), fh, indent=2, sort_keys=True)
        fh.write("\n")
