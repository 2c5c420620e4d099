"""Training loop for the denoising autoencoder, plus checkpoint storage.

Each step draws a batch of clean crops, composites them over random
backgrounds, corrupts them with the augmentation pipeline, and optimizes
reconstruction of the clean crop (black background) with Adam. The whole
run is a single deterministic stream: one RNG seeded from the config drives
batch sampling, background choice and augmentation, in a fixed order.

Checkpoint layout (all little-endian):

    bytes 0..3   magic b"AEW1"
    u32          format version (1)
    u32          header length in bytes
    header       UTF-8 JSON: {"arch": {...}, "tensors": [{"name", "shape"}]}
    payload      each tensor as float64, C-order, in header order

A JSON sidecar at <path>.json records the TrainConfig used.
"""

from __future__ import annotations

import dataclasses
import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .augment import AugmentationConfig, composite_background, f_aug
from .encoder import Architecture, EncoderParams, init_params, loss_and_grads

CHECKPOINT_MAGIC = b"AEW1"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 2e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    latent_dim: int = 128
    batch_size: int = 32
    iterations: int = 500
    seed: int = 0
    crop_size: int = 64
    conv_channels: tuple[int, ...] = (16, 32, 64, 128)
    dtype: str = "float32"

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.latent_dim < 2:
            raise ValueError("latent_dim must be >= 2")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")

    def architecture(self) -> Architecture:
        return Architecture(
            input_size=self.crop_size,
            conv_channels=self.conv_channels,
            latent_dim=self.latent_dim,
        )

    def to_json(self) -> dict:
        d = dataclasses.asdict(self)
        d["conv_channels"] = list(d["conv_channels"])
        return d

    @staticmethod
    def from_json(obj: dict) -> "TrainConfig":
        kwargs = dict(obj)
        if "conv_channels" in kwargs:
            kwargs["conv_channels"] = tuple(kwargs["conv_channels"])
        return TrainConfig(**kwargs)


class AdamState:
    """Per-tensor first/second moment accumulators."""

    def __init__(self, params: EncoderParams):
        self.m = {k: np.zeros_like(v) for k, v in params.tensors.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.tensors.items()}
        self.t = 0

    def step(self, params: EncoderParams, grads: dict[str, np.ndarray], cfg: TrainConfig) -> None:
        self.t += 1
        b1, b2 = cfg.beta1, cfg.beta2
        bias1 = 1.0 - b1 ** self.t
        bias2 = 1.0 - b2 ** self.t
        for name in params.tensors:
            g = grads[name]
            m = self.m[name]
            v = self.v[name]
            m += (1.0 - b1) * (g - m)
            v += (1.0 - b2) * (g * g - v)
            update = (m / bias1) / (np.sqrt(v / bias2) + cfg.eps)
            params.tensors[name] -= cfg.learning_rate * update


def _background_patch(backgrounds: list[np.ndarray], size: int, rng: np.random.Generator) -> np.ndarray:
    bg = backgrounds[int(rng.integers(len(backgrounds)))]
    h, w = bg.shape[:2]
    if h < size or w < size:
        raise ValueError(f"background {bg.shape} smaller than crop size {size}")
    y0 = int(rng.integers(0, h - size + 1))
    x0 = int(rng.integers(0, w - size + 1))
    return bg[y0 : y0 + size, x0 : x0 + size]


def make_training_batch(
    dataset: list[tuple[np.ndarray, np.ndarray]],
    indices: np.ndarray,
    aug_config: AugmentationConfig,
    backgrounds: list[np.ndarray],
    rng: np.random.Generator,
    dtype,
) -> tuple[np.ndarray, np.ndarray]:
    """(augmented composite, clean target) arrays for the chosen samples."""
    xs, ts = [], []
    size = dataset[0][0].shape[0]
    for i in indices:
        crop, mask = dataset[int(i)]
        patch = _background_patch(backgrounds, size, rng)
        composite = composite_background(crop, mask, patch)
        xs.append(f_aug(composite, aug_config, rng))
        ts.append(crop)
    return np.stack(xs).astype(dtype), np.stack(ts).astype(dtype)


def train(
    config: TrainConfig,
    dataset: list[tuple[np.ndarray, np.ndarray]],
    aug_config: AugmentationConfig,
    backgrounds: list[np.ndarray],
    progress_every: int = 0,
) -> tuple[EncoderParams, list[float]]:
    """Train from scratch; returns final params and the per-iteration loss curve."""
    if not dataset:
        raise ValueError("training dataset must be non-empty")
    size = dataset[0][0].shape[0]
    if size != config.crop_size:
        raise ValueError(f"dataset crops are {size}px but config.crop_size is {config.crop_size}")

    dtype = np.dtype(config.dtype)
    params = init_params(config.architecture(), seed=config.seed, dtype=dtype)
    adam = AdamState(params)
    rng = np.random.default_rng(config.seed)
    curve: list[float] = []

    for it in range(config.iterations):
        idx = rng.integers(0, len(dataset), size=config.batch_size)
        x, t = make_training_batch(dataset, idx, aug_config, backgrounds, rng, dtype)
        value, grads = loss_and_grads(params, x, t)
        if not np.isfinite(value):
            raise RuntimeError(
                f"non-finite loss {value} at iteration {it}; "
                f"lr={config.learning_rate}, batch={config.batch_size}"
            )
        adam.step(params, grads, config)
        curve.append(value)
        if progress_every and (it + 1) % progress_every == 0:
            recent = curve[-progress_every:]
            print(f"iter {it + 1}/{config.iterations} loss {np.mean(recent):.3f}", flush=True)
    return params, curve


def save_checkpoint(path, params: EncoderParams, config: TrainConfig | None = None) -> None:
    path = Path(path)
    header = {
        "arch": params.arch.to_json(),
        "tensors": [{"name": k, "shape": list(v.shape)} for k, v in params.tensors.items()],
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<II", CHECKPOINT_VERSION, len(blob)))
        fh.write(blob)
        for tensor in params.tensors.values():
            fh.write(np.ascontiguousarray(tensor, dtype="<f8").tobytes())
    if config is not None:
        with open(str(path) + ".json", "w", encoding="utf-8") as fh:
            json.dump(config.to_json(), fh, indent=2, sort_keys=True)
            fh.write("\n")


def load_checkpoint(path) -> tuple[EncoderParams, TrainConfig | None]:
    path = Path(path)
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != CHECKPOINT_MAGIC:
            raise ValueError(f"{path}: not an encoder checkpoint (magic {magic!r})")
        version, hlen = struct.unpack("<II", fh.read(8))
        if version != CHECKPOINT_VERSION:
            raise ValueError(f"{path}: unsupported checkpoint version {version}")
        header = json.loads(fh.read(hlen).decode("utf-8"))
        arch = Architecture.from_json(header["arch"])
        tensors: dict[str, np.ndarray] = {}
        for entry in header["tensors"]:
            shape = tuple(entry["shape"])
            count = int(np.prod(shape))
            buf = fh.read(count * 8)
            if len(buf) != count * 8:
                raise ValueError(f"{path}: truncated payload for {entry['name']}")
            tensors[entry["name"]] = np.frombuffer(buf, dtype="<f8").reshape(shape).copy()
    params = EncoderParams(arch, tensors)
    sidecar = Path(str(path) + ".json")
    config = None
    if sidecar.exists():
        with open(sidecar, "r", encoding="utf-8") as fh:
            config = TrainConfig.from_json(json.load(fh))
    return params, config
