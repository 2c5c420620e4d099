"""Randomized input corruption for denoising-reconstruction training.

Operators act on float images in [0, 1] and preserve shape and range. The
application order inside :func:`f_aug` is fixed and documented: geometric
resampling first (perspective_transform, crop_and_pad, affine), then
photometric (gaussian_blur, invert, multiply, contrast_normalization), then
coarse_dropout, and the square occlusion always last. Order matters for the
output, so it is part of the contract.

All randomness flows through an explicit ``numpy.random.Generator``; a fixed
seed and config reproduce outputs exactly.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field

import numpy as np

from .render import bilinear_sample

OPERATOR_ORDER = (
    "perspective_transform",
    "crop_and_pad",
    "affine",
    "gaussian_blur",
    "invert",
    "multiply",
    "contrast_normalization",
    "coarse_dropout",
)


def _default_probabilities() -> dict[str, float]:
    probs = {name: 0.5 for name in OPERATOR_ORDER}
    probs["square_occlusion"] = 0.5
    return probs


@dataclass(frozen=True)
class AugmentationConfig:
    """Operator switches, parameter ranges and per-operator probabilities.

    Ranges are uniform sampling intervals. ``square_occlusion_fraction`` is
    the occluding square's side as a fraction of min(H, W); 0 disables it.
    """

    perspective_transform: bool = False
    crop_and_pad: bool = True
    affine: bool = True
    coarse_dropout: bool = True
    gaussian_blur: bool = False
    invert: bool = True
    multiply: bool = True
    contrast_normalization: bool = False
    square_occlusion_fraction: float = 0.4
    probabilities: dict[str, float] = field(default_factory=_default_probabilities)
    multiply_range: tuple[float, float] = (0.6, 1.4)
    contrast_range: tuple[float, float] = (0.5, 1.5)
    blur_sigma_range: tuple[float, float] = (0.5, 2.0)
    affine_rotation_deg: float = 15.0
    affine_scale_range: tuple[float, float] = (0.9, 1.1)
    affine_translate_frac: float = 0.05
    crop_pad_percent: float = 0.10
    dropout_rate_range: tuple[float, float] = (0.02, 0.20)
    dropout_grid: int = 8
    perspective_jitter_frac: float = 0.05

    def __post_init__(self):
        if not 0.0 <= self.square_occlusion_fraction <= 1.0:
            raise ValueError("square_occlusion_fraction must be in [0, 1]")
        for name, p in self.probabilities.items():
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"probability for {name!r} must be in [0, 1]")

    def probability(self, name: str) -> float:
        return self.probabilities.get(name, 0.5)

    def to_json(self) -> dict:
        d = dataclasses.asdict(self)
        for key in ("multiply_range", "contrast_range", "blur_sigma_range", "affine_scale_range"):
            d[key] = list(d[key])
        return d

    @staticmethod
    def from_json(obj: dict) -> "AugmentationConfig":
        kwargs = dict(obj)
        for key in ("multiply_range", "contrast_range", "blur_sigma_range", "affine_scale_range"):
            if key in kwargs:
                kwargs[key] = tuple(kwargs[key])
        return AugmentationConfig(**kwargs)


def identity_config() -> AugmentationConfig:
    """All operators off; f_aug becomes the pixel-exact identity."""
    return AugmentationConfig(
        perspective_transform=False, crop_and_pad=False, affine=False,
        coarse_dropout=False, gaussian_blur=False, invert=False,
        multiply=False, contrast_normalization=False,
        square_occlusion_fraction=0.0,
    )


def composite_background(crop: np.ndarray, mask: np.ndarray, background: np.ndarray) -> np.ndarray:
    """Paste the masked crop over the background, pixelwise."""
    if crop.shape[:2] != mask.shape[:2] or crop.shape != background.shape:
        raise ValueError(
            f"size mismatch: crop {crop.shape}, mask {mask.shape}, background {background.shape}"
        )
    m = mask.astype(bool)
    if crop.ndim == 3:
        m = m[:, :, None]
    return np.where(m, crop, background)


def square_occlusion(image: np.ndarray, fraction: float, rng: np.random.Generator) -> np.ndarray:
    """Overwrite one random axis-aligned square with a uniform random gray."""
    if not 0.0 <= fraction <= 1.0:
        raise ValueError("fraction must be in [0, 1]")
    h, w = image.shape[:2]
    side = int(math.floor(fraction * min(h, w)))
    if side <= 0:
        return image.copy()
    y0 = int(rng.integers(0, h - side + 1))
    x0 = int(rng.integers(0, w - side + 1))
    gray = float(rng.uniform())
    out = image.copy()
    out[y0 : y0 + side, x0 : x0 + side] = gray
    return out


def _gaussian_kernel(sigma: float) -> np.ndarray:
    radius = max(1, int(math.ceil(3.0 * sigma)))
    xs = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-(xs * xs) / (2.0 * sigma * sigma))
    return k / k.sum()


def _blur(image: np.ndarray, sigma: float) -> np.ndarray:
    kernel = _gaussian_kernel(sigma)
    r = (len(kernel) - 1) // 2
    img = image if image.ndim == 3 else image[:, :, None]
    padded = np.pad(img, ((r, r), (0, 0), (0, 0)), mode="reflect")
    rows = np.zeros_like(img)
    for i, kv in enumerate(kernel):
        rows += kv * padded[i : i + img.shape[0]]
    padded = np.pad(rows, ((0, 0), (r, r), (0, 0)), mode="reflect")
    out = np.zeros_like(img)
    for j, kv in enumerate(kernel):
        out += kv * padded[:, j : j + img.shape[1]]
    out = np.clip(out, 0.0, 1.0)
    return out if image.ndim == 3 else out[:, :, 0]


def _resample_affine(image: np.ndarray, matrix: np.ndarray) -> np.ndarray:
    """Resample with an output->source 3x3 homography, bilinear, zero fill."""
    h, w = image.shape[:2]
    xs = np.arange(w) + 0.5
    ys = np.arange(h) + 0.5
    xg, yg = np.meshgrid(xs, ys)
    ones = np.ones_like(xg)
    pts = np.stack([xg, yg, ones])
    src = np.einsum("ij,jhw->ihw", matrix, pts)
    sx = src[0] / src[2]
    sy = src[1] / src[2]
    return bilinear_sample(image, sx, sy)


def _affine(image: np.ndarray, rng: np.random.Generator, cfg: AugmentationConfig) -> np.ndarray:
    h, w = image.shape[:2]
    angle = math.radians(rng.uniform(-cfg.affine_rotation_deg, cfg.affine_rotation_deg))
    scale = rng.uniform(*cfg.affine_scale_range)
    tx = rng.uniform(-cfg.affine_translate_frac, cfg.affine_translate_frac) * w
    ty = rng.uniform(-cfg.affine_translate_frac, cfg.affine_translate_frac) * h
    c, s = math.cos(angle), math.sin(angle)
    # forward map: rotate+scale about the center, then translate; invert it
    fwd = np.array([[scale * c, -scale * s, 0.0], [scale * s, scale * c, 0.0], [0.0, 0.0, 1.0]])
    center = np.array([w / 2.0, h / 2.0, 0.0])
    inv = np.linalg.inv(fwd)
    matrix = inv.copy()
    shift = center - inv @ (center + np.array([tx, ty, 0.0]))
    matrix[:2, 2] = shift[:2]
    return _resample_affine(image, matrix)


def _crop_and_pad(image: np.ndarray, rng: np.random.Generator, cfg: AugmentationConfig) -> np.ndarray:
    h, w = image.shape[:2]
    p = rng.uniform(-cfg.crop_pad_percent, cfg.crop_pad_percent)
    # p > 0 pads (zoom out with zero border), p < 0 crops (zoom in); the
    # window [-p*S, S + p*S) is resampled back to the original size.
    matrix = np.array(
        [
            [1.0 + 2.0 * p, 0.0, -p * w],
            [0.0, 1.0 + 2.0 * p, -p * h],
            [0.0, 0.0, 1.0],
        ]
    )
    return _resample_affine(image, matrix)


def _solve_homography(dst_pts: np.ndarray, src_pts: np.ndarray) -> np.ndarray:
    """3x3 matrix mapping each dst point to its src point (h33 fixed to 1)."""
    a = np.zeros((8, 8))
    b = np.zeros(8)
    for i, ((x, y), (u, v)) in enumerate(zip(dst_pts, src_pts)):
        a[2 * i] = [x, y, 1, 0, 0, 0, -u * x, -u * y]
        b[2 * i] = u
        a[2 * i + 1] = [0, 0, 0, x, y, 1, -v * x, -v * y]
        b[2 * i + 1] = v
    h = np.linalg.solve(a, b)
    return np.array([[h[0], h[1], h[2]], [h[3], h[4], h[5]], [h[6], h[7], 1.0]])


def _perspective(image: np.ndarray, rng: np.random.Generator, cfg: AugmentationConfig) -> np.ndarray:
    h, w = image.shape[:2]
    corners = np.array([[0.0, 0.0], [w, 0.0], [w, h], [0.0, h]])
    jitter = cfg.perspective_jitter_frac * min(h, w)
    src = corners + rng.uniform(-jitter, jitter, size=(4, 2))
    return _resample_affine(image, _solve_homography(corners, src))


def _coarse_dropout(image: np.ndarray, rng: np.random.Generator, cfg: AugmentationConfig) -> np.ndarray:
    h, w = image.shape[:2]
    g = cfg.dropout_grid
    rate = rng.uniform(*cfg.dropout_rate_range)
    drop = rng.uniform(size=(g, g)) < rate
    cell_h = (h + g - 1) // g
    cell_w = (w + g - 1) // g
    grid = np.kron(drop, np.ones((cell_h, cell_w), dtype=bool))[:h, :w]
    out = image.copy()
    out[grid] = 0.0
    return out


def apply_operator(
    name: str, image: np.ndarray, rng: np.random.Generator, config: AugmentationConfig
) -> np.ndarray:
    """Apply one named operator unconditionally (sampling its parameters)."""
    if name == "invert":
        return 1.0 - image
    if name == "multiply":
        k = rng.uniform(*config.multiply_range)
        return np.clip(image * k, 0.0, 1.0)
    if name == "contrast_normalization":
        c = rng.uniform(*config.contrast_range)
        return np.clip((image - 0.5) * c + 0.5, 0.0, 1.0)
    if name == "gaussian_blur":
        sigma = rng.uniform(*config.blur_sigma_range)
        return _blur(image, sigma)
    if name == "affine":
        return _affine(image, rng, config)
    if name == "crop_and_pad":
        return _crop_and_pad(image, rng, config)
    if name == "perspective_transform":
        return _perspective(image, rng, config)
    if name == "coarse_dropout":
        return _coarse_dropout(image, rng, config)
    raise ValueError(f"unknown augmentation operator {name!r}")


def blur_with_sigma(image: np.ndarray, sigma: float) -> np.ndarray:
    """Gaussian blur with an explicit sigma (reflect-padded, separable)."""
    return _blur(image, sigma)


def f_aug(image: np.ndarray, config: AugmentationConfig, rng: np.random.Generator) -> np.ndarray:
    """The full random corruption: enabled operators in fixed order, occlusion last."""
    out = np.asarray(image, dtype=np.float64)
    for name in OPERATOR_ORDER:
        if not getattr(config, name):
            continue
        if rng.uniform() < config.probability(name):
            out = apply_operator(name, out, rng, config)
    if config.square_occlusion_fraction > 0.0:
        if rng.uniform() < config.probability("square_occlusion"):
            out = square_occlusion(out, config.square_occlusion_fraction, rng)
    return out
