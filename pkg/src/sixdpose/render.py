"""Pinhole camera, software z-buffer rasterizer, and square crop resampling.

Pixel conventions: pixel (row i, col j) covers [j, j+1) x [i, i+1) with its
center at (j + 0.5, i + 0.5). Bounding boxes are (x_min, y_min, x_max, y_max)
in these continuous coordinates, half-open, so width = x_max - x_min.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .geom import PoseSE3, Rotation3, transform_point
from .mesh import TriMesh

# Triangles with any camera-frame vertex closer than this are skipped;
# objects in this toolkit live hundreds of mm from the camera.
NEAR_PLANE_MM = 1.0

# direction from a surface toward the light source (camera frame); the
# negative z puts the light behind the camera, up and to its left
DEFAULT_LIGHT_DIR = (-0.35, -0.5, -0.8)
DEFAULT_ALBEDO = (0.85, 0.78, 0.65)
DEFAULT_AMBIENT = 0.25


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError("principal point must lie inside the image")

    @property
    def focal(self) -> float:
        return (self.fx + self.fy) / 2.0

    def to_json(self) -> dict:
        return {
            "fx": self.fx, "fy": self.fy, "cx": self.cx, "cy": self.cy,
            "width": self.width, "height": self.height,
        }

    @staticmethod
    def from_json(obj: dict) -> "CameraIntrinsics":
        return CameraIntrinsics(
            fx=float(obj["fx"]), fy=float(obj["fy"]),
            cx=float(obj["cx"]), cy=float(obj["cy"]),
            width=int(obj["width"]), height=int(obj["height"]),
        )


@dataclass(frozen=True)
class RenderOutput:
    color: np.ndarray  # (H, W, 3) float64 in [0, 1]
    mask: np.ndarray   # (H, W) bool
    bbox: tuple[float, float, float, float] | None
    valid: bool


def project(x_c: np.ndarray, cam: CameraIntrinsics) -> np.ndarray:
    """Pinhole projection of camera-frame points (mm) to pixel coordinates."""
    x = np.asarray(x_c, dtype=np.float64)
    single = x.ndim == 1
    x = np.atleast_2d(x)
    z = x[:, 2]
    if np.any(z <= 0):
        raise ValueError("cannot project points at or behind the camera (z <= 0)")
    uv = np.stack([cam.fx * x[:, 0] / z + cam.cx, cam.fy * x[:, 1] / z + cam.cy], axis=1)
    return uv[0] if single else uv


def mask_bbox(mask: np.ndarray) -> tuple[float, float, float, float] | None:
    """Tight half-open pixel-extent box of the set pixels, or None if empty."""
    ys, xs = np.nonzero(mask)
    if ys.size == 0:
        return None
    return (float(xs.min()), float(ys.min()), float(xs.max()) + 1.0, float(ys.max()) + 1.0)


def bbox_diagonal(bbox: tuple[float, float, float, float]) -> float:
    return math.hypot(bbox[2] - bbox[0], bbox[3] - bbox[1])


def _edge(ax, ay, bx, by, px, py):
    return (bx - ax) * (py - ay) - (by - ay) * (px - ax)


def _top_left(ax, ay, bx, by) -> bool:
    # Interior-positive winding: top edge runs in +x, left edge in -y.
    return (by == ay and bx > ax) or (by < ay)


def render(
    mesh: TriMesh,
    pose: PoseSE3,
    cam: CameraIntrinsics,
    light_dir=DEFAULT_LIGHT_DIR,
    albedo=DEFAULT_ALBEDO,
    ambient: float = DEFAULT_AMBIENT,
) -> RenderOutput:
    """Z-buffered Lambertian render. Deterministic for identical inputs.

    One fixed directional light in the camera frame, per-face normals,
    top-left fill rule, no anti-aliasing. Triangles with a vertex closer
    than the near plane are skipped.
    """
    h, w = cam.height, cam.width
    color = np.zeros((h, w, 3))
    zbuf = np.full((h, w), np.inf)

    verts_c = transform_point(pose, mesh.vertices)
    if not np.any(verts_c[:, 2] > 0):
        return RenderOutput(color=color, mask=np.zeros((h, w), dtype=bool), bbox=None, valid=False)

    light = np.asarray(light_dir, dtype=np.float64)
    light = light / np.linalg.norm(light)
    albedo = np.asarray(albedo, dtype=np.float64)

    zs = verts_c[:, 2]
    us = cam.fx * verts_c[:, 0] / np.where(zs > 0, zs, 1.0) + cam.cx
    vs = cam.fy * verts_c[:, 1] / np.where(zs > 0, zs, 1.0) + cam.cy

    for face in mesh.faces:
        i0, i1, i2 = int(face[0]), int(face[1]), int(face[2])
        if zs[i0] < NEAR_PLANE_MM or zs[i1] < NEAR_PLANE_MM or zs[i2] < NEAR_PLANE_MM:
            continue
        # shading normal from the stored winding, before any screen-space flip
        normal = np.cross(verts_c[i1] - verts_c[i0], verts_c[i2] - verts_c[i0])
        x0, y0, x1, y1, x2, y2 = us[i0], vs[i0], us[i1], vs[i1], us[i2], vs[i2]
        area2 = _edge(x0, y0, x1, y1, x2, y2)
        if area2 == 0.0:
            continue
        if area2 < 0:
            # flip winding so the interior is edge-positive
            i1, i2 = i2, i1
            x1, y1, x2, y2 = x2, y2, x1, y1
            area2 = -area2

        cmin = max(int(math.floor(min(x0, x1, x2) - 0.5)), 0)
        cmax = min(int(math.ceil(max(x0, x1, x2) - 0.5)), w - 1)
        rmin = max(int(math.floor(min(y0, y1, y2) - 0.5)), 0)
        rmax = min(int(math.ceil(max(y0, y1, y2) - 0.5)), h - 1)
        if cmin > cmax or rmin > rmax:
            continue

        px = np.arange(cmin, cmax + 1) + 0.5
        py = np.arange(rmin, rmax + 1) + 0.5
        pxg, pyg = np.meshgrid(px, py)

        e0 = _edge(x1, y1, x2, y2, pxg, pyg)
        e1 = _edge(x2, y2, x0, y0, pxg, pyg)
        e2 = _edge(x0, y0, x1, y1, pxg, pyg)
        inside = (
            ((e0 > 0) | ((e0 == 0) & _top_left(x1, y1, x2, y2)))
            & ((e1 > 0) | ((e1 == 0) & _top_left(x2, y2, x0, y0)))
            & ((e2 > 0) | ((e2 == 0) & _top_left(x0, y0, x1, y1)))
        )
        if not inside.any():
            continue

        l0 = e0 / area2
        l1 = e1 / area2
        l2 = e2 / area2
        invz = l0 / zs[i0] + l1 / zs[i1] + l2 / zs[i2]
        with np.errstate(divide="ignore"):
            depth = np.where(invz > 0, 1.0 / np.maximum(invz, 1e-300), np.inf)

        tile = zbuf[rmin : rmax + 1, cmin : cmax + 1]
        update = inside & (depth < tile)
        if not update.any():
            continue

        nn = np.linalg.norm(normal)
        if nn == 0.0:
            continue
        # one-sided Lambert: winding orients the normal, unlit faces stay
        # at ambient, so opposite viewing directions shade differently
        intensity = ambient + (1.0 - ambient) * max(0.0, float(normal @ light) / nn)
        shade = np.clip(albedo * intensity, 0.0, 1.0)

        tile[update] = depth[update]
        ctile = color[rmin : rmax + 1, cmin : cmax + 1]
        ctile[update] = shade

    mask = np.isfinite(zbuf)
    bbox = mask_bbox(mask)
    return RenderOutput(color=color, mask=mask, bbox=bbox, valid=bbox is not None)


def bilinear_sample(image: np.ndarray, sx: np.ndarray, sy: np.ndarray) -> np.ndarray:
    """Bilinear sampling at continuous pixel coordinates with zero fill outside.

    ``sx``/``sy`` are in the same convention as bounding boxes: pixel (i, j)
    has its center at (j + 0.5, i + 0.5).
    """
    img = image if image.ndim == 3 else image[:, :, None]
    h, w = img.shape[:2]
    fx = sx - 0.5
    fy = sy - 0.5
    x0 = np.floor(fx).astype(np.int64)
    y0 = np.floor(fy).astype(np.int64)
    wx = fx - x0
    wy = fy - y0

    out = np.zeros(sx.shape + (img.shape[2],))
    for dy in (0, 1):
        for dx in (0, 1):
            xi = x0 + dx
            yi = y0 + dy
            valid = (xi >= 0) & (xi < w) & (yi >= 0) & (yi < h)
            weight = (wx if dx else (1.0 - wx)) * (wy if dy else (1.0 - wy))
            vals = img[np.clip(yi, 0, h - 1), np.clip(xi, 0, w - 1)]
            out += np.where(valid, weight, 0.0)[..., None] * vals
    return out if image.ndim == 3 else out[..., 0]


def crop_square(
    image: np.ndarray,
    bbox: tuple[float, float, float, float],
    pad_factor: float = 1.2,
    out_size: int = 64,
) -> np.ndarray:
    """Square crop around the bbox center, bilinearly resampled to out_size.

    Side length is pad_factor * max(bbox width, height); pixels outside the
    source image are zero. Works on (H, W) and (H, W, C) arrays.
    """
    x0, y0, x1, y1 = bbox
    bw, bh = x1 - x0, y1 - y0
    if bw <= 0 or bh <= 0:
        raise ValueError(f"empty bbox {bbox}")
    if x1 <= 0 or y1 <= 0 or x0 >= image.shape[1] or y0 >= image.shape[0]:
        raise ValueError(f"bbox {bbox} does not intersect the image")
    cx, cy = (x0 + x1) / 2.0, (y0 + y1) / 2.0
    side = pad_factor * max(bw, bh)
    step = side / out_size
    coords = (np.arange(out_size) + 0.5) * step
    sx = cx - side / 2.0 + coords
    sy = cy - side / 2.0 + coords
    sxg, syg = np.meshgrid(sx, sy)
    return bilinear_sample(np.asarray(image, dtype=np.float64), sxg, syg)


def render_view_crop(
    mesh: TriMesh,
    rotation: Rotation3,
    cam: CameraIntrinsics,
    distance_mm: float,
    pad_factor: float = 1.2,
    out_size: int = 64,
):
    """Render the object centered at (0, 0, distance) and crop around it.

    Returns (crop, mask_crop, bbox, bbox_diagonal); raises if the render
    produces no visible pixels.
    """
    pose = PoseSE3(rotation, np.array([0.0, 0.0, distance_mm]))
    out = render(mesh, pose, cam)
    if not out.valid:
        raise ValueError(f"render at distance {distance_mm} produced an empty mask")
    crop = crop_square(out.color, out.bbox, pad_factor, out_size)
    mask_crop = crop_square(out.mask.astype(np.float64), out.bbox, pad_factor, out_size) > 0.5
    return crop, mask_crop, out.bbox, bbox_diagonal(out.bbox)
