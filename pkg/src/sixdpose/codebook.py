"""Latent codebook over the view sphere and full 6D pose estimation.

The codebook holds one unit-norm latent code per discretized rotation plus
the bounding-box diagonal of that rotation's render. Orientation lookup is
an exact cosine-similarity scan (one matrix-vector product); translation is
recovered from the detected box via the pinhole model:

    t_z = render_distance * (diag_codebook / diag_detected) * (f_test / f_render)
    t_x = (u_center - cx) * t_z / fx
    t_y = (v_center - cy) * t_z / fy

with f = (fx + fy) / 2 per camera. The matched rotation is optionally
composed with the rotation taking the optical axis to the viewing ray of
the detected box center, which accounts for objects seen off-center.

Codebook file layout (little-endian):

    bytes 0..3   magic b"CBK1"
    u32          format version (1)
    u32          header length
    header       UTF-8 JSON: n, latent_dim, render_distance, camera,
                 object_id, pad_factor, crop_size
    payload      codes float32 row-major (n*l), rotations float64 (n*9,
                 row-major), diagonals float64 (n)

A JSON manifest with the header contents is written next to the binary.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .encoder import EncoderParams, encode
from .geom import PoseSE3, Rotation3, ViewpointGrid, rotation_about_axis
from .mesh import TriMesh
from .render import CameraIntrinsics, bbox_diagonal, crop_square, render_view_crop

CODEBOOK_MAGIC = b"CBK1"
CODEBOOK_VERSION = 1

ENCODE_CHUNK = 64


@dataclass(frozen=True)
class Codebook:
    codes: np.ndarray  # (n, l) float32, unit rows
    rotations: list[Rotation3]
    bbox_diagonals: np.ndarray  # (n,) float64, px in the render camera
    render_distance: float
    render_cam: CameraIntrinsics
    object_id: str
    pad_factor: float = 1.2
    crop_size: int = 64

    def __post_init__(self):
        codes = np.ascontiguousarray(self.codes, dtype=np.float32)
        diag = np.ascontiguousarray(self.bbox_diagonals, dtype=np.float64)
        if codes.ndim != 2:
            raise ValueError("codes must be (n, l)")
        n = codes.shape[0]
        if len(self.rotations) != n or diag.shape != (n,):
            raise ValueError("codes, rotations and bbox_diagonals must have equal length")
        norms = np.linalg.norm(codes.astype(np.float64), axis=1)
        if n and np.abs(norms - 1.0).max() > 1e-6:
            raise ValueError("codebook rows must be unit norm")
        if n and diag.min() <= 0:
            raise ValueError("bbox diagonals must be positive")
        object.__setattr__(self, "codes", codes)
        object.__setattr__(self, "bbox_diagonals", diag)

    def __len__(self) -> int:
        return self.codes.shape[0]


@dataclass(frozen=True)
class PoseEstimate:
    pose: PoseSE3
    similarity: float
    codebook_index: int
    object_id: str

    def __post_init__(self):
        if not math.isfinite(self.similarity):
            raise ValueError("similarity must be finite")
        if self.codebook_index < 0:
            raise ValueError("codebook_index must be non-negative")


def build_codebook(
    mesh: TriMesh,
    encoder_params: EncoderParams,
    grid: ViewpointGrid,
    render_cam: CameraIntrinsics,
    render_distance: float,
    object_id: str = "object",
    pad_factor: float = 1.2,
    crop_size: int | None = None,
) -> Codebook:
    """Render, crop and encode every grid rotation, in grid order."""
    if crop_size is None:
        crop_size = encoder_params.arch.input_size
    crops = []
    diagonals = []
    for i, rot in enumerate(grid.rotations):
        try:
            crop, _mask, _bbox, diag = render_view_crop(
                mesh, rot, render_cam, render_distance, pad_factor, crop_size
            )
        except ValueError as exc:
            raise ValueError(f"codebook view {i} failed to render: {exc}") from exc
        crops.append(crop)
        diagonals.append(diag)

    codes = np.empty((len(crops), encoder_params.arch.latent_dim), dtype=np.float64)
    for start in range(0, len(crops), ENCODE_CHUNK):
        batch = np.stack(crops[start : start + ENCODE_CHUNK])
        codes[start : start + batch.shape[0]] = encode(encoder_params, batch)
    norms = np.linalg.norm(codes, axis=1)
    if np.any(norms == 0.0):
        bad = int(np.nonzero(norms == 0.0)[0][0])
        raise ValueError(f"codebook view {bad} encoded to the zero vector")
    codes = (codes / norms[:, None]).astype(np.float32)

    return Codebook(
        codes=codes,
        rotations=list(grid.rotations),
        bbox_diagonals=np.array(diagonals),
        render_distance=float(render_distance),
        render_cam=render_cam,
        object_id=object_id,
        pad_factor=pad_factor,
        crop_size=crop_size,
    )


def lookup(codebook: Codebook, query_code: np.ndarray, k: int = 1) -> list[tuple[int, float]]:
    """Top-k (index, cosine similarity), ties broken by lowest index."""
    if k < 1:
        raise ValueError("k must be >= 1")
    q = np.asarray(query_code, dtype=np.float64).reshape(-1)
    norm = np.linalg.norm(q)
    if norm == 0.0:
        raise ValueError("query code must be non-zero")
    sims = codebook.codes @ (q / norm).astype(np.float32)
    k = min(k, len(codebook))
    order = np.argsort(-sims, kind="stable")[:k]
    return [(int(i), float(sims[i])) for i in order]


def estimate_translation(
    codebook: Codebook,
    match_index: int,
    detected_bbox: tuple[float, float, float, float],
    test_cam: CameraIntrinsics,
) -> np.ndarray:
    """Translation (mm) from the detected box scale and center."""
    diag_det = bbox_diagonal(detected_bbox)
    if diag_det <= 0.0:
        raise ValueError(f"detected bbox {detected_bbox} has zero diagonal")
    diag_cb = float(codebook.bbox_diagonals[match_index])
    tz = codebook.render_distance * (diag_cb / diag_det) * (test_cam.focal / codebook.render_cam.focal)
    uc = (detected_bbox[0] + detected_bbox[2]) / 2.0
    vc = (detected_bbox[1] + detected_bbox[3]) / 2.0
    tx = (uc - test_cam.cx) * tz / test_cam.fx
    ty = (vc - test_cam.cy) * tz / test_cam.fy
    return np.array([tx, ty, tz])


def ray_correction(
    bbox: tuple[float, float, float, float], test_cam: CameraIntrinsics
) -> Rotation3:
    """Rotation taking the optical axis to the viewing ray of the bbox center."""
    uc = (bbox[0] + bbox[2]) / 2.0
    vc = (bbox[1] + bbox[3]) / 2.0
    ray = np.array([(uc - test_cam.cx) / test_cam.fx, (vc - test_cam.cy) / test_cam.fy, 1.0])
    ray /= np.linalg.norm(ray)
    axis = np.cross(np.array([0.0, 0.0, 1.0]), ray)
    angle = math.acos(min(1.0, max(-1.0, float(ray[2]))))
    if np.linalg.norm(axis) < 1e-15:
        return Rotation3.identity()
    return rotation_about_axis(axis, angle)


def estimate_pose(
    image: np.ndarray,
    detection_bbox: tuple[float, float, float, float],
    encoder_params: EncoderParams,
    codebook: Codebook,
    test_cam: CameraIntrinsics,
    apply_ray_correction: bool = True,
) -> PoseEstimate:
    """Crop, encode, retrieve the nearest view, and recover translation."""
    crop = crop_square(image, detection_bbox, codebook.pad_factor, codebook.crop_size)
    code = encode(encoder_params, crop.astype(encoder_params.dtype))
    (index, similarity), = lookup(codebook, code, k=1)
    rotation = codebook.rotations[index]
    if apply_ray_correction:
        rotation = ray_correction(detection_bbox, test_cam) @ rotation
    translation = estimate_translation(codebook, index, detection_bbox, test_cam)
    return PoseEstimate(
        pose=PoseSE3(rotation, translation),
        similarity=similarity,
        codebook_index=index,
        object_id=codebook.object_id,
    )


def save_codebook(path, codebook: Codebook) -> None:
    path = Path(path)
    header = {
        "n": len(codebook),
        "latent_dim": int(codebook.codes.shape[1]),
        "render_distance": codebook.render_distance,
        "camera": codebook.render_cam.to_json(),
        "object_id": codebook.object_id,
        "pad_factor": codebook.pad_factor,
        "crop_size": codebook.crop_size,
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    rotations = np.stack([r.m for r in codebook.rotations]).reshape(len(codebook), 9)
    with open(path, "wb") as fh:
        fh.write(CODEBOOK_MAGIC)
        fh.write(struct.pack("<II", CODEBOOK_VERSION, len(blob)))
        fh.write(blob)
        fh.write(np.ascontiguousarray(codebook.codes, dtype="<f4").tobytes())
        fh.write(np.ascontiguousarray(rotations, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(codebook.bbox_diagonals, dtype="<f8").tobytes())
    with open(str(path) + ".json", "w", encoding="utf-8") as fh:
        json.dump(header, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_codebook(path) -> Codebook:
    path = Path(path)
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != CODEBOOK_MAGIC:
            raise ValueError(f"{path}: not a codebook file (magic {magic!r})")
        version, hlen = struct.unpack("<II", fh.read(8))
        if version != CODEBOOK_VERSION:
            raise ValueError(f"{path}: unsupported codebook version {version}")
        header = json.loads(fh.read(hlen).decode("utf-8"))
        n = int(header["n"])
        latent = int(header["latent_dim"])
        codes = np.frombuffer(fh.read(n * latent * 4), dtype="<f4").reshape(n, latent).copy()
        rot = np.frombuffer(fh.read(n * 9 * 8), dtype="<f8").reshape(n, 3, 3)
        diagonals = np.frombuffer(fh.read(n * 8), dtype="<f8").copy()
    rotations = [Rotation3(m) for m in rot]
    return Codebook(
        codes=codes,
        rotations=rotations,
        bbox_diagonals=diagonals,
        render_distance=float(header["render_distance"]),
        render_cam=CameraIntrinsics.from_json(header["camera"]),
        object_id=header["object_id"],
        pad_factor=float(header["pad_factor"]),
        crop_size=int(header["crop_size"]),
    )
