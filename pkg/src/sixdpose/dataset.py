"""Scene dataset formats and the synthetic scene generator.

Directory layout written and read by this module::

    <root>/camera.json                 pinhole intrinsics
    <root>/config.json                 object registry {id: {"mesh": path}}
    <root>/objects/<id>.obj            CAD meshes
    <root>/scenes/<scene>/rgb/<frame>.png
    <root>/scenes/<scene>/bg/<frame>.png      clean backdrop (synthetic only)
    <root>/scenes/<scene>/gt.json
    <root>/scenes/<scene>/detections.json     optional
    <root>/scenes/<scene>/bundle.json         optional marker-bundle poses

gt.json maps zero-padded frame ids to lists of
``{"class_id", "bbox", "pose": {"R": [9], "t": [3]}}``; detections.json to
lists of ``{"class_id", "bbox", "score"}``. An adapter hook on the loader
lets a differently-keyed annotation schema be mapped onto these records
without touching the core types. Depth or other extra files are carried
opaquely: the loader never parses anything outside the layout above.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .geom import PoseSE3, pose_from_json, pose_to_json, random_rotation_from
from .mesh import TriMesh, load_mesh, mesh_diameter, save_obj
from .metrics import Detection, GTAnnotation
from .render import CameraIntrinsics, mask_bbox, render


def save_png(path, image: np.ndarray) -> None:
    """Write a float image in [0, 1] as 8-bit PNG (grayscale or RGB)."""
    arr = np.clip(np.round(np.asarray(image) * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(arr).save(path, format="PNG")


def load_png(path) -> np.ndarray:
    """Read a PNG as float RGB in [0, 1]."""
    with Image.open(path) as im:
        arr = np.asarray(im.convert("RGB"), dtype=np.float64)
    return arr / 255.0


@dataclass(frozen=True)
class SceneFrame:
    scene_id: str
    frame_id: int
    rgb_path: Path
    gts: list[GTAnnotation]
    detections: list[Detection] | None = None
    bundle_pose: PoseSE3 | None = None
    bg_path: Path | None = None

    def load_rgb(self) -> np.ndarray:
        return load_png(self.rgb_path)

    def load_bg(self) -> np.ndarray:
        if self.bg_path is None:
            raise ValueError(f"frame {self.scene_id}/{self.frame_id} has no background image")
        return load_png(self.bg_path)


@dataclass(frozen=True)
class ObjectEntry:
    mesh_path: Path
    mesh: TriMesh
    diameter: float


@dataclass
class SceneDataset:
    root: Path
    camera: CameraIntrinsics
    frames: list[SceneFrame]
    registry: dict[str, ObjectEntry] = field(default_factory=dict)

    def frames_of_scene(self, scene_id: str) -> list[SceneFrame]:
        return [f for f in self.frames if f.scene_id == scene_id]

    @property
    def scene_ids(self) -> list[str]:
        return sorted({f.scene_id for f in self.frames})


def _frame_key(frame_id: int) -> str:
    return f"{frame_id:06d}"


def default_gt_adapter(entry: dict) -> dict:
    return entry


def _read_json(path: Path):
    with open(path, "r", encoding="utf-8") as fh:
        return json.load(fh)


def load_dataset(root, gt_adapter=default_gt_adapter) -> SceneDataset:
    """Load a dataset directory; verifies every referenced file exists."""
    root = Path(root)
    camera = CameraIntrinsics.from_json(_read_json(root / "camera.json"))

    registry: dict[str, ObjectEntry] = {}
    config_path = root / "config.json"
    if config_path.exists():
        cfg = _read_json(config_path)
        for obj_id, entry in sorted(cfg.get("objects", {}).items()):
            mesh_path = root / entry["mesh"]
            if not mesh_path.exists():
                raise FileNotFoundError(f"registered mesh missing: {mesh_path}")
            mesh = load_mesh(mesh_path)
            registry[obj_id] = ObjectEntry(mesh_path, mesh, mesh_diameter(mesh))

    frames: list[SceneFrame] = []
    scenes_dir = root / "scenes"
    scene_dirs = sorted(p for p in scenes_dir.iterdir() if p.is_dir()) if scenes_dir.exists() else []
    for scene_dir in scene_dirs:
        scene_id = scene_dir.name
        gt = _read_json(scene_dir / "gt.json") if (scene_dir / "gt.json").exists() else {}
        dets = (
            _read_json(scene_dir / "detections.json")
            if (scene_dir / "detections.json").exists()
            else None
        )
        bundle = (
            _read_json(scene_dir / "bundle.json") if (scene_dir / "bundle.json").exists() else None
        )
        keys = sorted(gt.keys())
        if len(set(keys)) != len(keys):
            raise ValueError(f"{scene_dir}: duplicate frame ids")
        for key in keys:
            frame_id = int(key)
            rgb_path = scene_dir / "rgb" / f"{key}.png"
            if not rgb_path.exists():
                raise FileNotFoundError(f"missing frame image {rgb_path}")
            gts = []
            for raw in gt[key]:
                entry = gt_adapter(raw)
                pose = pose_from_json(entry["pose"]) if entry.get("pose") else None
                gts.append(
                    GTAnnotation(
                        class_id=entry["class_id"],
                        bbox=tuple(entry["bbox"]),
                        pose=pose,
                        frame_id=frame_id,
                    )
                )
            detections = None
            if dets is not None:
                detections = [
                    Detection(
                        class_id=d["class_id"],
                        bbox=tuple(d["bbox"]),
                        score=float(d["score"]),
                        frame_id=frame_id,
                    )
                    for d in dets.get(key, [])
                ]
            bundle_pose = pose_from_json(bundle[key]) if bundle and key in bundle else None
            bg_path = scene_dir / "bg" / f"{key}.png"
            frames.append(
                SceneFrame(
                    scene_id=scene_id,
                    frame_id=frame_id,
                    rgb_path=rgb_path,
                    gts=gts,
                    detections=detections,
                    bundle_pose=bundle_pose,
                    bg_path=bg_path if bg_path.exists() else None,
                )
            )
    frames.sort(key=lambda f: (f.scene_id, f.frame_id))
    return SceneDataset(root=root, camera=camera, frames=frames, registry=registry)


def write_detections(path, detections_by_frame: dict[int, list[Detection]]) -> None:
    payload = {
        _frame_key(fid): [
            {"class_id": d.class_id, "bbox": [float(v) for v in d.bbox], "score": d.score}
            for d in dets
        ]
        for fid, dets in sorted(detections_by_frame.items())
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


# ---------------------------------------------------------------------------
# synthetic backgrounds

def make_background(width: int, height: int, rng: np.random.Generator) -> np.ndarray:
    """One random backdrop: flat color, gradient, smooth noise or checker."""
    kind = int(rng.integers(4))
    if kind == 0:
        color = rng.uniform(0.05, 0.95, size=3)
        return np.broadcast_to(color, (height, width, 3)).copy()
    if kind == 1:
        c0 = rng.uniform(0.0, 1.0, size=3)
        c1 = rng.uniform(0.0, 1.0, size=3)
        axis = rng.integers(2)
        ramp = np.linspace(0.0, 1.0, width if axis == 0 else height)
        ramp = ramp[None, :, None] if axis == 0 else ramp[:, None, None]
        grad = c0 + (c1 - c0) * ramp
        return np.broadcast_to(grad, (height, width, 3)).copy()
    if kind == 2:
        # low-resolution noise scaled up with nearest-neighbor repeats
        cell = int(rng.integers(8, 32))
        small = rng.uniform(0.0, 1.0, size=((height + cell - 1) // cell, (width + cell - 1) // cell, 3))
        return small.repeat(cell, axis=0).repeat(cell, axis=1)[:height, :width]
    tile = int(rng.integers(16, 64))
    c0 = rng.uniform(0.0, 1.0, size=3)
    c1 = rng.uniform(0.0, 1.0, size=3)
    yy, xx = np.meshgrid(np.arange(height) // tile, np.arange(width) // tile, indexing="ij")
    checker = ((yy + xx) % 2).astype(np.float64)[:, :, None]
    return c0 * (1.0 - checker) + c1 * checker


def make_backgrounds(n: int, width: int, height: int, seed: int) -> list[np.ndarray]:
    rng = np.random.default_rng(seed)
    return [make_background(width, height, rng) for _ in range(n)]


# ---------------------------------------------------------------------------
# synthetic scene generation

class FrustumSamplingError(RuntimeError):
    pass


def _sample_visible_pose(
    mesh: TriMesh,
    cam: CameraIntrinsics,
    depth_range: tuple[float, float],
    rng: np.random.Generator,
    max_tries: int = 100,
) -> PoseSE3:
    """Haar-uniform rotation, position uniform in the frustum slab.

    Depth is drawn once; rotation and lateral position are retried until
    every mesh vertex projects inside the image.
    """
    z = rng.uniform(depth_range[0], depth_range[1])
    for _ in range(max_tries):
        rot = random_rotation_from(rng)
        x = rng.uniform((0 - cam.cx) / cam.fx * z, (cam.width - cam.cx) / cam.fx * z)
        y = rng.uniform((0 - cam.cy) / cam.fy * z, (cam.height - cam.cy) / cam.fy * z)
        pose = PoseSE3(rot, np.array([x, y, z]))
        verts = pose.rotation.apply(mesh.vertices) + pose.translation
        if verts[:, 2].min() <= 0:
            continue
        u = cam.fx * verts[:, 0] / verts[:, 2] + cam.cx
        v = cam.fy * verts[:, 1] / verts[:, 2] + cam.cy
        if u.min() >= 0 and u.max() < cam.width and v.min() >= 0 and v.max() < cam.height:
            return pose
    raise FrustumSamplingError(
        f"no fully visible pose found in {max_tries} tries at depth {z:.0f}mm"
    )


def generate_synthetic_scenes(
    out_root,
    meshes: dict[str, TriMesh],
    camera: CameraIntrinsics,
    count: int,
    seed: int,
    depth_range: tuple[float, float] = (400.0, 3000.0),
    scenes: int = 1,
    n_backgrounds: int = 8,
    occluder_probability: float = 0.0,
) -> SceneDataset:
    """Render objects at random visible poses over random backdrops.

    Writes the full directory layout (images, gt.json, meshes, camera) and
    returns the loaded dataset. Byte-identical output for identical inputs.
    """
    if count < 1:
        raise ValueError("count must be >= 1")
    root = Path(out_root)
    (root / "objects").mkdir(parents=True, exist_ok=True)
    with open(root / "camera.json", "w", encoding="utf-8") as fh:
        json.dump(camera.to_json(), fh, indent=2, sort_keys=True)
        fh.write("\n")

    registry_cfg = {}
    for obj_id, mesh in sorted(meshes.items()):
        save_obj(mesh, root / "objects" / f"{obj_id}.obj")
        registry_cfg[obj_id] = {"mesh": f"objects/{obj_id}.obj"}
    with open(root / "config.json", "w", encoding="utf-8") as fh:
        json.dump({"objects": registry_cfg, "seed": seed}, fh, indent=2, sort_keys=True)
        fh.write("\n")

    rng = np.random.default_rng(seed)
    backgrounds = [make_background(camera.width, camera.height, rng) for _ in range(n_backgrounds)]
    object_ids = sorted(meshes.keys())

    per_scene = (count + scenes - 1) // scenes
    frame_no = 0
    for scene_no in range(scenes):
        scene_id = f"{scene_no:03d}"
        scene_dir = root / "scenes" / scene_id
        (scene_dir / "rgb").mkdir(parents=True, exist_ok=True)
        (scene_dir / "bg").mkdir(parents=True, exist_ok=True)
        gt_payload: dict[str, list] = {}
        n_frames = min(per_scene, count - scene_no * per_scene)
        for local_id in range(n_frames):
            obj_id = object_ids[frame_no % len(object_ids)]
            mesh = meshes[obj_id]
            pose = _sample_visible_pose(mesh, camera, depth_range, rng)
            out = render(mesh, pose, camera)
            if not out.valid:
                raise FrustumSamplingError(f"frame {frame_no}: sampled pose rendered empty")
            bg = backgrounds[int(rng.integers(len(backgrounds)))]
            image = np.where(out.mask[:, :, None], out.color, bg)
            if occluder_probability > 0 and rng.uniform() < occluder_probability:
                image = _draw_occluder(image, out.bbox, rng)
            key = _frame_key(local_id)
            save_png(scene_dir / "rgb" / f"{key}.png", image)
            save_png(scene_dir / "bg" / f"{key}.png", bg)
            gt_payload[key] = [
                {
                    "class_id": obj_id,
                    "bbox": [float(v) for v in out.bbox],
                    "pose": pose_to_json(pose),
                }
            ]
            frame_no += 1
        with open(scene_dir / "gt.json", "w", encoding="utf-8") as fh:
            json.dump(gt_payload, fh, indent=2, sort_keys=True)
            fh.write("\n")
    return load_dataset(root)


def _draw_occluder(image: np.ndarray, bbox, rng: np.random.Generator) -> np.ndarray:
    """Gray square overlapping the object box, to emulate partial occlusion."""
    h, w = image.shape[:2]
    x0, y0, x1, y1 = bbox
    side = int(rng.uniform(0.2, 0.5) * max(x1 - x0, y1 - y0))
    if side < 1:
        return image
    cx = rng.uniform(x0, x1)
    cy = rng.uniform(y0, y1)
    gray = float(rng.uniform())
    ax0 = int(np.clip(cx - side / 2, 0, w - 1))
    ay0 = int(np.clip(cy - side / 2, 0, h - 1))
    out = image.copy()
    out[ay0 : min(ay0 + side, h), ax0 : min(ax0 + side, w)] = gray
    return out


def gt_detections(frame: SceneFrame, score: float = 1.0) -> list[Detection]:
    """Ground-truth boxes repackaged as perfect detections."""
    return [
        Detection(class_id=g.class_id, bbox=g.bbox, score=score, frame_id=frame.frame_id)
        for g in frame.gts
    ]
