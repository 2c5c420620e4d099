"""End-to-end estimation over a dataset, pose evaluation, and latency bench.

``run_pipeline`` walks frames in order, estimates a pose for every
detection (from files or the naive detector) and returns JSON-ready
records. Per-stage wall-clock timings are collected separately so the
estimate records stay byte-identical across runs.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .codebook import Codebook, estimate_pose
from .dataset import SceneDataset, SceneFrame, gt_detections
from .detector import CodebookClassifier, detect_naive
from .encoder import EncoderParams, encode
from .geom import PoseSE3, pose_from_json, pose_to_json
from .metrics import (
    Detection,
    PoseRecord,
    aggregate_report,
    bbox_iou,
    e_add,
    e_adi,
    e_cou,
    pose_errors,
    recover_object_pose,
)
from .render import render


@dataclass
class StageTimes:
    """Per-stage wall-clock samples; the first sample is warm-up and dropped."""

    samples: dict

    def __init__(self):
        self.samples = {}

    def add(self, stage: str, seconds: float) -> None:
        self.samples.setdefault(stage, []).append(seconds)

    def percentiles(self, drop_first: bool = True) -> dict:
        out = {}
        for stage, values in sorted(self.samples.items()):
            vals = values[1:] if drop_first and len(values) > 1 else values
            vals = sorted(vals)
            out[stage] = {
                "count": len(vals),
                "p50_ms": _pct(vals, 0.50) * 1e3,
                "p90_ms": _pct(vals, 0.90) * 1e3,
                "p99_ms": _pct(vals, 0.99) * 1e3,
                "mean_ms": float(np.mean(vals)) * 1e3,
            }
        return out


def _pct(sorted_vals: list[float], q: float) -> float:
    if not sorted_vals:
        return 0.0
    idx = min(len(sorted_vals) - 1, int(round(q * (len(sorted_vals) - 1))))
    return float(sorted_vals[idx])


def frame_detections(
    frame: SceneFrame,
    source: str,
    classifier: CodebookClassifier | None = None,
    default_class: str = "object",
) -> list[Detection]:
    """Detections for one frame from the chosen source: gt | file | naive."""
    if source == "gt":
        return gt_detections(frame)
    if source == "file":
        if frame.detections is None:
            raise ValueError(f"frame {frame.scene_id}/{frame.frame_id} has no detections file")
        return frame.detections
    if source == "naive":
        return detect_naive(
            frame.load_rgb(),
            frame.load_bg(),
            classifier=classifier,
            default_class=default_class,
            frame_id=frame.frame_id,
        )
    raise ValueError(f"unknown detection source {source!r} (want gt, file or naive)")


def run_pipeline(
    dataset: SceneDataset,
    encoders: dict[str, EncoderParams],
    codebooks: dict[str, Codebook],
    detection_source: str = "gt",
    apply_ray_correction: bool = True,
) -> tuple[list[dict], StageTimes]:
    """Estimate a pose for every detection of every frame, in frame order.

    A detection whose class has no codebook yields an error record and the
    run continues. Returns (records, stage timings).
    """
    times = StageTimes()
    classifier = None
    if detection_source == "naive" and len(codebooks) > 1:
        classifier = CodebookClassifier(encoders, codebooks)
    default_class = sorted(codebooks)[0] if codebooks else "object"

    records: list[dict] = []
    for frame in dataset.frames:
        t0 = time.perf_counter()
        detections = frame_detections(frame, detection_source, classifier, default_class)
        times.add("detect", time.perf_counter() - t0)
        image = None
        for det in detections:
            record = {
                "scene_id": frame.scene_id,
                "frame_id": frame.frame_id,
                "class_id": det.class_id,
                "bbox": [float(v) for v in det.bbox],
            }
            if det.class_id not in codebooks:
                record["error"] = f"no codebook for class {det.class_id!r}"
                records.append(record)
                continue
            if image is None:
                image = frame.load_rgb()
            t0 = time.perf_counter()
            est = estimate_pose(
                image,
                det.bbox,
                encoders[det.class_id],
                codebooks[det.class_id],
                dataset.camera,
                apply_ray_correction=apply_ray_correction,
            )
            times.add("estimate", time.perf_counter() - t0)
            record.update(
                {
                    "pose": pose_to_json(est.pose),
                    "similarity": est.similarity,
                    "codebook_index": est.codebook_index,
                }
            )
            records.append(record)
    return records, times


def evaluate_estimates(
    dataset: SceneDataset,
    estimates: list[dict],
    k_thresholds=(0.1, 0.2, 0.3),
    cou_thresholds=(0.3, 0.5, 0.7),
    bundle_offsets: dict[str, PoseSE3] | None = None,
    map_score: float | None = None,
):
    """Match estimates to ground truth by class within each frame and score them.

    Ground-truth poses come from gt.json, or are recovered from the frame's
    marker-bundle pose when an offset is provided for the object. With
    several same-class ground-truth entries in a frame, the highest-IoU box
    is used.
    """
    by_frame: dict[tuple[str, int], SceneFrame] = {
        (f.scene_id, f.frame_id): f for f in dataset.frames
    }
    pose_records: list[PoseRecord] = []
    for est in estimates:
        if "error" in est or "pose" not in est:
            continue
        frame = by_frame.get((est["scene_id"], est["frame_id"]))
        if frame is None:
            continue
        class_id = est["class_id"]
        candidates = [g for g in frame.gts if g.class_id == class_id]
        if not candidates:
            continue
        gt = max(candidates, key=lambda g: bbox_iou(g.bbox, est["bbox"]))
        gt_pose = gt.pose
        if gt_pose is None and bundle_offsets and frame.bundle_pose is not None:
            offset = bundle_offsets.get(class_id)
            if offset is not None:
                gt_pose = recover_object_pose(frame.bundle_pose, offset)
        if gt_pose is None:
            continue
        entry = dataset.registry.get(class_id)
        if entry is None:
            continue
        est_pose = pose_from_json(est["pose"])
        pts = entry.mesh.vertices
        mask_pred = render(entry.mesh, est_pose, dataset.camera).mask
        mask_gt = render(entry.mesh, gt_pose, dataset.camera).mask
        t_e, r_e = pose_errors(est_pose, gt_pose)
        pose_records.append(
            PoseRecord(
                scene_id=est["scene_id"],
                object_id=class_id,
                frame_id=est["frame_id"],
                e_add=e_add(pts, est_pose, gt_pose),
                e_adi=e_adi(pts, est_pose, gt_pose),
                e_cou=e_cou(mask_pred, mask_gt),
                t_e=t_e,
                r_e=r_e,
            )
        )
    diameters = {obj: entry.diameter for obj, entry in dataset.registry.items()}
    return aggregate_report(
        pose_records,
        diameters,
        k_thresholds=k_thresholds,
        cou_thresholds=cou_thresholds,
        map_score=map_score,
    )


def bench_stages(
    encoder_params: EncoderParams,
    codebook: Codebook,
    image: np.ndarray,
    bbox,
    cam,
    iterations: int = 20,
) -> dict:
    """Latency percentiles for encode, lookup and the end-to-end estimate.

    The first iteration of each stage is discarded as warm-up.
    """
    from .codebook import lookup
    from .render import crop_square

    times = StageTimes()
    crop = crop_square(image, bbox, codebook.pad_factor, codebook.crop_size)
    crop = crop.astype(encoder_params.dtype)
    code = encode(encoder_params, crop)
    for _ in range(iterations + 1):
        t0 = time.perf_counter()
        encode(encoder_params, crop)
        times.add("encode", time.perf_counter() - t0)
        t0 = time.perf_counter()
        lookup(codebook, code, k=1)
        times.add("lookup", time.perf_counter() - t0)
        t0 = time.perf_counter()
        estimate_pose(image, bbox, encoder_params, codebook, cam)
        times.add("end_to_end", time.perf_counter() - t0)
    return times.percentiles()
