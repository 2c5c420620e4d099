"""Pose and detection metrics, ground-truth composition, and report building.

Pose error metrics follow the standard model-point conventions:

* ``e_add``: mean distance between corresponding model points under the
  estimated vs ground-truth pose.
* ``e_adi``: mean distance from each estimated-pose point to the closest
  ground-truth-pose point; tolerant of indistinguishable (symmetric) views.
* ``e_cou``: 1 - IoU of the two silhouette masks.

Pose correctness thresholds are fractions of the model diameter: an
estimate is accepted at threshold k when error < k * diameter. Mask-overlap
acceptance is e_cou <= theta (so recall grows with theta). Detection AP
uses greedy score-ordered matching and a 101-point interpolated
precision-recall curve; mAP averages AP over ground-truth classes and IoU
thresholds. Rotation errors are geodesic angles reported in [0, 180]
degrees; this convention is recorded in every report.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .geom import PoseSE3, compose, geodesic_angle_deg, invert, transform_point

RECALL_POINTS = 101

REPORT_CONVENTIONS = {
    "rotation_error_deg": "geodesic angle in [0, 180]",
    "pose_threshold": "error < k * model diameter",
    "cou_threshold": "e_cou <= theta",
    "ap_interpolation": f"{RECALL_POINTS}-point interpolated precision-recall",
    "units": "millimeters and degrees",
}


@dataclass(frozen=True)
class Detection:
    class_id: str
    bbox: tuple[float, float, float, float]
    score: float
    frame_id: int = 0

    def __post_init__(self):
        x0, y0, x1, y1 = self.bbox
        if not (x0 < x1 and y0 < y1):
            raise ValueError(f"degenerate bbox {self.bbox}")
        if not 0.0 <= self.score <= 1.0:
            raise ValueError(f"score {self.score} outside [0, 1]")


@dataclass(frozen=True)
class GTAnnotation:
    class_id: str
    bbox: tuple[float, float, float, float]
    pose: PoseSE3 | None = None
    frame_id: int = 0

    def __post_init__(self):
        x0, y0, x1, y1 = self.bbox
        if not (x0 < x1 and y0 < y1):
            raise ValueError(f"degenerate bbox {self.bbox}")


# ---------------------------------------------------------------------------
# pose errors

def e_add(points: np.ndarray, p_hat: PoseSE3, p_gt: PoseSE3) -> float:
    """Mean distance between corresponding transformed model points."""
    pts = np.asarray(points, dtype=np.float64)
    if pts.size == 0:
        raise ValueError("point set must be non-empty")
    a = transform_point(p_hat, pts)
    b = transform_point(p_gt, pts)
    return float(np.linalg.norm(a - b, axis=1).mean())


def e_adi(points: np.ndarray, p_hat: PoseSE3, p_gt: PoseSE3, method: str = "exact") -> float:
    """Mean closest-point distance between the two transformed point sets.

    ``method="exact"`` is the O(n^2) reference scan; ``method="grid"`` is a
    uniform-cell accelerated path that returns the same value (the
    per-pair arithmetic is identical, only the search order differs).
    """
    pts = np.asarray(points, dtype=np.float64)
    if pts.size == 0:
        raise ValueError("point set must be non-empty")
    a = transform_point(p_hat, pts)
    b = transform_point(p_gt, pts)
    if method == "exact":
        dmin = _nn_exact(a, b)
    elif method == "grid":
        dmin = _nn_grid(a, b)
    else:
        raise ValueError(f"unknown method {method!r}")
    return float(dmin.mean())


def _pair_dist(a_pt: np.ndarray, b: np.ndarray) -> np.ndarray:
    d = b - a_pt
    return np.sqrt((d * d).sum(axis=1))


def _nn_exact(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    out = np.empty(a.shape[0])
    block = 256
    for i in range(0, a.shape[0], block):
        d = a[i : i + block, None, :] - b[None, :, :]
        sq = (d * d).sum(axis=-1)
        out[i : i + block] = np.sqrt(sq.min(axis=1))
    return out


def _nn_grid(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Nearest-neighbor distances via a uniform cell grid with ring expansion.

    Any point in a cell at Chebyshev ring r from the query's cell is at
    least (r - 1) * cell away, so the scan can stop at ring r once the best
    distance found is <= r * cell. Rings are clipped to the occupied cell
    box, and the scan starts at the first ring that can touch it.
    """
    lo = b.min(axis=0)
    span = float((b.max(axis=0) - lo).max())
    n = b.shape[0]
    cell = max(span / max(1.0, round(n ** (1.0 / 3.0))), 1e-9)
    cells: dict[tuple[int, int, int], list[int]] = {}
    keys = np.floor((b - lo) / cell).astype(np.int64)
    for idx, key in enumerate(map(tuple, keys)):
        cells.setdefault(key, []).append(idx)
    kmin = keys.min(axis=0)
    kmax = keys.max(axis=0)

    def ring_cells(center, ring):
        x0, y0, z0 = center
        for cx in range(max(x0 - ring, kmin[0]), min(x0 + ring, kmax[0]) + 1):
            for cy in range(max(y0 - ring, kmin[1]), min(y0 + ring, kmax[1]) + 1):
                for cz in range(max(z0 - ring, kmin[2]), min(z0 + ring, kmax[2]) + 1):
                    if max(abs(cx - x0), abs(cy - y0), abs(cz - z0)) != ring:
                        continue
                    got = cells.get((cx, cy, cz))
                    if got:
                        yield from got

    out = np.empty(a.shape[0])
    for i, pt in enumerate(a):
        center = tuple(int(v) for v in np.floor((pt - lo) / cell))
        clamped = tuple(int(np.clip(center[d], kmin[d], kmax[d])) for d in range(3))
        first = max(abs(center[d] - clamped[d]) for d in range(3))
        last = max(abs(center[d] - e) for d in range(3) for e in (kmin[d], kmax[d]))
        best = math.inf
        for ring in range(first, last + 1):
            candidates = list(ring_cells(center, ring))
            if candidates:
                best = min(best, float(_pair_dist(pt, b[candidates]).min()))
            if best <= ring * cell:
                break
        out[i] = best
    return out


def e_cou(mask_pred: np.ndarray, mask_gt: np.ndarray) -> float:
    """Complement-over-union of two binary masks; 0 when both are empty."""
    if mask_pred.shape != mask_gt.shape:
        raise ValueError(f"mask shapes differ: {mask_pred.shape} vs {mask_gt.shape}")
    a = mask_pred.astype(bool)
    b = mask_gt.astype(bool)
    union = int(np.logical_or(a, b).sum())
    if union == 0:
        return 0.0
    inter = int(np.logical_and(a, b).sum())
    return 1.0 - inter / union


def pose_errors(p_hat: PoseSE3, p_gt: PoseSE3) -> tuple[float, float]:
    """(translation error mm, rotation error deg in [0, 180])."""
    t_e = float(np.linalg.norm(p_hat.translation - p_gt.translation))
    r_e = geodesic_angle_deg(p_hat.rotation, p_gt.rotation)
    return t_e, r_e


# ---------------------------------------------------------------------------
# recall tables

def recall_table(errors, diameter: float, thresholds) -> list[float]:
    """Fraction of errors below k * diameter, for each threshold k."""
    if diameter <= 0:
        raise ValueError("diameter must be positive")
    arr = np.asarray(list(errors), dtype=np.float64)
    if arr.size == 0:
        warnings.warn("recall_table over an empty error list; reporting 0.0", stacklevel=2)
        return [0.0 for _ in thresholds]
    return [float((arr < k * diameter).mean()) for k in thresholds]


def cou_recall_table(values, thetas) -> list[float]:
    """Fraction of mask-overlap errors accepted at each theta (e_cou <= theta)."""
    arr = np.asarray(list(values), dtype=np.float64)
    if arr.size == 0:
        warnings.warn("cou_recall_table over an empty list; reporting 0.0", stacklevel=2)
        return [0.0 for _ in thetas]
    return [float((arr <= t).mean()) for t in thetas]


# ---------------------------------------------------------------------------
# detection metrics

def bbox_iou(a, b) -> float:
    ax0, ay0, ax1, ay1 = a
    bx0, by0, bx1, by1 = b
    ix0, iy0 = max(ax0, bx0), max(ay0, by0)
    ix1, iy1 = min(ax1, bx1), min(ay1, by1)
    if ix0 >= ix1 or iy0 >= iy1:
        return 0.0
    inter = (ix1 - ix0) * (iy1 - iy0)
    union = (ax1 - ax0) * (ay1 - ay0) + (bx1 - bx0) * (by1 - by0) - inter
    return inter / union


def _ap_single_class(dets: list[Detection], n_gt: int, gt_by_frame, iou_threshold: float) -> float:
    if n_gt == 0:
        return 0.0
    order = sorted(range(len(dets)), key=lambda i: (-dets[i].score, dets[i].frame_id, i))
    matched: set[tuple[int, int]] = set()
    tp = np.zeros(len(order))
    for rank, i in enumerate(order):
        det = dets[i]
        best_iou, best_j = 0.0, -1
        for j, gt in enumerate(gt_by_frame.get(det.frame_id, ())):
            if (det.frame_id, j) in matched:
                continue
            iou = bbox_iou(det.bbox, gt.bbox)
            if iou >= iou_threshold and iou > best_iou:
                best_iou, best_j = iou, j
        if best_j >= 0:
            matched.add((det.frame_id, best_j))
            tp[rank] = 1.0
    cum_tp = np.cumsum(tp)
    recall = cum_tp / n_gt
    precision = cum_tp / np.arange(1, len(order) + 1)
    # interpolated AP over a fixed grid of recall points
    ap = 0.0
    for r in np.linspace(0.0, 1.0, RECALL_POINTS):
        mask = recall >= r - 1e-12
        ap += float(precision[mask].max()) if mask.any() else 0.0
    return ap / RECALL_POINTS


def average_precision(dets, gts, iou_threshold: float = 0.5) -> float:
    """Class-aware AP at one IoU threshold, averaged over ground-truth classes."""
    classes = sorted({g.class_id for g in gts})
    if not classes:
        warnings.warn("average_precision with no ground truth; reporting 0.0", stacklevel=2)
        return 0.0
    aps = []
    for c in classes:
        class_dets = [d for d in dets if d.class_id == c]
        class_gts = [g for g in gts if g.class_id == c]
        by_frame: dict[int, list[GTAnnotation]] = {}
        for g in class_gts:
            by_frame.setdefault(g.frame_id, []).append(g)
        aps.append(_ap_single_class(class_dets, len(class_gts), by_frame, iou_threshold))
    return float(np.mean(aps))


def mean_average_precision(dets, gts, iou_thresholds=(0.5,)) -> float:
    """Mean over IoU thresholds of the class-averaged AP."""
    return float(np.mean([average_precision(dets, gts, t) for t in iou_thresholds]))


# ---------------------------------------------------------------------------
# fiducial-bundle ground truth

def bundle_offset(o_p: PoseSE3, b_p: PoseSE3) -> PoseSE3:
    """Fixed transform of the marker bundle expressed in the object frame."""
    return compose(invert(o_p), b_p)


def recover_object_pose(b_p: PoseSE3, t_o_b: PoseSE3) -> PoseSE3:
    """Object pose from an observed bundle pose and the calibrated offset."""
    return compose(b_p, invert(t_o_b))


def mean_pose(poses: list[PoseSE3]) -> PoseSE3:
    """Chordal mean: average translation, rotation projected back to SO(3)."""
    if not poses:
        raise ValueError("need at least one pose")
    t = np.mean([p.translation for p in poses], axis=0)
    m = np.mean([p.rotation.m for p in poses], axis=0)
    u, _, vt = np.linalg.svd(m)
    r = u @ vt
    if np.linalg.det(r) < 0:
        u[:, -1] = -u[:, -1]
        r = u @ vt
    from .geom import Rotation3

    return PoseSE3(Rotation3(r), t)


# ---------------------------------------------------------------------------
# report aggregation

@dataclass(frozen=True)
class PoseRecord:
    scene_id: str
    object_id: str
    frame_id: int
    e_add: float
    e_adi: float
    e_cou: float
    t_e: float
    r_e: float


@dataclass
class EvalReport:
    records: list[PoseRecord]
    recall: dict  # object_id -> {"add": {k: r}, "adi": {...}, "cou": {...}}
    medians: dict  # "scene/object" -> {"t_e": mm, "r_e": deg, "count": n}
    map_score: float | None
    conventions: dict = field(default_factory=lambda: dict(REPORT_CONVENTIONS))
    point_sample: str = "mesh vertices"

    def to_json(self) -> dict:
        return {
            "conventions": self.conventions,
            "point_sample": self.point_sample,
            "map": self.map_score,
            "recall": self.recall,
            "medians": self.medians,
            "records": [
                {
                    "scene_id": r.scene_id, "object_id": r.object_id, "frame_id": r.frame_id,
                    "e_add": r.e_add, "e_adi": r.e_adi, "e_cou": r.e_cou,
                    "t_e": r.t_e, "r_e": r.r_e,
                }
                for r in self.records
            ],
        }

    def to_text(self) -> str:
        lines = []
        lines.append("pose recall (error < k * diameter; cou: e_cou <= theta)")
        for obj in sorted(self.recall):
            tables = self.recall[obj]
            for metric in ("add", "adi", "cou"):
                cols = tables.get(metric)
                if not cols:
                    continue
                cells = "  ".join(f"{k}:{v:6.3f}" for k, v in cols.items())
                lines.append(f"  {obj:<12} {metric:<4} {cells}")
        lines.append("")
        lines.append("medians per scene/object (t_e mm, r_e deg)")
        header = f"  {'scene/object':<28} {'t_e':>8} {'r_e':>8} {'n':>5}"
        lines.append(header)
        for key in sorted(self.medians):
            row = self.medians[key]
            lines.append(f"  {key:<28} {row['t_e']:>8.2f} {row['r_e']:>8.2f} {row['count']:>5d}")
        if self.map_score is not None:
            lines.append("")
            lines.append(f"mAP: {self.map_score:.4f}")
        lines.append("")
        lines.append(f"rotation error convention: {self.conventions['rotation_error_deg']}")
        return "\n".join(lines) + "\n"


def aggregate_report(
    records: list[PoseRecord],
    diameters: dict[str, float],
    k_thresholds=(0.1, 0.2, 0.3),
    cou_thresholds=(0.3, 0.5, 0.7),
    map_score: float | None = None,
    point_sample: str = "mesh vertices",
) -> EvalReport:
    """Medians per scene/object plus recall tables per object."""
    by_object: dict[str, list[PoseRecord]] = {}
    by_group: dict[tuple[str, str], list[PoseRecord]] = {}
    for r in records:
        by_object.setdefault(r.object_id, []).append(r)
        by_group.setdefault((r.scene_id, r.object_id), []).append(r)

    recall: dict[str, dict] = {}
    for obj, recs in sorted(by_object.items()):
        d = diameters[obj]
        recall[obj] = {
            "add": {str(k): v for k, v in zip(k_thresholds, recall_table([r.e_add for r in recs], d, k_thresholds))},
            "adi": {str(k): v for k, v in zip(k_thresholds, recall_table([r.e_adi for r in recs], d, k_thresholds))},
            "cou": {str(t): v for t, v in zip(cou_thresholds, cou_recall_table([r.e_cou for r in recs], cou_thresholds))},
        }

    medians: dict[str, dict] = {}
    for (scene, obj), recs in sorted(by_group.items()):
        medians[f"{scene}/{obj}"] = {
            "t_e": float(np.median([r.t_e for r in recs])),
            "r_e": float(np.median([r.r_e for r in recs])),
            "count": len(recs),
        }

    return EvalReport(
        records=sorted(records, key=lambda r: (r.scene_id, r.object_id, r.frame_id)),
        recall=recall,
        medians=medians,
        map_score=map_score,
        point_sample=point_sample,
    )


def save_report(report: EvalReport, out_dir) -> tuple[Path, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    json_path = out / "report.json"
    text_path = out / "report.txt"
    with open(json_path, "w", encoding="utf-8") as fh:
        json.dump(report.to_json(), fh, indent=2, sort_keys=True)
        fh.write("\n")
    with open(text_path, "w", encoding="utf-8") as fh:
        fh.write(report.to_text())
    return json_path, text_path
