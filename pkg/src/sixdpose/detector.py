"""Background-difference detector for closed-loop tests on synthetic scenes.

Stands in for a learned 2D detector: it needs the clean backdrop of the
frame, thresholds the per-pixel difference, and reports one detection per
connected component. Scores are component areas normalized by the image
area. When several objects are registered, the class is assigned by the
best codebook similarity of the crop.
"""

from __future__ import annotations

import numpy as np
from scipy import ndimage

from .codebook import Codebook, lookup
from .encoder import EncoderParams, encode
from .metrics import Detection
from .render import crop_square

EIGHT_CONNECTED = np.ones((3, 3), dtype=int)


class CodebookClassifier:
    """Assigns the class whose codebook matches the crop best."""

    def __init__(self, encoders: dict[str, EncoderParams], codebooks: dict[str, Codebook]):
        if set(encoders) != set(codebooks):
            raise ValueError("encoders and codebooks must cover the same classes")
        self.encoders = encoders
        self.codebooks = codebooks

    def classify(self, image: np.ndarray, bbox) -> tuple[str, float]:
        best_class, best_sim = None, -np.inf
        for class_id in sorted(self.codebooks):
            cb = self.codebooks[class_id]
            crop = crop_square(image, bbox, cb.pad_factor, cb.crop_size)
            code = encode(self.encoders[class_id], crop)
            (_, sim), = lookup(cb, code, k=1)
            if sim > best_sim:
                best_class, best_sim = class_id, sim
        return best_class, best_sim


def detect_naive(
    image: np.ndarray,
    background: np.ndarray,
    threshold: float = 0.08,
    min_area: int = 50,
    classifier: CodebookClassifier | None = None,
    default_class: str = "object",
    frame_id: int = 0,
) -> list[Detection]:
    """Detections from |image - background| thresholding + connected components."""
    if image.shape != background.shape:
        raise ValueError(f"image {image.shape} vs background {background.shape} size mismatch")
    diff = np.abs(image - background)
    if diff.ndim == 3:
        diff = diff.mean(axis=2)
    binary = diff > threshold
    labels, n = ndimage.label(binary, structure=EIGHT_CONNECTED)
    h, w = binary.shape
    detections = []
    for comp in range(1, n + 1):
        ys, xs = np.nonzero(labels == comp)
        area = ys.size
        if area < min_area:
            continue
        bbox = (float(xs.min()), float(ys.min()), float(xs.max()) + 1.0, float(ys.max()) + 1.0)
        score = min(1.0, area / (h * w))
        if classifier is not None:
            class_id, _ = classifier.classify(image, bbox)
        else:
            class_id = default_class
        detections.append(Detection(class_id=class_id, bbox=bbox, score=score, frame_id=frame_id))
    detections.sort(key=lambda d: (-d.score, d.bbox))
    return detections
