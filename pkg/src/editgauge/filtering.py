"""Editable-object selection and image preparation.

Objects survive four checks (size, crop, occlusion, detection IoU) and a
per-image duplicate-class exclusion; surviving images are trimmed to the
largest square containing every kept object and resized to 512x512.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Optional

import cv2
import numpy as np

from .config import RunConfig
from .records import FilterReport, ImageRecord, SceneObject

log = logging.getLogger(__name__)

# The object name is substituted for {name}; answers are matched against the
# configured desired-answer vector, index for index.
OCCLUSION_QUESTIONS = (
    "Is the {name} hidden behind another object?",
    "Is part of the {name} covered by another object?",
    "Is the {name} partially outside the image frame?",
    "Is part of the {name} blocked by something else in the scene?",
    "Are parts of the {name} visible?",
    "Is the {name} fully in view without anything blocking it?",
)


class FilterError(ValueError):
    """Raised on invalid filtering inputs."""


def check_size(bbox, image_dims, min_ratio: float = 0.005) -> bool:
    """True iff the bbox covers at least ``min_ratio`` of the image area."""
    width, height = image_dims
    if width <= 0 or height <= 0:
        raise FilterError(f"zero-area image {width}x{height}")
    _, _, w, h = bbox
    return (w * h) / (width * height) >= min_ratio


def check_not_cropped(bbox, image_dims) -> bool:
    """False iff any bbox side touches the image border."""
    width, height = image_dims
    x, y, w, h = bbox
    return not (x <= 0 or y <= 0 or x + w >= width or y + h >= height)


def check_occlusion(object_name: str, vqa, config: RunConfig = RunConfig()) -> bool:
    """Ask the six fixed visibility questions; pass on enough desired answers."""
    desired = config.occlusion_desired_answers
    matches = 0
    for question, want in zip(OCCLUSION_QUESTIONS, desired):
        answer = vqa.ask(None, question.format(name=object_name))
        if answer.strip().lower() == want:
            matches += 1
    return matches >= config.occlusion_min_matches


def bbox_iou(a, b) -> float:
    """Intersection-over-union of two (x, y, w, h) boxes."""
    ax, ay, aw, ah = a
    bx, by, bw, bh = b
    ix = max(0.0, min(ax + aw, bx + bw) - max(ax, bx))
    iy = max(0.0, min(ay + ah, by + bh) - max(ay, by))
    inter = ix * iy
    union = aw * ah + bw * bh - inter
    return inter / union if union > 0 else 0.0


def check_detection_iou(annotated_bbox, detection, threshold: float = 0.5) -> bool:
    """True iff a detection exists and its bbox overlaps the annotation enough."""
    if detection is None:
        return False
    return bbox_iou(annotated_bbox, detection.bbox) >= threshold


def filter_image(record: ImageRecord, segmenter, vqa,
                 raster: Optional[np.ndarray] = None,
                 config: RunConfig = RunConfig()) -> FilterReport:
    """Run all object checks for one image and report kept/rejected objects.

    Checks run in order (size, crop, occlusion, detection IoU); the first
    failure is the recorded reason. Classes kept more than once are then
    rejected wholesale as ambiguous.
    """
    dims = (record.width, record.height)
    kept: list[SceneObject] = []
    rejections: list[tuple[str, str]] = []
    for obj in record.objects:
        if not check_size(obj.bbox, dims, config.min_area_ratio):
            rejections.append((obj.object_id, "too_small"))
            continue
        if not check_not_cropped(obj.bbox, dims):
            rejections.append((obj.object_id, "cropped"))
            continue
        try:
            visible = check_occlusion(obj.class_name, vqa, config)
        except Exception as exc:  # conservative: treat backend failure as occlusion
            log.warning("VQA failed for %s/%s: %s; rejecting as occluded",
                        record.image_id, obj.object_id, exc)
            visible = False
        if not visible:
            rejections.append((obj.object_id, "occluded"))
            continue
        try:
            if hasattr(segmenter, "detect_all"):
                candidates = segmenter.detect_all(raster, obj.class_name)
            else:
                single = segmenter.detect(raster, obj.class_name)
                candidates = [single] if single is not None else []
        except Exception as exc:
            log.warning("segmenter failed for %s/%s: %s",
                        record.image_id, obj.object_id, exc)
            candidates = []
        best = max(candidates, key=lambda d: bbox_iou(obj.bbox, d.bbox),
                   default=None)
        if not check_detection_iou(obj.bbox, best, config.iou_threshold):
            rejections.append((obj.object_id, "undetected_iou"))
            continue
        kept.append(obj)

    class_counts: dict[str, int] = {}
    for obj in kept:
        class_counts[obj.class_name] = class_counts.get(obj.class_name, 0) + 1
    final_kept = []
    for obj in kept:
        if class_counts[obj.class_name] > 1:
            rejections.append((obj.object_id, "duplicate_class"))
        else:
            final_kept.append(obj.object_id)

    return FilterReport(image_id=record.image_id, kept=tuple(final_kept),
                        rejections=tuple(rejections))


@dataclass(frozen=True)
class CropTransform:
    """Affine map from original pixel coordinates to output coordinates."""

    x0: float
    y0: float
    scale: float

    def apply_point(self, x: float, y: float) -> tuple[float, float]:
        return ((x - self.x0) * self.scale, (y - self.y0) * self.scale)

    def apply_bbox(self, bbox) -> tuple[float, float, float, float]:
        x, y, w, h = bbox
        nx, ny = self.apply_point(x, y)
        return (nx, ny, w * self.scale, h * self.scale)


class TrimRejection(ValueError):
    """Raised when the kept objects cannot fit any square crop window."""


def trim_and_resize(record: ImageRecord, kept_ids,
                    raster: Optional[np.ndarray] = None,
                    output_size: int = 512,
                    ) -> tuple[ImageRecord, CropTransform, Optional[np.ndarray]]:
    """Crop the largest square containing all kept objects and scale to output.

    The window is centered on the kept objects' union bbox, shifted only as
    far as needed to stay inside the image. Aspect ratio inside the window
    is preserved exactly (single isotropic scale). Raster resampling is
    bilinear.
    """
    kept_ids = list(kept_ids)
    if not kept_ids:
        raise TrimRejection(f"image {record.image_id}: no kept objects")
    kept = [record.object_by_id(oid) for oid in kept_ids]

    side = min(record.width, record.height)
    ux0 = min(o.bbox[0] for o in kept)
    uy0 = min(o.bbox[1] for o in kept)
    ux1 = max(o.bbox[0] + o.bbox[2] for o in kept)
    uy1 = max(o.bbox[1] + o.bbox[3] for o in kept)
    if ux1 - ux0 > side or uy1 - uy0 > side:
        raise TrimRejection(
            f"image {record.image_id}: kept objects span {ux1 - ux0:.0f}x"
            f"{uy1 - uy0:.0f}, larger than any {side}x{side} window"
        )
    cx = (ux0 + ux1) / 2.0
    cy = (uy0 + uy1) / 2.0
    x0 = int(round(min(max(cx - side / 2.0, 0.0), record.width - side)))
    y0 = int(round(min(max(cy - side / 2.0, 0.0), record.height - side)))
    scale = output_size / side
    transform = CropTransform(x0=float(x0), y0=float(y0), scale=scale)

    new_objects = []
    for obj in record.objects:
        bbox = transform.apply_bbox(obj.bbox)
        x, y, w, h = bbox
        if x < -1e-6 or y < -1e-6 or x + w > output_size + 1e-6 \
                or y + h > output_size + 1e-6:
            if obj.object_id in kept_ids:
                raise TrimRejection(
                    f"image {record.image_id}: kept object {obj.object_id} "
                    "falls outside the crop window"
                )
            continue  # non-kept objects may be cropped away
        bbox = (max(0.0, x), max(0.0, y),
                min(w, output_size - max(0.0, x)),
                min(h, output_size - max(0.0, y)))
        new_objects.append(SceneObject(
            object_id=obj.object_id, class_name=obj.class_name, bbox=bbox,
            attributes=obj.attributes, relations=obj.relations))

    new_record = ImageRecord(
        image_id=record.image_id, width=output_size, height=output_size,
        objects=tuple(new_objects), source_path=record.source_path)

    new_raster = None
    if raster is not None:
        crop = raster[y0:y0 + side, x0:x0 + side]
        if side == output_size:
            new_raster = crop.copy()  # keep identity crops byte-exact
        else:
            new_raster = cv2.resize(crop, (output_size, output_size),
                                    interpolation=cv2.INTER_LINEAR)
    return new_record, transform, new_raster
