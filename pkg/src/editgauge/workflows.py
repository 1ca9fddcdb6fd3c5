"""Per-task evaluation workflows assembling atomic metrics into criteria.

Each edit type is scored with its pre-defined criteria set; detection
failures on the edited image follow the task's convention (fidelity zeroed,
or set to 1 for removal, with the background comparison falling back to
original-region or whole-image masking).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional

import cv2
import numpy as np

from .backends import BackendSet
from .config import RunConfig
from .metrics import (clip_alignment, combine_weighted, degrade,
                      distance_to_similarity, edge_map, l2_similarity,
                      object_crop, position_consistency, size_consistency,
                      size_fidelity)
from .records import (CriterionScores, DetectionResult, EditQuery, EditType,
                      EvaluatedSample, ImageRecord, MetricVector, WeightConfig)

log = logging.getLogger(__name__)

# Criteria emitted per edit type.
TASK_CRITERIA = {
    EditType.ADDITION: frozenset({"of", "bc"}),
    EditType.REMOVAL: frozenset({"of", "bc"}),
    EditType.REPLACEMENT: frozenset({"of", "oc", "bc"}),
    EditType.RESIZING: frozenset({"of", "oc", "bc"}),
    EditType.ATTRIBUTE_CHANGE: frozenset({"of", "oc", "bc"}),
    EditType.BACKGROUND_CHANGE: frozenset({"bf", "oc"}),
    EditType.STYLE_CHANGE: frozenset({"bf", "bc"}),
}


class WorkflowError(RuntimeError):
    """Raised when a sample cannot be scored (bad inputs, backend failure)."""


@dataclass
class EvaluationContext:
    """Everything needed to score one edited sample."""

    query: EditQuery
    record: ImageRecord
    original: np.ndarray
    edited: np.ndarray
    backends: BackendSet
    weights: WeightConfig
    kept_ids: tuple[str, ...] = ()
    config: RunConfig = field(default_factory=RunConfig)

    def __post_init__(self):
        for name, raster in (("original", self.original), ("edited", self.edited)):
            h, w = np.asarray(raster).shape[:2]
            if (w, h) != (self.config.output_size, self.config.output_size):
                raise WorkflowError(
                    f"{name} raster is {w}x{h}, expected "
                    f"{self.config.output_size}x{self.config.output_size}"
                )


def _detect(ctx: EvaluationContext, raster: np.ndarray,
            class_name: str) -> Optional[DetectionResult]:
    try:
        return ctx.backends.segmenter.detect(raster, class_name)
    except Exception as exc:
        raise WorkflowError(f"segmenter failed for {class_name!r}: {exc}") from exc


def _detect_original(ctx: EvaluationContext, class_name: str) -> DetectionResult:
    det = _detect(ctx, ctx.original, class_name)
    if det is None:
        raise WorkflowError(
            f"object {class_name!r} undetected in the original image; "
            "the prepared corpus must guarantee original detectability"
        )
    return det


def _mask_out(raster: np.ndarray, mask: Optional[np.ndarray]) -> np.ndarray:
    if mask is None:
        return raster
    out = raster.copy()
    out[mask] = 0
    return out


def _square_region(raster: np.ndarray, bbox) -> np.ndarray:
    """Minimal square crop enclosing a bbox, zero-padded at borders."""
    x, y, w, h = bbox
    side = int(np.ceil(max(w, h)))
    cy, cx = y + h / 2.0, x + w / 2.0
    wy0 = int(round(cy - side / 2.0))
    wx0 = int(round(cx - side / 2.0))
    crop = np.zeros((side, side) + raster.shape[2:], dtype=raster.dtype)
    sy0, sy1 = max(wy0, 0), min(wy0 + side, raster.shape[0])
    sx0, sx1 = max(wx0, 0), min(wx0 + side, raster.shape[1])
    crop[sy0 - wy0:sy1 - wy0, sx0 - wx0:sx1 - wx0] = raster[sy0:sy1, sx0:sx1]
    return crop


def _mask_com(mask: np.ndarray) -> tuple[float, float]:
    ys, xs = np.nonzero(mask)
    return (float(xs.mean()), float(ys.mean()))


def _union_bbox(a, b):
    ax0, ay0 = a[0], a[1]
    ax1, ay1 = a[0] + a[2], a[1] + a[3]
    bx0, by0 = b[0], b[1]
    bx1, by1 = b[0] + b[2], b[1] + b[3]
    x0, y0 = min(ax0, bx0), min(ay0, by0)
    return (x0, y0, max(ax1, bx1) - x0, max(ay1, by1) - y0)


def _clip(ctx: EvaluationContext, text: str, raster: np.ndarray) -> float:
    emb = ctx.backends.embedder
    return clip_alignment(emb.embed_text(text), emb.embed_image(raster))


def _similarity_triplet(ctx: EvaluationContext, a: np.ndarray, b: np.ndarray
                        ) -> dict[str, float]:
    """lpips/dino/l2 similarities between two equal-sized rasters."""
    lpips = distance_to_similarity(ctx.backends.perceptual.distance(a, b))
    dino = clip_alignment(ctx.backends.patch_embedder.embed(a),
                          ctx.backends.patch_embedder.embed(b))
    return {"lpips": lpips, "dino": dino, "l2": l2_similarity(a, b)}


def _resize_pair(ctx: EvaluationContext, a: np.ndarray, b: np.ndarray):
    size = ctx.config.crop_compare_size
    return (cv2.resize(a, (size, size), interpolation=cv2.INTER_LINEAR),
            cv2.resize(b, (size, size), interpolation=cv2.INTER_LINEAR))


def _as_raster(mask: np.ndarray) -> np.ndarray:
    return (np.asarray(mask, dtype=np.uint8)) * 255


def _bc_values(ctx: EvaluationContext, mask: Optional[np.ndarray]
               ) -> dict[str, float]:
    """Background similarities with the same region masked from both images."""
    orig = _mask_out(ctx.original, mask)
    edit = _mask_out(ctx.edited, mask)
    return _similarity_triplet(ctx, orig, edit)


def _store(values: dict[str, float], prefix: str, triplet: dict[str, float],
           suffix: str = ""):
    for key, value in triplet.items():
        values[f"{prefix}.{key}{suffix}"] = value


def eval_addition(ctx: EvaluationContext) -> tuple[MetricVector, CriterionScores]:
    query = ctx.query
    anchor = ctx.record.object_by_id(query.target_object_id)
    new_class = query.params["new_class"]
    values: dict[str, float] = {}
    flags: dict[str, bool] = {}

    det = _detect(ctx, ctx.edited, new_class)
    if det is None:
        flags["target"] = True
        of = 0.0
        bc_vals = _bc_values(ctx, None)  # whole images
    else:
        crop = object_crop(ctx.edited, det.mask)
        values["of.clip_c"] = _clip(ctx, new_class, crop.raster)
        phrase = f"{new_class} {query.params['relation']} {anchor.class_name}"
        region = _square_region(ctx.edited, _union_bbox(anchor.bbox, det.bbox))
        values["of.clip_r"] = _clip(ctx, phrase, region)
        values["of.det"] = det.confidence
        of = combine_weighted(
            {"clip_c": values["of.clip_c"], "clip_r": values["of.clip_r"],
             "det": values["of.det"]},
            ctx.weights.group("addition_of"))
        bc_vals = _bc_values(ctx, det.mask)
    _store(values, "bc", bc_vals)
    bc = combine_weighted(bc_vals, ctx.weights.group("bc"))
    return (MetricVector(values=values, flags=flags),
            CriterionScores(of=of, bc=bc))


def eval_removal(ctx: EvaluationContext) -> tuple[MetricVector, CriterionScores]:
    obj = ctx.record.object_by_id(ctx.query.target_object_id)
    det_orig = _detect_original(ctx, obj.class_name)
    values: dict[str, float] = {}
    flags: dict[str, bool] = {}

    residual = _detect(ctx, ctx.edited, obj.class_name)
    if residual is None:
        flags["target"] = True
        of = 1.0
        mask = det_orig.mask
    else:
        crop = object_crop(ctx.edited, residual.mask)
        values["of.clip_c"] = _clip(ctx, obj.class_name, crop.raster)
        values["of.det"] = residual.confidence
        of = combine_weighted(
            {"clip_c": 1.0 - values["of.clip_c"], "det": 1.0 - values["of.det"]},
            ctx.weights.group("addition_of"))
        mask = det_orig.mask | residual.mask
    bc_vals = _bc_values(ctx, mask)
    _store(values, "bc", bc_vals)
    bc = combine_weighted(bc_vals, ctx.weights.group("bc"))
    return (MetricVector(values=values, flags=flags),
            CriterionScores(of=of, bc=bc))


def eval_replacement(ctx: EvaluationContext) -> tuple[MetricVector, CriterionScores]:
    obj = ctx.record.object_by_id(ctx.query.target_object_id)
    new_class = ctx.query.params["new_class"]
    det_orig = _detect_original(ctx, obj.class_name)
    values: dict[str, float] = {}
    flags: dict[str, bool] = {}

    det_new = _detect(ctx, ctx.edited, new_class)
    if det_new is None:
        flags["target"] = True
        of, oc = 0.0, 0.0
        mask = det_orig.mask
    else:
        crop = object_crop(ctx.edited, det_new.mask)
        values["of.clip_c"] = _clip(ctx, new_class, crop.raster)
        values["of.det"] = det_new.confidence
        of = combine_weighted(
            {"clip_c": values["of.clip_c"], "det": values["of.det"]},
            ctx.weights.group("addition_of"))
        oc = position_consistency(_mask_com(det_orig.mask), _mask_com(det_new.mask),
                                  ctx.record.height, ctx.record.width)
        values["oc.pos"] = oc
        mask = det_orig.mask | det_new.mask
    bc_vals = _bc_values(ctx, mask)
    _store(values, "bc", bc_vals)
    bc = combine_weighted(bc_vals, ctx.weights.group("bc"))
    return (MetricVector(values=values, flags=flags),
            CriterionScores(of=of, oc=oc, bc=bc))


def eval_resizing(ctx: EvaluationContext) -> tuple[MetricVector, CriterionScores]:
    obj = ctx.record.object_by_id(ctx.query.target_object_id)
    direction = ctx.query.params["direction"]
    det_orig = _detect_original(ctx, obj.class_name)
    values: dict[str, float] = {}
    flags: dict[str, bool] = {}

    det_new = _detect(ctx, ctx.edited, obj.class_name)
    if det_new is None:
        flags["target"] = True
        of, oc = 0.0, 0.0
        mask = det_orig.mask
    else:
        crop0 = object_crop(ctx.original, det_orig.mask)
        crope = object_crop(ctx.edited, det_new.mask)
        of = size_fidelity(crop0.area, crope.area, direction,
                           ctx.config.size_fidelity_r1, ctx.config.size_fidelity_r2)
        values["of.size"] = of
        a, b = _resize_pair(ctx, crop0.raster, crope.raster)
        oc_vals = _similarity_triplet(ctx, a, b)
        oc_vals["pos"] = position_consistency(
            crop0.center_of_mass, crope.center_of_mass,
            ctx.record.height, ctx.record.width)
        _store(values, "oc", {k: v for k, v in oc_vals.items() if k != "pos"})
        values["oc.pos"] = oc_vals["pos"]
        oc = combine_weighted(oc_vals, ctx.weights.group("oc"))
        mask = det_orig.mask | det_new.mask
    bc_vals = _bc_values(ctx, mask)
    _store(values, "bc", bc_vals)
    bc = combine_weighted(bc_vals, ctx.weights.group("bc"))
    return (MetricVector(values=values, flags=flags),
            CriterionScores(of=of, oc=oc, bc=bc))


def eval_attribute_change(ctx: EvaluationContext
                          ) -> tuple[MetricVector, CriterionScores]:
    obj = ctx.record.object_by_id(ctx.query.target_object_id)
    det_orig = _detect_original(ctx, obj.class_name)
    values: dict[str, float] = {}
    flags: dict[str, bool] = {}

    det_new = _detect(ctx, ctx.edited, obj.class_name)
    if det_new is None:
        flags["target"] = True
        of, oc = 0.0, 0.0
        mask = det_orig.mask
    else:
        crop0 = object_crop(ctx.original, det_orig.mask)
        crope = object_crop(ctx.edited, det_new.mask)
        if ctx.config.clip_text_mode == "bare_class":
            text = obj.class_name
        else:
            text = f"{ctx.query.params['new']} {obj.class_name}"
        of = _clip(ctx, text, crope.raster)
        values["of.clip_a"] = of

        a, b = _resize_pair(ctx, crop0.raster, crope.raster)
        factor = ctx.config.degrade_factor
        deg_vals = _similarity_triplet(ctx, degrade(a, factor), degrade(b, factor))
        edge_vals = _similarity_triplet(
            ctx,
            _as_raster(edge_map(a, ctx.config.canny_low, ctx.config.canny_high)),
            _as_raster(edge_map(b, ctx.config.canny_low, ctx.config.canny_high)))
        _store(values, "oc", deg_vals, ".deg")
        _store(values, "oc", edge_vals, ".edge")
        sub = ctx.weights.group("attr_oc_sub")
        oc_deg = combine_weighted(deg_vals, sub)
        oc_edge = combine_weighted(edge_vals, sub)
        pos = position_consistency(crop0.center_of_mass, crope.center_of_mass,
                                   ctx.record.height, ctx.record.width)
        size = size_consistency(crop0.area, crope.area,
                                ctx.record.height, ctx.record.width)
        values["oc.pos"] = pos
        values["oc.size"] = size
        oc = combine_weighted({"deg": oc_deg, "edge": oc_edge,
                               "pos": pos, "size": size},
                              ctx.weights.group("attr_oc"))
        mask = det_orig.mask | det_new.mask
    bc_vals = _bc_values(ctx, mask)
    _store(values, "bc", bc_vals)
    bc = combine_weighted(bc_vals, ctx.weights.group("bc"))
    return (MetricVector(values=values, flags=flags),
            CriterionScores(of=of, oc=oc, bc=bc))


def eval_background_change(ctx: EvaluationContext
                           ) -> tuple[MetricVector, CriterionScores]:
    if not ctx.kept_ids:
        raise WorkflowError("background change needs at least one foreground "
                            "object (query generation guarantees this)")
    values: dict[str, float] = {}
    flags: dict[str, bool] = {}
    oc_weights = ctx.weights.group("oc")
    metric_keys = ("lpips", "dino", "l2", "pos", "size")
    sums = {k: 0.0 for k in metric_keys}
    oc_sum = 0.0
    mask = None

    for oid in sorted(ctx.kept_ids):
        obj = ctx.record.object_by_id(oid)
        det_orig = _detect_original(ctx, obj.class_name)
        det_edit = _detect(ctx, ctx.edited, obj.class_name)
        if det_edit is None:
            flags[f"fg:{oid}"] = True
            continue  # contributes 0 and no mask
        crop0 = object_crop(ctx.original, det_orig.mask)
        crope = object_crop(ctx.edited, det_edit.mask)
        a, b = _resize_pair(ctx, crop0.raster, crope.raster)
        vals = _similarity_triplet(ctx, a, b)
        vals["pos"] = position_consistency(
            crop0.center_of_mass, crope.center_of_mass,
            ctx.record.height, ctx.record.width)
        vals["size"] = size_consistency(crop0.area, crope.area,
                                        ctx.record.height, ctx.record.width)
        for k in metric_keys:
            sums[k] += vals[k]
        oc_sum += combine_weighted(vals, oc_weights)
        region = det_orig.mask | det_edit.mask
        mask = region if mask is None else (mask | region)

    n = len(ctx.kept_ids)
    for k in metric_keys:
        values[f"oc.{k}"] = sums[k] / n
    oc = oc_sum / n

    background = ctx.query.params["background"]
    bf = _clip(ctx, background, _mask_out(ctx.edited, mask))
    values["bf.clip"] = bf
    return (MetricVector(values=values, flags=flags),
            CriterionScores(bf=bf, oc=oc))


def eval_style_change(ctx: EvaluationContext
                      ) -> tuple[MetricVector, CriterionScores]:
    values: dict[str, float] = {}
    bf = _clip(ctx, ctx.query.params["style"], ctx.edited)
    values["bf.clip"] = bf

    factor = ctx.config.degrade_factor
    deg_vals = _similarity_triplet(ctx, degrade(ctx.original, factor),
                                   degrade(ctx.edited, factor))
    low, high = ctx.config.canny_low, ctx.config.canny_high
    edge_vals = _similarity_triplet(ctx,
                                    _as_raster(edge_map(ctx.original, low, high)),
                                    _as_raster(edge_map(ctx.edited, low, high)))
    _store(values, "bc", deg_vals, ".deg")
    _store(values, "bc", edge_vals, ".edge")
    sub = ctx.weights.group("style_bc_sub")
    bc = combine_weighted({"deg": combine_weighted(deg_vals, sub),
                           "edge": combine_weighted(edge_vals, sub)},
                          ctx.weights.group("style_bc"))
    return (MetricVector(values=values, flags={}),
            CriterionScores(bf=bf, bc=bc))


_DISPATCH = {
    EditType.ADDITION: eval_addition,
    EditType.REMOVAL: eval_removal,
    EditType.REPLACEMENT: eval_replacement,
    EditType.RESIZING: eval_resizing,
    EditType.ATTRIBUTE_CHANGE: eval_attribute_change,
    EditType.BACKGROUND_CHANGE: eval_background_change,
    EditType.STYLE_CHANGE: eval_style_change,
}


def evaluate_sample(ctx: EvaluationContext, model_id: str = "model"
                    ) -> EvaluatedSample:
    """Dispatch one sample to its task workflow; failures flag the sample."""
    query = ctx.query
    target_class = None
    if query.target_object_id is not None:
        target_class = ctx.record.object_by_id(query.target_object_id).class_name
    try:
        vector, scores = _DISPATCH[query.edit_type](ctx)
        error = None
    except WorkflowError as exc:
        log.warning("sample %s/%s failed: %s", model_id, query.query_id, exc)
        vector, scores, error = MetricVector(), CriterionScores(), str(exc)
    return EvaluatedSample(model_id=model_id, query_id=query.query_id,
                           edit_type=query.edit_type, target_class=target_class,
                           vector=vector, scores=scores, error=error)


# ---------------------------------------------------------------------------
# Component extraction for weight fitting
# ---------------------------------------------------------------------------

# Which weight group a criterion's components are drawn from per edit type.
FIT_GROUPS = {
    "of": "of",
    "oc": "oc",
    "bc": "bc",
    "total": "total",
    "addition_of": "addition_of",
    "attr_oc": "attr_oc",
    "style_bc": "style_bc",
}


def criterion_components(sample: EvaluatedSample, criterion: str, group: str,
                         weights: WeightConfig) -> Optional[dict[str, float]]:
    """Per-sample component values entering the given weight group's combination.

    Detection-failure samples map to constant vectors (all zeros, or all ones
    for removal fidelity) so every weighting reproduces the convention
    exactly. Returns None when the sample does not inform the group.
    """
    etype = sample.edit_type
    v = sample.vector.values
    failed = sample.vector.flags.get("target", False)
    if sample.error is not None:
        return None

    if group == "addition_of":
        if etype is not EditType.ADDITION or criterion != "of":
            return None
        if failed:
            return {"clip_c": 0.0, "clip_r": 0.0, "det": 0.0}
        return {"clip_c": v["of.clip_c"], "clip_r": v["of.clip_r"],
                "det": v["of.det"]}

    if group == "of":
        if criterion != "of":
            return None
        if etype is EditType.REMOVAL:
            if failed:
                return {"clip": 1.0, "det": 1.0}
            return {"clip": 1.0 - v["of.clip_c"], "det": 1.0 - v["of.det"]}
        if etype is EditType.REPLACEMENT:
            if failed:
                return {"clip": 0.0, "det": 0.0}
            return {"clip": v["of.clip_c"], "det": v["of.det"]}
        if etype is EditType.RESIZING:
            return {"size": 0.0 if failed else v["of.size"]}
        if etype is EditType.ATTRIBUTE_CHANGE:
            return {"clip": 0.0 if failed else v["of.clip_a"]}
        return None

    if group == "oc":
        if criterion != "oc":
            return None
        if etype is EditType.REPLACEMENT:
            return {"pos": 0.0 if failed else v["oc.pos"]}
        if etype is EditType.RESIZING:
            if failed:
                return {"lpips": 0.0, "dino": 0.0, "l2": 0.0, "pos": 0.0}
            return {k: v[f"oc.{k}"] for k in ("lpips", "dino", "l2", "pos")}
        if etype is EditType.BACKGROUND_CHANGE:
            return {k: v[f"oc.{k}"] for k in ("lpips", "dino", "l2", "pos", "size")}
        return None

    if group == "attr_oc":
        if etype is not EditType.ATTRIBUTE_CHANGE or criterion != "oc":
            return None
        if failed:
            return {"deg": 0.0, "edge": 0.0, "pos": 0.0, "size": 0.0}
        sub = weights.group("attr_oc_sub")
        deg = combine_weighted({k: v[f"oc.{k}.deg"] for k in sub}, sub)
        edge = combine_weighted({k: v[f"oc.{k}.edge"] for k in sub}, sub)
        return {"deg": deg, "edge": edge, "pos": v["oc.pos"], "size": v["oc.size"]}

    if group == "bc":
        if criterion != "bc" or etype is EditType.STYLE_CHANGE:
            return None
        keys = ("lpips", "dino", "l2")
        if all(f"bc.{k}" in v for k in keys):
            return {k: v[f"bc.{k}"] for k in keys}
        return None

    if group == "style_bc":
        if etype is not EditType.STYLE_CHANGE or criterion != "bc":
            return None
        sub = weights.group("style_bc_sub")
        deg = combine_weighted({k: v[f"bc.{k}.deg"] for k in sub}, sub)
        edge = combine_weighted({k: v[f"bc.{k}.edge"] for k in sub}, sub)
        return {"deg": deg, "edge": edge}

    if group == "total":
        present = sample.scores.present()
        if not present:
            return None
        return present  # iq joins at fitting time as the per-model constant

    return None
