"""Synthetic demo corpus: geometric scenes with oracle masks and scripted edits.

Twenty 512x512 scenes (tables, laptops, pizzas, cups, suitcases as simple
shapes) with full scene-graph annotations, side-car oracle masks, three mock
"editing models" whose outputs have known metric outcomes, and fabricated
pairwise votes. Everything is a pure function of the seed.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from pathlib import Path

import cv2
import numpy as np

from .backends import ScriptedVqa, register_oracle_raster, write_oracle_mask
from .config import RunConfig
from .filtering import filter_image, trim_and_resize
from .queries import addition_region, balance_pool, build_stats, generate_for_image
from .rasters import write_raster
from .records import (EditQuery, EditType, ImageRecord, PreferenceRecord,
                      SceneObject, image_record_to_json, save_records)
from .workflows import TASK_CRITERIA

BG_COLOR = (200, 205, 210)
EDIT_BG_COLOR = (90, 140, 90)
FLAT_COLOR = (120, 120, 120)

# "gray" and "green" share the same 8-bit luminance, so an exact recolor
# between them leaves grayscale degradations and edge maps untouched.
COLOR_WORDS = {
    "gray": (83, 83, 83),
    "green": (0, 128, 69),
    "black": (40, 40, 40),
    "white": (230, 230, 230),
    "blue": (70, 90, 200),
    "red": (200, 60, 60),
}

CLASS_COLORS = {
    "dining table": (120, 80, 40),
    "laptop": (40, 40, 40),
    "pizza": (210, 160, 60),
    "cup": (70, 90, 200),
    "suitcase": (83, 83, 83),
    "sports ball": (240, 120, 40),
    "book": (150, 40, 40),
    "vase": (90, 60, 140),
}

CIRCLE_CLASSES = {"pizza", "sports ball"}

MODELS = ("model_a", "model_b", "model_c")
MODEL_RANK = {"model_a": 2, "model_b": 1, "model_c": 0}


@dataclass(frozen=True)
class Shape:
    object_id: str
    class_name: str
    kind: str  # "rect" or "circle"
    geom: tuple  # rect: (x, y, w, h); circle: (cx, cy, r)
    color: tuple[int, int, int]
    attributes: dict
    relations: tuple = ()
    detectable: bool = True


def _shape_mask(shape: Shape, size: int = 512) -> np.ndarray:
    mask = np.zeros((size, size), dtype=bool)
    if shape.kind == "rect":
        x, y, w, h = shape.geom
        mask[y:y + h, x:x + w] = True
    else:
        cx, cy, r = shape.geom
        yy, xx = np.mgrid[0:size, 0:size]
        mask[(xx - cx) ** 2 + (yy - cy) ** 2 <= r * r] = True
    return mask


def _render(shapes: list[Shape], bg=BG_COLOR, size: int = 512) -> np.ndarray:
    raster = np.empty((size, size, 3), dtype=np.uint8)
    raster[:, :] = bg
    for shape in shapes:
        raster[_shape_mask(shape, size)] = shape.color
    return raster


def _mask_bbox(mask: np.ndarray) -> tuple[float, float, float, float]:
    ys, xs = np.nonzero(mask)
    return (float(xs.min()), float(ys.min()),
            float(xs.max() - xs.min() + 1), float(ys.max() - ys.min() + 1))


def _record_for(image_id: str, shapes: list[Shape]) -> ImageRecord:
    objects = []
    for shape in shapes:
        objects.append(SceneObject(
            object_id=shape.object_id, class_name=shape.class_name,
            bbox=_mask_bbox(_shape_mask(shape)), attributes=shape.attributes,
            relations=shape.relations))
    return ImageRecord(image_id=image_id, width=512, height=512,
                       objects=tuple(objects))


def _table() -> Shape:
    return Shape("table", "dining table", "rect", (96, 288, 320, 160),
                 CLASS_COLORS["dining table"], {})


def _build_scenes() -> dict[str, list[Shape]]:
    scenes: dict[str, list[Shape]] = {}
    laptop_colors = ["black", "white"] * 3
    for i in range(6):
        word = laptop_colors[i]
        scenes[f"img{i:02d}"] = [
            _table(),
            Shape("item", "laptop", "rect", (224, 216, 64, 72),
                  COLOR_WORDS[word], {"color": word}, (("on", "table"),)),
        ]
    for i in list(range(6, 11)) + [19]:
        scenes[f"img{i:02d}"] = [
            _table(),
            Shape("item", "pizza", "circle", (256, 252, 36),
                  CLASS_COLORS["pizza"], {}, (("on", "table"),)),
        ]
    for i, word in ((11, "blue"), (12, "red")):
        scenes[f"img{i:02d}"] = [
            _table(),
            Shape("item", "cup", "rect", (240, 232, 48, 56),
                  COLOR_WORDS[word], {"color": word}, (("on", "table"),)),
        ]
    suitcase_colors = ["gray", "green", "gray", "green"]
    for i in range(13, 17):
        word = suitcase_colors[i - 13]
        scenes[f"img{i:02d}"] = [
            Shape("case", "suitcase", "rect", (144, 120, 224, 224),
                  COLOR_WORDS[word], {"color": word}),
        ]
    scenes["img17"] = [
        _table(),
        Shape("cup1", "cup", "rect", (150, 230, 48, 56),
              COLOR_WORDS["blue"], {"color": "blue"}, (("on", "table"),)),
        Shape("cup2", "cup", "rect", (320, 230, 48, 56),
              COLOR_WORDS["red"], {"color": "red"}, (("on", "table"),)),
    ]
    scenes["img18"] = [
        _table(),
        Shape("ball", "sports ball", "circle", (60, 100, 7),
              CLASS_COLORS["sports ball"], {}),
        Shape("book", "book", "rect", (0, 180, 60, 80),
              CLASS_COLORS["book"], {}),
        Shape("vase", "vase", "rect", (430, 180, 40, 60),
              CLASS_COLORS["vase"], {}, detectable=False),
    ]
    return scenes


def _register_scene(mask_dir, key: str, raster: np.ndarray, shapes: list[Shape],
                    confidences: dict[str, float] | None = None):
    register_oracle_raster(mask_dir, key, raster)
    for shape in shapes:
        if not shape.detectable:
            continue
        conf = (confidences or {}).get(shape.object_id, 1.0)
        write_oracle_mask(mask_dir, key, shape.class_name,
                          _shape_mask(shape), conf)


def _shape_for_class(class_name: str, center: tuple[int, int],
                     size: tuple[int, int], object_id: str) -> Shape:
    cx, cy = center
    color = CLASS_COLORS.get(class_name, (60, 120, 180))
    if class_name in CIRCLE_CLASSES:
        r = min(size) // 2
        return Shape(object_id, class_name, "circle", (cx, cy, r), color, {})
    w, h = size
    return Shape(object_id, class_name, "rect",
                 (cx - w // 2, cy - h // 2, w, h), color, {})


def _scaled_shape(shape: Shape, factor: float) -> Shape:
    mask = _shape_mask(shape)
    ys, xs = np.nonzero(mask)
    cx, cy = float(xs.mean()), float(ys.mean())
    if shape.kind == "circle":
        _, _, r = shape.geom
        return replace(shape, geom=(int(round(cx)), int(round(cy)),
                                    max(1, int(round(r * factor)))))
    x, y, w, h = shape.geom
    nw, nh = max(1, int(round(w * factor))), max(1, int(round(h * factor)))
    nx = int(round(cx - nw / 2.0))
    ny = int(round(cy - nh / 2.0))
    nx = min(max(nx, 0), 512 - nw)
    ny = min(max(ny, 0), 512 - nh)
    return replace(shape, geom=(nx, ny, nw, nh))


def _edit_scene(query: EditQuery, record: ImageRecord, shapes: list[Shape],
                config: RunConfig) -> tuple[list[Shape], tuple, dict[str, float]]:
    """model_a's scripted edit: returns (shapes, background, confidences)."""
    by_id = {s.object_id: s for s in shapes}
    confidences: dict[str, float] = {}
    bg = BG_COLOR
    etype = query.edit_type

    if etype is EditType.REMOVAL:
        shapes = [s for s in shapes if s.object_id != query.target_object_id]
    elif etype is EditType.ADDITION:
        anchor = by_id[query.target_object_id]
        region = addition_region(record, record.object_by_id(anchor.object_id),
                                 query.params["relation"], config)
        rx, ry, rw, _ = region
        center = (int(rx + rw / 2), int(ry) + 28)
        new = _shape_for_class(query.params["new_class"], center, (48, 40), "added")
        shapes = shapes + [new]
        confidences["added"] = 0.9
    elif etype is EditType.REPLACEMENT:
        old = by_id[query.target_object_id]
        mask = _shape_mask(old)
        ys, xs = np.nonzero(mask)
        center = (int(round(xs.mean())), int(round(ys.mean())))
        new = _shape_for_class(query.params["new_class"], center, (72, 72),
                               "replaced")
        shapes = [s for s in shapes if s.object_id != old.object_id] + [new]
        confidences["replaced"] = 0.9
    elif etype is EditType.RESIZING:
        old = by_id[query.target_object_id]
        if query.params["direction"] == "larger":
            max_dim = max(old.geom[2:4]) if old.kind == "rect" else old.geom[2] * 2
            factor = 2.0 if max_dim * 2 <= 500 else 500.0 / max_dim
        else:
            factor = 0.5
        shapes = [(_scaled_shape(s, factor) if s.object_id == old.object_id else s)
                  for s in shapes]
    elif etype is EditType.ATTRIBUTE_CHANGE:
        old = by_id[query.target_object_id]
        new_color = COLOR_WORDS[query.params["new"]]
        shapes = [(replace(s, color=new_color) if s.object_id == old.object_id
                   else s) for s in shapes]
    elif etype is EditType.BACKGROUND_CHANGE:
        bg = EDIT_BG_COLOR
    elif etype is EditType.STYLE_CHANGE:
        pass  # handled as a raster transform after rendering
    return shapes, bg, confidences


def _fabricate_votes(queries: list[EditQuery], rng: np.random.Generator
                     ) -> list[PreferenceRecord]:
    """Pairwise votes biased toward the higher-ranked mock model."""
    pairs = [("model_a", "model_b"), ("model_a", "model_c"),
             ("model_b", "model_c")]
    records = []
    for query in queries:
        criteria = sorted(TASK_CRITERIA[query.edit_type]) + ["total"]
        for criterion in criteria:
            for ma, mb in pairs:
                better = "A" if MODEL_RANK[ma] > MODEL_RANK[mb] else "B"
                worse = "B" if better == "A" else "A"
                votes = tuple(better if rng.random() < 0.8 else worse
                              for _ in range(3))
                records.append(PreferenceRecord(
                    question_id=f"q:{criterion}:{query.query_id}:{ma}:{mb}",
                    criterion=criterion,
                    query_id=query.query_id,
                    sample_a=(ma, f"{ma}/{query.query_id}.png"),
                    sample_b=(mb, f"{mb}/{query.query_id}.png"),
                    votes=votes))
    return records


def build_mock_corpus(outdir, seed: int = 7, per_type: int = 4) -> dict:
    """Write the full demo corpus tree and return its paths.

    Layout: corpus/ (records + rasters), masks/ (oracle side-cars),
    edited/<model>/ (scripted outputs per final query), votes.jsonl,
    balance.json, backends.json.
    """
    outdir = Path(outdir)
    config = RunConfig()
    corpus_dir = outdir / "corpus"
    mask_dir = outdir / "masks"
    edited_dir = outdir / "edited"
    corpus_dir.mkdir(parents=True, exist_ok=True)

    scenes = _build_scenes()
    records: list[ImageRecord] = []
    rasters: dict[str, np.ndarray] = {}
    for image_id in sorted(scenes):
        shapes = scenes[image_id]
        record = _record_for(image_id, shapes)
        raster = _render(shapes)
        records.append(record)
        rasters[image_id] = raster
        write_raster(corpus_dir / f"{image_id}.png", raster)
        (corpus_dir / f"{image_id}.json").write_text(
            json.dumps(image_record_to_json(record), sort_keys=True, indent=1),
            encoding="utf-8")
        _register_scene(mask_dir, image_id, raster, shapes)

    # reproduce the pipeline to learn the final balanced query set
    from .backends import OracleSegmenter

    segmenter = OracleSegmenter(mask_dir)
    vqa = ScriptedVqa()
    stats = build_stats(records)
    pool: list[EditQuery] = []
    kept_by_image = {}
    for record in records:
        report = filter_image(record, segmenter, vqa, rasters[record.image_id],
                              config)
        kept_by_image[record.image_id] = report.kept
        if not report.kept:
            continue
        prepared, _, praster = trim_and_resize(record, report.kept,
                                               rasters[record.image_id])
        pool.extend(generate_for_image(prepared, report.kept, stats, praster,
                                       _corpus_embedder(), seed, config))
    targets = {t.value: per_type for t in EditType}
    rng = np.random.default_rng(seed)
    queries, _ = balance_pool(pool, records, rng, per_type=targets)

    # scripted edited outputs per model
    by_image = {r.image_id: r for r in records}
    for query in queries:
        record = by_image[query.image_id]
        shapes = scenes[query.image_id]
        edited_shapes, bg, confidences = _edit_scene(query, record, shapes, config)
        raster_a = _render(edited_shapes, bg)
        if query.edit_type is EditType.STYLE_CHANGE:
            gray = cv2.cvtColor(raster_a, cv2.COLOR_RGB2GRAY)
            raster_a = np.repeat(gray[:, :, None], 3, axis=2)
        write_raster(edited_dir / "model_a" / f"{query.query_id}.png", raster_a)
        if query.edit_type is not EditType.STYLE_CHANGE:
            _register_scene(mask_dir, f"model_a/{query.query_id}", raster_a,
                            edited_shapes, confidences)
        write_raster(edited_dir / "model_b" / f"{query.query_id}.png",
                     rasters[query.image_id])
        flat = np.empty((512, 512, 3), dtype=np.uint8)
        flat[:, :] = FLAT_COLOR
        write_raster(edited_dir / "model_c" / f"{query.query_id}.png", flat)

    votes = _fabricate_votes(queries, np.random.default_rng(seed + 1))
    save_records(votes, outdir / "votes.jsonl")

    (outdir / "balance.json").write_text(
        json.dumps({"per_type": targets}, sort_keys=True, indent=1),
        encoding="utf-8")
    registry = {
        "embedder": {"adapter": "hash_embedder"},
        "perceptual": {"adapter": "pixel_perceptual"},
        "patch_embedder": {"adapter": "hash_embedder"},
        "segmenter": {"adapter": "oracle_segmenter",
                      "params": {"mask_dir": str(mask_dir)}},
        "feature_extractor": {"adapter": "patch_stats", "params": {"grid": 2}},
        "vqa": {"adapter": "scripted_vqa"},
    }
    (outdir / "backends.json").write_text(
        json.dumps(registry, sort_keys=True, indent=1), encoding="utf-8")

    return {
        "corpus": corpus_dir,
        "masks": mask_dir,
        "edited": edited_dir,
        "votes": outdir / "votes.jsonl",
        "balance": outdir / "balance.json",
        "backends": outdir / "backends.json",
        "models": MODELS,
        "n_queries": len(queries),
    }


def _corpus_embedder():
    from .backends import HashEmbedder

    return HashEmbedder()
