"""Shared domain records and their line-delimited JSON serialization.

All record types are immutable after construction and validate their
invariants in ``__post_init__``; serialization round-trips are exact
(floats are written at full precision).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterable, Optional

import numpy as np

RELATIONS = (
    "under",
    "above",
    "in",
    "on",
    "left",
    "right",
    "next to",
    "front",
    "behind",
)

ATTRIBUTE_CATEGORIES = ("color", "state", "material", "action")

CRITERIA = ("of", "bf", "oc", "bc")
VOTE_CRITERIA = ("of", "bf", "oc", "bc", "total")


class RecordError(ValueError):
    """Raised when a record violates one of its invariants."""


class EditType(str, Enum):
    ADDITION = "addition"
    REMOVAL = "removal"
    REPLACEMENT = "replacement"
    ATTRIBUTE_CHANGE = "attribute_change"
    RESIZING = "resizing"
    BACKGROUND_CHANGE = "background_change"
    STYLE_CHANGE = "style_change"


OBJECT_CENTRIC_TYPES = (
    EditType.ADDITION,
    EditType.REMOVAL,
    EditType.REPLACEMENT,
    EditType.ATTRIBUTE_CHANGE,
    EditType.RESIZING,
)

# Required ``params`` keys per edit type; presence is exact (no extras).
REQUIRED_PARAMS = {
    EditType.ADDITION: ("new_class", "relation"),
    EditType.REMOVAL: (),
    EditType.REPLACEMENT: ("new_class",),
    EditType.ATTRIBUTE_CHANGE: ("category", "old", "new"),
    EditType.RESIZING: ("direction",),
    EditType.BACKGROUND_CHANGE: ("background",),
    EditType.STYLE_CHANGE: ("style",),
}


def _check_bbox(bbox, width, height, owner: str) -> tuple[float, float, float, float]:
    if len(bbox) != 4:
        raise RecordError(f"{owner}: bbox must be (x, y, w, h), got {bbox!r}")
    x, y, w, h = (float(v) for v in bbox)
    if w <= 0 or h <= 0:
        raise RecordError(f"{owner}: bbox has non-positive size {bbox!r}")
    if x < 0 or y < 0 or x + w > width + 1e-9 or y + h > height + 1e-9:
        raise RecordError(
            f"{owner}: bbox {bbox!r} outside image bounds {width}x{height}"
        )
    return (x, y, w, h)


@dataclass(frozen=True)
class SceneObject:
    """One annotated object: class, bbox, categorized attributes, relations."""

    object_id: str
    class_name: str
    bbox: tuple[float, float, float, float]
    attributes: dict[str, str] = field(default_factory=dict)
    relations: tuple[tuple[str, str], ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "bbox", tuple(float(v) for v in self.bbox))
        object.__setattr__(self, "attributes", dict(self.attributes))
        object.__setattr__(
            self, "relations", tuple((str(r), str(o)) for r, o in self.relations)
        )
        for cat in self.attributes:
            if cat not in ATTRIBUTE_CATEGORIES:
                raise RecordError(
                    f"object {self.object_id}: unknown attribute category {cat!r}"
                )
        for rel, _ in self.relations:
            if rel not in RELATIONS:
                raise RecordError(
                    f"object {self.object_id}: unknown relation {rel!r}"
                )

    @property
    def area(self) -> float:
        return self.bbox[2] * self.bbox[3]


@dataclass(frozen=True)
class ImageRecord:
    """One scene-graph annotated image."""

    image_id: str
    width: int
    height: int
    objects: tuple[SceneObject, ...] = ()
    source_path: Optional[str] = None

    def __post_init__(self):
        object.__setattr__(self, "objects", tuple(self.objects))
        if self.width <= 0 or self.height <= 0:
            raise RecordError(f"image {self.image_id}: non-positive dimensions")
        seen = set()
        for obj in self.objects:
            if obj.object_id in seen:
                raise RecordError(
                    f"image {self.image_id}: duplicate object id {obj.object_id!r}"
                )
            seen.add(obj.object_id)
            _check_bbox(obj.bbox, self.width, self.height,
                        f"image {self.image_id}, object {obj.object_id}")

    def object_by_id(self, object_id: str) -> SceneObject:
        for obj in self.objects:
            if obj.object_id == object_id:
                return obj
        raise KeyError(object_id)

    def class_names(self) -> set[str]:
        return {obj.class_name for obj in self.objects}


@dataclass(frozen=True)
class EditQuery:
    """One edit task for a target image, with optional caption forms."""

    query_id: str
    image_id: str
    edit_type: EditType
    target_object_id: Optional[str] = None
    params: dict[str, str] = field(default_factory=dict)
    caption_original: Optional[str] = None
    caption_edited: Optional[str] = None
    instruction: Optional[str] = None
    instruction_only: bool = False

    def __post_init__(self):
        object.__setattr__(self, "edit_type", EditType(self.edit_type))
        object.__setattr__(self, "params", dict(self.params))
        required = set(REQUIRED_PARAMS[self.edit_type])
        got = set(self.params)
        if got != required:
            raise RecordError(
                f"query {self.query_id}: params {sorted(got)} != required "
                f"{sorted(required)} for {self.edit_type.value}"
            )
        if self.edit_type in OBJECT_CENTRIC_TYPES and not self.target_object_id:
            raise RecordError(
                f"query {self.query_id}: {self.edit_type.value} needs a target object"
            )
        if (self.caption_original is None) != (self.caption_edited is None):
            raise RecordError(
                f"query {self.query_id}: description captions must come as a pair"
            )
        if self.edit_type is EditType.REMOVAL and self.caption_original is not None:
            raise RecordError(
                f"query {self.query_id}: removal queries carry no description pair"
            )

    @property
    def has_description(self) -> bool:
        return self.caption_original is not None


@dataclass(frozen=True, eq=False)
class DetectionResult:
    """A single instance-segmentation detection (runtime only, not serialized)."""

    class_name: str
    mask: np.ndarray
    bbox: tuple[float, float, float, float]
    confidence: float

    def __post_init__(self):
        mask = np.asarray(self.mask, dtype=bool)
        object.__setattr__(self, "mask", mask)
        if not mask.any():
            raise RecordError("detection mask is empty")
        if not 0.0 <= self.confidence <= 1.0:
            raise RecordError(f"detection confidence {self.confidence} not in [0,1]")
        object.__setattr__(self, "bbox", tuple(float(v) for v in self.bbox))

    @property
    def area(self) -> int:
        return int(self.mask.sum())


def _check_unit_interval(name: str, value: float):
    if not (isinstance(value, (int, float)) and math.isfinite(value)):
        raise RecordError(f"{name}={value!r} is not a finite real")
    if value < 0.0 or value > 1.0:
        raise RecordError(f"{name}={value!r} outside [0,1]")


@dataclass(frozen=True)
class MetricVector:
    """Raw per-sample metric values, each normalized to [0,1].

    ``flags`` marks detection failures per role (True means the detection
    failed for that role).
    """

    values: dict[str, float] = field(default_factory=dict)
    flags: dict[str, bool] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "values", dict(self.values))
        object.__setattr__(self, "flags", {k: bool(v) for k, v in self.flags.items()})
        self.validate()

    def validate(self):
        for key, value in self.values.items():
            _check_unit_interval(f"metric {key}", value)


@dataclass(frozen=True)
class CriterionScores:
    """Per-sample criterion scores; absent criteria are None."""

    of: Optional[float] = None
    bf: Optional[float] = None
    oc: Optional[float] = None
    bc: Optional[float] = None
    iq: Optional[float] = None
    total: Optional[float] = None

    def __post_init__(self):
        for name in ("of", "bf", "oc", "bc", "iq", "total"):
            value = getattr(self, name)
            if value is not None:
                _check_unit_interval(f"criterion {name}", float(value))
                object.__setattr__(self, name, float(value))

    def present(self) -> dict[str, float]:
        return {
            name: getattr(self, name)
            for name in ("of", "bf", "oc", "bc")
            if getattr(self, name) is not None
        }


WEIGHT_GROUP_KEYS = {
    "of": ("clip", "det", "size"),
    "oc": ("lpips", "dino", "l2", "pos", "size"),
    "bc": ("lpips", "dino", "l2"),
    "total": ("iq", "of", "bf", "oc", "bc"),
    "addition_of": ("clip_c", "clip_r", "det"),
    "attr_oc": ("deg", "edge", "pos", "size"),
    "attr_oc_sub": ("lpips", "dino", "l2"),
    "style_bc": ("deg", "edge"),
    "style_bc_sub": ("lpips", "dino", "l2"),
}

WEIGHT_SUM_TOL = 1e-9


@dataclass(frozen=True)
class WeightConfig:
    """Named convex-combination weight groups for all score aggregations."""

    groups: dict[str, dict[str, float]]

    def __post_init__(self):
        groups = {name: dict(g) for name, g in self.groups.items()}
        object.__setattr__(self, "groups", groups)
        for name, keys in WEIGHT_GROUP_KEYS.items():
            if name not in groups:
                raise RecordError(f"weight group {name!r} missing")
            group = groups[name]
            if set(group) != set(keys):
                raise RecordError(
                    f"weight group {name!r} keys {sorted(group)} != {sorted(keys)}"
                )
            total = 0.0
            for key, w in group.items():
                w = float(w)
                if w < 0.0:
                    raise RecordError(f"weight {name}.{key} = {w} is negative")
                group[key] = w
                total += w
            if abs(total - 1.0) > WEIGHT_SUM_TOL:
                raise RecordError(
                    f"weight group {name!r} sums to {total!r}, not 1"
                )

    def group(self, name: str) -> dict[str, float]:
        return dict(self.groups[name])

    @classmethod
    def uniform(cls) -> "WeightConfig":
        groups = {}
        for name, keys in WEIGHT_GROUP_KEYS.items():
            n = len(keys)
            weights = [1.0 / n] * n
            # make the group sum exactly 1.0 in floating point
            weights[-1] = 1.0 - sum(weights[:-1])
            groups[name] = dict(zip(keys, weights))
        return cls(groups)

    def replace_group(self, name: str, weights: dict[str, float]) -> "WeightConfig":
        groups = {k: dict(v) for k, v in self.groups.items()}
        groups[name] = dict(weights)
        return WeightConfig(groups)


@dataclass(frozen=True)
class PreferenceRecord:
    """One pairwise human-vote question with exactly three annotator choices."""

    question_id: str
    criterion: str
    query_id: str
    sample_a: tuple[str, str]
    sample_b: tuple[str, str]
    votes: tuple[str, str, str]

    def __post_init__(self):
        object.__setattr__(self, "sample_a", tuple(self.sample_a))
        object.__setattr__(self, "sample_b", tuple(self.sample_b))
        object.__setattr__(self, "votes", tuple(self.votes))
        if self.criterion not in VOTE_CRITERIA:
            raise RecordError(
                f"question {self.question_id}: unknown criterion {self.criterion!r}"
            )
        if len(self.votes) != 3:
            raise RecordError(
                f"question {self.question_id}: expected exactly 3 votes"
            )
        for v in self.votes:
            if v not in ("A", "B"):
                raise RecordError(f"question {self.question_id}: bad vote {v!r}")
        if self.sample_a == self.sample_b:
            raise RecordError(
                f"question {self.question_id}: sample_a equals sample_b"
            )

    @property
    def model_a(self) -> str:
        return self.sample_a[0]

    @property
    def model_b(self) -> str:
        return self.sample_b[0]


@dataclass(frozen=True)
class FilterReport:
    """Outcome of editable-object filtering for one image."""

    image_id: str
    kept: tuple[str, ...]
    rejections: tuple[tuple[str, str], ...]
    metadata: dict[str, str] = field(default_factory=dict)

    REASONS = ("too_small", "cropped", "occluded", "undetected_iou", "duplicate_class")

    def __post_init__(self):
        object.__setattr__(self, "kept", tuple(self.kept))
        object.__setattr__(
            self, "rejections", tuple((str(o), str(r)) for o, r in self.rejections)
        )
        object.__setattr__(self, "metadata", dict(self.metadata))
        for _, reason in self.rejections:
            if reason not in self.REASONS:
                raise RecordError(f"unknown rejection reason {reason!r}")
        overlap = set(self.kept) & {o for o, _ in self.rejections}
        if overlap:
            raise RecordError(f"objects both kept and rejected: {sorted(overlap)}")


@dataclass(frozen=True)
class EvaluatedSample:
    """One evaluated (model, query) pair: raw metrics plus criterion scores."""

    model_id: str
    query_id: str
    edit_type: EditType
    target_class: Optional[str]
    vector: MetricVector
    scores: CriterionScores
    error: Optional[str] = None

    def __post_init__(self):
        object.__setattr__(self, "edit_type", EditType(self.edit_type))


# ---------------------------------------------------------------------------
# JSON serialization
# ---------------------------------------------------------------------------

def _scene_object_to_json(obj: SceneObject) -> dict:
    return {
        "object_id": obj.object_id,
        "class_name": obj.class_name,
        "bbox": list(obj.bbox),
        "attributes": dict(obj.attributes),
        "relations": [list(r) for r in obj.relations],
    }


def _scene_object_from_json(d: dict) -> SceneObject:
    return SceneObject(
        object_id=d["object_id"],
        class_name=d["class_name"],
        bbox=tuple(d["bbox"]),
        attributes=d.get("attributes", {}),
        relations=tuple(tuple(r) for r in d.get("relations", [])),
    )


def image_record_to_json(rec: ImageRecord) -> dict:
    return {
        "image_id": rec.image_id,
        "width": rec.width,
        "height": rec.height,
        "objects": [_scene_object_to_json(o) for o in rec.objects],
        "source_path": rec.source_path,
    }


def image_record_from_json(d: dict) -> ImageRecord:
    return ImageRecord(
        image_id=d["image_id"],
        width=int(d["width"]),
        height=int(d["height"]),
        objects=tuple(_scene_object_from_json(o) for o in d.get("objects", [])),
        source_path=d.get("source_path"),
    )


def edit_query_to_json(q: EditQuery) -> dict:
    return {
        "query_id": q.query_id,
        "image_id": q.image_id,
        "edit_type": q.edit_type.value,
        "target_object_id": q.target_object_id,
        "params": dict(q.params),
        "caption_original": q.caption_original,
        "caption_edited": q.caption_edited,
        "instruction": q.instruction,
        "instruction_only": q.instruction_only,
    }


def edit_query_from_json(d: dict) -> EditQuery:
    return EditQuery(
        query_id=d["query_id"],
        image_id=d["image_id"],
        edit_type=EditType(d["edit_type"]),
        target_object_id=d.get("target_object_id"),
        params=d.get("params", {}),
        caption_original=d.get("caption_original"),
        caption_edited=d.get("caption_edited"),
        instruction=d.get("instruction"),
        instruction_only=bool(d.get("instruction_only", False)),
    )


def metric_vector_to_json(v: MetricVector) -> dict:
    v.validate()
    return {"values": dict(sorted(v.values.items())),
            "flags": dict(sorted(v.flags.items()))}


def metric_vector_from_json(d: dict) -> MetricVector:
    return MetricVector(values=d.get("values", {}), flags=d.get("flags", {}))


def criterion_scores_to_json(s: CriterionScores) -> dict:
    return {name: getattr(s, name)
            for name in ("of", "bf", "oc", "bc", "iq", "total")}


def criterion_scores_from_json(d: dict) -> CriterionScores:
    return CriterionScores(**{k: d.get(k) for k in ("of", "bf", "oc", "bc", "iq", "total")})


def preference_record_to_json(p: PreferenceRecord) -> dict:
    return {
        "question_id": p.question_id,
        "criterion": p.criterion,
        "query_id": p.query_id,
        "sample_a": list(p.sample_a),
        "sample_b": list(p.sample_b),
        "votes": list(p.votes),
    }


def preference_record_from_json(d: dict) -> PreferenceRecord:
    return PreferenceRecord(
        question_id=d["question_id"],
        criterion=d["criterion"],
        query_id=d["query_id"],
        sample_a=tuple(d["sample_a"]),
        sample_b=tuple(d["sample_b"]),
        votes=tuple(d["votes"]),
    )


def filter_report_to_json(r: FilterReport) -> dict:
    return {
        "image_id": r.image_id,
        "kept": list(r.kept),
        "rejections": [list(x) for x in r.rejections],
        "metadata": dict(r.metadata),
    }


def filter_report_from_json(d: dict) -> FilterReport:
    return FilterReport(
        image_id=d["image_id"],
        kept=tuple(d.get("kept", [])),
        rejections=tuple(tuple(x) for x in d.get("rejections", [])),
        metadata=d.get("metadata", {}),
    )


def evaluated_sample_to_json(s: EvaluatedSample) -> dict:
    return {
        "model_id": s.model_id,
        "query_id": s.query_id,
        "edit_type": s.edit_type.value,
        "target_class": s.target_class,
        "vector": metric_vector_to_json(s.vector),
        "scores": criterion_scores_to_json(s.scores),
        "error": s.error,
    }


def evaluated_sample_from_json(d: dict) -> EvaluatedSample:
    return EvaluatedSample(
        model_id=d["model_id"],
        query_id=d["query_id"],
        edit_type=EditType(d["edit_type"]),
        target_class=d.get("target_class"),
        vector=metric_vector_from_json(d["vector"]),
        scores=criterion_scores_from_json(d["scores"]),
        error=d.get("error"),
    )


_CODECS = {
    ImageRecord: (image_record_to_json, image_record_from_json),
    EditQuery: (edit_query_to_json, edit_query_from_json),
    MetricVector: (metric_vector_to_json, metric_vector_from_json),
    CriterionScores: (criterion_scores_to_json, criterion_scores_from_json),
    PreferenceRecord: (preference_record_to_json, preference_record_from_json),
    FilterReport: (filter_report_to_json, filter_report_from_json),
    EvaluatedSample: (evaluated_sample_to_json, evaluated_sample_from_json),
}


def dumps_record(record) -> str:
    """Canonical single-line JSON for any serializable record type."""
    encode, _ = _CODECS[type(record)]
    return json.dumps(encode(record), sort_keys=True, separators=(",", ":"))


def save_records(records: Iterable, path) -> None:
    """Write records as line-delimited JSON (one record per line, UTF-8)."""
    path = Path(path)
    lines = [dumps_record(r) for r in records]
    path.write_text("".join(line + "\n" for line in lines), encoding="utf-8")


def load_records(path, record_type) -> list:
    """Load line-delimited JSON records of the given type."""
    path = Path(path)
    _, decode = _CODECS[record_type]
    out = []
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise RecordError(f"cannot read {path}: {exc}") from exc
    for i, line in enumerate(text.splitlines()):
        if not line.strip():
            continue
        try:
            out.append(decode(json.loads(line)))
        except (json.JSONDecodeError, KeyError, RecordError) as exc:
            raise RecordError(f"{path}:{i + 1}: {exc}") from exc
    return out


def save_weights(weights: WeightConfig, path) -> None:
    Path(path).write_text(
        json.dumps({"groups": weights.groups}, sort_keys=True, indent=2) + "\n",
        encoding="utf-8",
    )


def load_weights(path) -> WeightConfig:
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise RecordError(f"cannot read weights {path}: {exc}") from exc
    return WeightConfig(groups=data["groups"])


@dataclass(frozen=True)
class CorpusError:
    """One malformed corpus record, identified by file and offending object."""

    path: str
    image_id: Optional[str]
    message: str


def load_corpus(path, detector_classes: Optional[set[str]] = None
                ) -> tuple[list[ImageRecord], list[CorpusError]]:
    """Load a scene-graph corpus: one JSON document per image in a directory.

    Objects whose class is not in ``detector_classes`` (when given) are
    dropped silently; records violating invariants are rejected and reported
    in the error list. Records are returned sorted by image id.
    """
    path = Path(path)
    if not path.is_dir():
        raise RecordError(f"corpus directory {path} does not exist")
    records, errors = [], []
    for file in sorted(path.glob("*.json")):
        try:
            data = json.loads(file.read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            errors.append(CorpusError(str(file), None, str(exc)))
            continue
        if detector_classes is not None:
            objs = [o for o in data.get("objects", [])
                    if o.get("class_name") in detector_classes]
            data = dict(data, objects=objs)
        try:
            records.append(image_record_from_json(data))
        except (RecordError, KeyError, TypeError, ValueError) as exc:
            errors.append(CorpusError(str(file), data.get("image_id"), str(exc)))
    records.sort(key=lambda r: r.image_id)
    return records, errors
