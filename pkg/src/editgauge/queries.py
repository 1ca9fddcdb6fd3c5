"""Feasible, balanced edit-query generation from corpus statistics.

All generators are pure functions of (corpus, stats, seed, config); the
seeded RNG is split per image id so processing order cannot change output.
"""

from __future__ import annotations

import hashlib
import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .config import RunConfig, state_pair_table
from .metrics import clip_alignment
from .records import EditQuery, EditType, ImageRecord, SceneObject

log = logging.getLogger(__name__)

BACKGROUNDS = (
    "beach", "pine forest", "urban city", "desert", "snow field",
    "country side farm", "tropical jungle", "vineyard", "lake side",
    "mountain top", "living room", "cave", "art gallery", "ancient ruins",
    "space station", "grass field", "train station", "library", "restaurant",
    "airport", "hospital", "gym", "zoo", "aquarium", "museum",
    "concert hall", "stadium",
)

STYLES = (
    "watercolor painting", "Van Gogh art", "oil painting", "cartoon",
    "gray scale", "pencil sketch", "mosaic art", "pop art", "graffiti art",
    "ancient Egyptian art",
)


@dataclass(frozen=True)
class OptionSets:
    """Background and style option pools for non-object-centric edits."""

    backgrounds: tuple[str, ...] = BACKGROUNDS
    styles: tuple[str, ...] = STYLES

    def __post_init__(self):
        if len(self.backgrounds) != 27:
            raise ValueError(f"expected 27 backgrounds, got {len(self.backgrounds)}")
        if len(self.styles) != 10:
            raise ValueError(f"expected 10 styles, got {len(self.styles)}")


@dataclass
class RelationStats:
    """Corpus-wide tallies backing query feasibility decisions."""

    counts: dict[tuple[str, str, str], int] = field(default_factory=dict)
    inventories: dict[str, dict[str, set[str]]] = field(default_factory=dict)
    state_pairs: dict[str, list[str]] = field(default_factory=dict)

    def count(self, class_a: str, relation: str, class_b: str) -> int:
        return self.counts.get((class_a, relation, class_b), 0)

    def classes(self) -> list[str]:
        seen = set(self.inventories)
        for a, _, b in self.counts:
            seen.add(a)
            seen.add(b)
        return sorted(seen)


def build_stats(corpus: list[ImageRecord],
                state_pairs: Optional[dict[str, list[str]]] = None) -> RelationStats:
    """Tally relations and per-class attribute inventories over the corpus."""
    stats = RelationStats(state_pairs=state_pairs if state_pairs is not None
                          else state_pair_table())
    for record in corpus:
        by_id = {o.object_id: o for o in record.objects}
        for obj in record.objects:
            inv = stats.inventories.setdefault(obj.class_name, {})
            for category, word in obj.attributes.items():
                inv.setdefault(category, set()).add(word)
            for relation, other_id in obj.relations:
                other = by_id.get(other_id)
                if other is None:
                    continue
                key = (obj.class_name, relation, other.class_name)
                stats.counts[key] = stats.counts.get(key, 0) + 1
    return stats


def split_rng(seed: int, *tokens: str) -> np.random.Generator:
    """Derive an independent generator from a master seed and string tokens."""
    entropy = [seed & 0xFFFFFFFF]
    for token in tokens:
        digest = hashlib.sha256(token.encode("utf-8")).digest()
        entropy.append(int.from_bytes(digest[:8], "big"))
    return np.random.default_rng(np.random.SeedSequence(entropy))


def _query_id(image_id: str, edit_type: EditType, *parts: str) -> str:
    tail = ":".join(p.replace(" ", "_") for p in parts if p)
    return f"{image_id}:{edit_type.value}" + (f":{tail}" if tail else "")


# Candidate-region displacement per relation, in units of the anchor bbox.
# "next to" tries left then right; depth relations approximate with the
# vertical axis (front = lower in frame).
_RELATION_OFFSETS = {
    "on": ((0, -1),),
    "above": ((0, -1),),
    "under": ((0, 1),),
    "front": ((0, 1),),
    "behind": ((0, -1),),
    "left": ((-1, 0),),
    "right": ((1, 0),),
    "next to": ((-1, 0), (1, 0)),
    "in": ((0, 0),),
}


def _candidate_region(obj: SceneObject, relation: str):
    x, y, w, h = obj.bbox
    for dx, dy in _RELATION_OFFSETS[relation]:
        yield (x + dx * w, y + dy * h, w, h)


def _region_free(region, record: ImageRecord, anchor: SceneObject,
                 max_overlap: float) -> bool:
    rx, ry, rw, rh = region
    if rx < 0 or ry < 0 or rx + rw > record.width or ry + rh > record.height:
        return False
    area = rw * rh
    for other in record.objects:
        if other.object_id == anchor.object_id:
            continue
        ox, oy, ow, oh = other.bbox
        ix = max(0.0, min(rx + rw, ox + ow) - max(rx, ox))
        iy = max(0.0, min(ry + rh, oy + oh) - max(ry, oy))
        if ix * iy > max_overlap * area:
            return False
    return True


def addition_region(record: ImageRecord, obj: SceneObject, relation: str,
                    config: RunConfig = RunConfig()):
    """First in-bounds candidate region with enough free space, or None."""
    for region in _candidate_region(obj, relation):
        if _region_free(region, record, obj, config.free_space_overlap):
            return region
    return None


def gen_addition(record: ImageRecord, obj: SceneObject, stats: RelationStats,
                 config: RunConfig = RunConfig()) -> list[EditQuery]:
    """Addition queries: frequent (class, relation) pairs with free space."""
    present = record.class_names()
    threshold = config.relation_count_threshold
    out = []
    for new_class in stats.classes():
        if new_class in present:
            continue
        for relation in sorted(_RELATION_OFFSETS):
            if stats.count(new_class, relation, obj.class_name) < threshold:
                continue
            if addition_region(record, obj, relation, config) is not None:
                out.append(EditQuery(
                    query_id=_query_id(record.image_id, EditType.ADDITION,
                                       obj.object_id, new_class, relation),
                    image_id=record.image_id,
                    edit_type=EditType.ADDITION,
                    target_object_id=obj.object_id,
                    params={"new_class": new_class, "relation": relation},
                ))
    return out


def gen_removal(record: ImageRecord, obj: SceneObject) -> EditQuery:
    """The single removal query for a kept object (instruction-form only)."""
    return EditQuery(
        query_id=_query_id(record.image_id, EditType.REMOVAL, obj.object_id),
        image_id=record.image_id,
        edit_type=EditType.REMOVAL,
        target_object_id=obj.object_id,
        instruction_only=True,
    )


def gen_replacement(record: ImageRecord, obj: SceneObject, stats: RelationStats,
                    config: RunConfig = RunConfig()) -> list[EditQuery]:
    """Replacement queries: absent classes compatible with every related object."""
    present = record.class_names()
    threshold = config.relation_count_threshold
    by_id = {o.object_id: o for o in record.objects}

    # relation edges touching obj, kept directional
    outgoing = [(rel, by_id[oid].class_name)
                for rel, oid in obj.relations if oid in by_id]
    incoming = [(rel, other.class_name)
                for other in record.objects if other.object_id != obj.object_id
                for rel, oid in other.relations if oid == obj.object_id]

    out = []
    for new_class in stats.classes():
        if new_class in present:
            continue
        ok = all(stats.count(new_class, rel, other_cls) >= threshold
                 for rel, other_cls in outgoing)
        ok = ok and all(stats.count(other_cls, rel, new_class) >= threshold
                        for rel, other_cls in incoming)
        if ok and (outgoing or incoming):
            out.append(EditQuery(
                query_id=_query_id(record.image_id, EditType.REPLACEMENT,
                                   obj.object_id, new_class),
                image_id=record.image_id,
                edit_type=EditType.REPLACEMENT,
                target_object_id=obj.object_id,
                params={"new_class": new_class},
            ))
    return out


def gen_resizing(record: ImageRecord, obj: SceneObject,
                 config: RunConfig = RunConfig()) -> list[EditQuery]:
    """Resizing queries, gated by the object's relative area."""
    ratio = obj.area / (record.width * record.height)
    out = []
    if ratio <= config.resize_hi:
        out.append(EditQuery(
            query_id=_query_id(record.image_id, EditType.RESIZING,
                               obj.object_id, "larger"),
            image_id=record.image_id,
            edit_type=EditType.RESIZING,
            target_object_id=obj.object_id,
            params={"direction": "larger"},
        ))
    if ratio >= config.resize_lo:
        out.append(EditQuery(
            query_id=_query_id(record.image_id, EditType.RESIZING,
                               obj.object_id, "smaller"),
            image_id=record.image_id,
            edit_type=EditType.RESIZING,
            target_object_id=obj.object_id,
            params={"direction": "smaller"},
        ))
    return out


def gen_attribute_change(record: ImageRecord, obj: SceneObject,
                         stats: RelationStats) -> list[EditQuery]:
    """Attribute-change queries from the class inventory / state-pair table."""
    out = []
    inventory = stats.inventories.get(obj.class_name, {})
    for category in sorted(obj.attributes):
        old = obj.attributes[category]
        if category == "state":
            alternatives = stats.state_pairs.get(old, [])
        else:
            alternatives = sorted(inventory.get(category, set()) - {old})
        for new in alternatives:
            out.append(EditQuery(
                query_id=_query_id(record.image_id, EditType.ATTRIBUTE_CHANGE,
                                   obj.object_id, category, old, new),
                image_id=record.image_id,
                edit_type=EditType.ATTRIBUTE_CHANGE,
                target_object_id=obj.object_id,
                params={"category": category, "old": old, "new": new},
            ))
    return out


def rank_backgrounds(raster: np.ndarray, embedder,
                     options: OptionSets = OptionSets()) -> list[str]:
    """Backgrounds sorted by ascending text-image alignment with the image.

    Ties break lexicographically by background name.
    """
    image_vec = embedder.embed_image(raster)
    scored = [(clip_alignment(embedder.embed_text(b), image_vec), b)
              for b in options.backgrounds]
    scored.sort()
    return [b for _, b in scored]


def gen_background_change(record: ImageRecord, raster: np.ndarray, embedder,
                          rng: np.random.Generator,
                          options: OptionSets = OptionSets()
                          ) -> Optional[EditQuery]:
    """One background-change query drawn from the least-aligned half."""
    try:
        ranked = rank_backgrounds(raster, embedder, options)
    except Exception as exc:
        log.warning("embedder failed for %s: %s; skipping background query",
                    record.image_id, exc)
        return None
    pool = ranked[:len(options.backgrounds) // 2]
    background = pool[int(rng.integers(len(pool)))]
    return EditQuery(
        query_id=_query_id(record.image_id, EditType.BACKGROUND_CHANGE, background),
        image_id=record.image_id,
        edit_type=EditType.BACKGROUND_CHANGE,
        params={"background": background},
    )


def gen_style_change(record: ImageRecord, rng: np.random.Generator,
                     options: OptionSets = OptionSets()) -> EditQuery:
    """One style-change query drawn uniformly from the style pool."""
    style = options.styles[int(rng.integers(len(options.styles)))]
    return EditQuery(
        query_id=_query_id(record.image_id, EditType.STYLE_CHANGE, style),
        image_id=record.image_id,
        edit_type=EditType.STYLE_CHANGE,
        params={"style": style},
    )


@dataclass(frozen=True)
class BalanceReport:
    """Histograms and shortfalls from stratified pool balancing."""

    type_histogram: dict[str, int]
    class_histogram: dict[str, int]
    shortfalls: dict[str, int]


def _target_class(query: EditQuery, corpus_index: dict[str, ImageRecord]) -> str:
    if query.target_object_id is None:
        return "whole_image"
    record = corpus_index.get(query.image_id)
    if record is None:
        return "unknown"
    try:
        return record.object_by_id(query.target_object_id).class_name
    except KeyError:
        return "unknown"


def balance_pool(queries: list[EditQuery], corpus: list[ImageRecord],
                 rng: np.random.Generator,
                 per_type: Optional[dict[str, int]] = None,
                 per_class: Optional[dict[str, int]] = None,
                 ) -> tuple[list[EditQuery], BalanceReport]:
    """Stratified-downsample the pool toward target histograms.

    Sampling is deterministic under a fixed generator; unmet targets are
    reported as shortfalls. Queries keep their original relative order.
    """
    corpus_index = {r.image_id: r for r in corpus}
    by_type: dict[str, list[EditQuery]] = {}
    for q in sorted(queries, key=lambda q: q.query_id):
        by_type.setdefault(q.edit_type.value, []).append(q)

    shortfalls: dict[str, int] = {}
    selected: list[EditQuery] = []
    for type_name in sorted(set(by_type) | set(per_type or {})):
        pool = by_type.get(type_name, [])
        if not pool:
            target = (per_type or {}).get(type_name, 0)
            if target:
                shortfalls[f"type:{type_name}"] = target
            continue
        target = (per_type or {}).get(type_name)
        if target is None:
            chosen = pool
        else:
            if target > len(pool):
                shortfalls[f"type:{type_name}"] = target - len(pool)
                chosen = pool
            else:
                # stratify by target class within the type before sampling
                by_class: dict[str, list[EditQuery]] = {}
                for q in pool:
                    by_class.setdefault(_target_class(q, corpus_index), []).append(q)
                chosen = _proportional_sample(by_class, target, rng)
        selected.extend(chosen)

    if per_class:
        for class_name, target in sorted(per_class.items()):
            have = sum(1 for q in selected
                       if _target_class(q, corpus_index) == class_name)
            if have < target:
                shortfalls[f"class:{class_name}"] = target - have

    selected.sort(key=lambda q: q.query_id)
    type_hist: dict[str, int] = {}
    class_hist: dict[str, int] = {}
    for q in selected:
        type_hist[q.edit_type.value] = type_hist.get(q.edit_type.value, 0) + 1
        cls = _target_class(q, corpus_index)
        class_hist[cls] = class_hist.get(cls, 0) + 1
    return selected, BalanceReport(type_histogram=type_hist,
                                   class_histogram=class_hist,
                                   shortfalls=shortfalls)


def _proportional_sample(by_class: dict[str, list], target: int,
                         rng: np.random.Generator) -> list:
    """Sample ``target`` items spreading the quota across class strata."""
    classes = sorted(by_class)
    sizes = {c: len(by_class[c]) for c in classes}
    quotas = {c: 0 for c in classes}
    remaining = target
    # round-robin fill keeps small strata intact and large ones capped
    while remaining > 0:
        open_classes = [c for c in classes if quotas[c] < sizes[c]]
        if not open_classes:
            break
        for c in open_classes:
            if remaining == 0:
                break
            if quotas[c] < sizes[c]:
                quotas[c] += 1
                remaining -= 1
    out = []
    for c in classes:
        pool = by_class[c]
        if quotas[c] >= len(pool):
            out.extend(pool)
        else:
            idx = sorted(rng.choice(len(pool), size=quotas[c], replace=False))
            out.extend(pool[i] for i in idx)
    return out


def generate_for_image(record: ImageRecord, kept_ids, stats: RelationStats,
                       raster: Optional[np.ndarray], embedder,
                       seed: int, config: RunConfig = RunConfig()
                       ) -> list[EditQuery]:
    """All candidate queries for one image's kept objects."""
    rng = split_rng(seed, record.image_id)
    out: list[EditQuery] = []
    kept = [record.object_by_id(oid) for oid in kept_ids]
    for obj in sorted(kept, key=lambda o: o.object_id):
        out.extend(gen_addition(record, obj, stats, config))
        out.append(gen_removal(record, obj))
        out.extend(gen_replacement(record, obj, stats, config))
        out.extend(gen_resizing(record, obj, config))
        out.extend(gen_attribute_change(record, obj, stats))
    if kept:
        if raster is not None and embedder is not None:
            bg = gen_background_change(record, raster, embedder, rng)
            if bg is not None:
                out.append(bg)
        out.append(gen_style_change(record, rng))
    return out
