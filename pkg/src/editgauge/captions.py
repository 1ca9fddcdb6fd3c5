"""Description-pair generation via an LLM client, and instruction templates.

Prompt wording lives in editable template files with ``{slot}`` syntax; the
shipped TemplateLlm mock understands the default templates so the whole
caption flow runs deterministically offline.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

from .config import RunConfig, template_dir
from .records import EditQuery, EditType, ImageRecord


class CaptionError(ValueError):
    """Raised on unusable caption requests (missing slots, removal pairs)."""


@dataclass(frozen=True)
class PromptTemplate:
    """A prompt template with named slots, addressed by stage."""

    template_id: str
    stage: str
    text: str
    edit_type: Optional[EditType] = None

    def render(self, **slots) -> str:
        try:
            return self.text.format(**slots)
        except KeyError as exc:
            raise CaptionError(
                f"template {self.template_id}: missing slot {exc.args[0]!r}"
            ) from exc


class TemplateLibrary:
    """Loads prompt/instruction templates from a directory of text files."""

    def __init__(self, path=None):
        self.path = Path(path) if path is not None else template_dir()

    def get(self, template_id: str, stage: str = "",
            edit_type: Optional[EditType] = None) -> PromptTemplate:
        file = self.path / f"{template_id}.txt"
        if not file.exists():
            raise CaptionError(f"no template file {file}")
        return PromptTemplate(template_id=template_id, stage=stage,
                              text=file.read_text(encoding="utf-8").strip(),
                              edit_type=edit_type)


@dataclass(frozen=True)
class CaptionVerdict:
    ok: bool
    missing: tuple[str, ...]
    word_count: int
    reasons: tuple[str, ...]


def _word_pattern(token: str) -> re.Pattern:
    return re.compile(r"(?<!\w)" + re.escape(token) + r"(?!\w)", re.IGNORECASE)


def validate_caption(text: str, required_tokens, max_words: int = 60) -> CaptionVerdict:
    """Check whole-word presence of every token and the word budget."""
    missing = tuple(t for t in required_tokens if not _word_pattern(t).search(text))
    word_count = len(text.split())
    reasons = []
    if missing:
        reasons.append(f"missing tokens: {', '.join(missing)}")
    if word_count > max_words:
        reasons.append(f"word count {word_count} exceeds {max_words}")
    return CaptionVerdict(ok=not reasons, missing=missing,
                          word_count=word_count, reasons=tuple(reasons))


def _swap_word(text: str, old: str, new: str) -> str:
    return _word_pattern(old).sub(new, text)


def _article(noun: str) -> str:
    return "an" if noun[:1].lower() in "aeiou" else "a"


@dataclass(frozen=True)
class CaptionResult:
    caption_original: str
    caption_edited: str
    retries: int
    needs_manual_fix: bool
    reasons: tuple[str, ...] = ()


def generate_description_pair(query: EditQuery, record: ImageRecord, llm,
                              kept_ids=None,
                              templates: Optional[TemplateLibrary] = None,
                              config: RunConfig = RunConfig()) -> CaptionResult:
    """Build the (original, edited) description pair for a query.

    The original caption is regenerated until it names every editable object
    and fits the word budget (bounded retries); the edited caption follows
    the per-type rewrite chain. Unrecoverable validation failures flag the
    result for manual fixing instead of raising.
    """
    if query.edit_type is EditType.REMOVAL:
        raise CaptionError("removal queries are excluded from description-based "
                           "evaluation and carry no caption pair")
    templates = templates or TemplateLibrary()
    kept_ids = list(kept_ids) if kept_ids is not None else \
        [o.object_id for o in record.objects]
    kept = [record.object_by_id(oid) for oid in kept_ids]
    required = sorted({o.class_name for o in kept})
    reasons: list[str] = []
    needs_fix = False

    base = templates.get("base_caption", stage="base_caption")
    prompt = base.render(objects=", ".join(required), max_words=config.caption_max_words)
    retries = 0
    c0 = llm.complete(prompt)
    verdict = validate_caption(c0, required, config.caption_max_words)
    while not verdict.ok and retries < config.caption_retries:
        retries += 1
        c0 = llm.complete(prompt)
        verdict = validate_caption(c0, required, config.caption_max_words)
    if not verdict.ok:
        needs_fix = True
        reasons.extend(verdict.reasons)

    target = record.object_by_id(query.target_object_id) \
        if query.target_object_id else None

    if query.edit_type is EditType.ATTRIBUTE_CHANGE:
        # normalize attribute mentions so the edited-caption swap is exact
        old_attr = query.params["old"]
        strip = templates.get("attr_strip", stage="attribute_rewrite")
        words = sorted(set(target.attributes.values()) | {old_attr})
        c0 = llm.complete(strip.render(object=target.class_name,
                                       attributes=", ".join(words), caption=c0))
        insert = templates.get("attr_insert", stage="attribute_rewrite")
        c0 = llm.complete(insert.render(attribute=old_attr,
                                        object=target.class_name, caption=c0))
        if not validate_caption(c0, [old_attr], config.caption_max_words).ok:
            needs_fix = True
            reasons.append(f"original caption lost attribute {old_attr!r}")

    ce, ce_required = _edited_caption(query, target, c0, llm, templates)
    ce_verdict = validate_caption(ce, ce_required, config.caption_max_words)
    if not ce_verdict.ok:
        needs_fix = True
        reasons.extend(ce_verdict.reasons)

    return CaptionResult(caption_original=c0, caption_edited=ce, retries=retries,
                         needs_manual_fix=needs_fix, reasons=tuple(reasons))


def _edited_caption(query: EditQuery, target, c0: str, llm,
                    templates: TemplateLibrary) -> tuple[str, list[str]]:
    etype = query.edit_type
    if etype is EditType.REPLACEMENT:
        new = query.params["new_class"]
        swap = templates.get("replace_object", stage="target_rewrite", edit_type=etype)
        ce = llm.complete(swap.render(old=target.class_name, new=new, caption=c0))
        fix = templates.get("grammar_fix", stage="target_rewrite", edit_type=etype)
        return llm.complete(fix.render(caption=ce)), [new]
    if etype is EditType.ADDITION:
        new = query.params["new_class"]
        info = (f"{_article(new)} {new} {query.params['relation']} "
                f"the {target.class_name}")
        add = templates.get("add_info", stage="target_rewrite", edit_type=etype)
        return llm.complete(add.render(info=info, caption=c0)), [new]
    if etype is EditType.RESIZING:
        info = f"the {target.class_name} being noticeably {query.params['direction']}"
        add = templates.get("add_info", stage="target_rewrite", edit_type=etype)
        return llm.complete(add.render(info=info, caption=c0)), [target.class_name]
    if etype is EditType.BACKGROUND_CHANGE:
        background = query.params["background"]
        add = templates.get("add_info", stage="target_rewrite", edit_type=etype)
        info = f"the background changed to {_article(background)} {background}"
        return llm.complete(add.render(info=info, caption=c0)), [background]
    if etype is EditType.ATTRIBUTE_CHANGE:
        return _swap_word(c0, query.params["old"], query.params["new"]), \
            [query.params["new"]]
    if etype is EditType.STYLE_CHANGE:
        style = query.params["style"]
        prefix = f"{_article(style).capitalize()} {style} artwork."
        combine = templates.get("style_combine", stage="combine", edit_type=etype)
        return llm.complete(combine.render(prefix=prefix, caption=c0)), [style]
    raise CaptionError(f"no edited-caption flow for {etype.value}")


_INSTRUCTION_TEMPLATES = {
    EditType.ADDITION: "instruction_addition",
    EditType.REMOVAL: "instruction_removal",
    EditType.REPLACEMENT: "instruction_replacement",
    EditType.ATTRIBUTE_CHANGE: "instruction_attribute_change",
    EditType.RESIZING: "instruction_resizing",
    EditType.BACKGROUND_CHANGE: "instruction_background_change",
    EditType.STYLE_CHANGE: "instruction_style_change",
}


def instantiate_instruction(query: EditQuery, object_class: Optional[str] = None,
                            templates: Optional[TemplateLibrary] = None) -> str:
    """Fill the edit type's instruction template with the query's exact words."""
    templates = templates or TemplateLibrary()
    name = _INSTRUCTION_TEMPLATES.get(query.edit_type)
    if name is None:
        raise CaptionError(f"unknown edit type {query.edit_type!r}")
    template = templates.get(name, stage="instruction", edit_type=query.edit_type)
    slots = dict(query.params)
    if "{object}" in template.text:
        if object_class is None:
            raise CaptionError("template needs slot 'object' "
                               "(pass the target object's class name)")
        slots["object"] = object_class
    return template.render(**slots)


class TemplateLlm:
    """Deterministic mock LLM understanding the shipped default templates.

    It executes each caption stage literally (compose, strip, insert,
    replace, combine), standing in for a real model in offline runs.
    """

    _CONTAINS = re.compile(r"The image contains: (.*?)\. Use each")
    _STRIP = re.compile(r"Attributes to remove: (.*?)\.\s*\nCaption: (.*)", re.S)
    _INSERT = re.compile(r"Insert the words '(.*?)' immediately before '(.*?)' "
                         r"in this caption.*?\nCaption: (.*)", re.S)
    _REPLACE = re.compile(r"Replace '(.*?)' with '(.*?)' in this caption.*?"
                          r"\nCaption: (.*)", re.S)
    _GRAMMAR = re.compile(r"Fix any grammatical errors.*?\nCaption: (.*)", re.S)
    _ADD = re.compile(r"Rewrite this caption to also convey: (.*?)\.\s*"
                      r"\nCaption: (.*)", re.S)
    _COMBINE = re.compile(r"First: (.*?)\nSecond: (.*)", re.S)

    def complete(self, prompt: str) -> str:
        m = self._CONTAINS.search(prompt)
        if m:
            names = [n.strip() for n in m.group(1).split(",") if n.strip()]
            listed = ", ".join(f"{_article(n)} {n}" for n in names)
            return f"A photo of {listed}."
        m = self._STRIP.search(prompt)
        if m:
            caption = m.group(2).strip()
            for word in (w.strip() for w in m.group(1).split(",")):
                caption = _word_pattern(word).sub("", caption)
            return re.sub(r"\s+", " ", caption).replace(" .", ".").strip()
        m = self._INSERT.search(prompt)
        if m:
            attribute, obj, caption = m.group(1), m.group(2), m.group(3).strip()
            return _word_pattern(obj).sub(f"{attribute} {obj}", caption, )
        m = self._REPLACE.search(prompt)
        if m:
            old, new, caption = m.group(1), m.group(2), m.group(3).strip()
            return _swap_word(caption, old, new)
        m = self._GRAMMAR.search(prompt)
        if m:
            return m.group(1).strip()
        m = self._ADD.search(prompt)
        if m:
            info, caption = m.group(1), m.group(2).strip()
            return f"{caption.rstrip('.')}, with {info}."
        m = self._COMBINE.search(prompt)
        if m:
            prefix, caption = m.group(1).strip(), m.group(2).strip()
            body = caption.rstrip(".")
            body = body[:1].lower() + body[1:]
            return f"{prefix.rstrip('.')} of {body}."
        raise CaptionError("TemplateLlm does not understand this prompt; "
                           "custom templates need a real LLM backend")
