import pytest

from editgauge.backends import ScriptedLlm
from editgauge.captions import (CaptionError, TemplateLibrary, TemplateLlm,
                                generate_description_pair,
                                instantiate_instruction, validate_caption)
from editgauge.records import EditQuery, EditType, ImageRecord, SceneObject


def _record(objects):
    return ImageRecord(image_id="im", width=512, height=512,
                       objects=tuple(objects))


def _bench(attrs=None):
    return SceneObject("b1", "bench", (100, 100, 200, 100), attrs or {})


class TestValidateCaption:
    def test_word_budget(self):
        text = " ".join(["word"] * 61)
        verdict = validate_caption(text, [], max_words=60)
        assert not verdict.ok
        assert "word count" in verdict.reasons[0]

    def test_all_tokens_present(self):
        verdict = validate_caption("A cat sits on a red bench today.",
                                   ["cat", "bench"], max_words=60)
        assert verdict.ok and verdict.word_count == 8

    def test_substring_not_a_match(self):
        verdict = validate_caption("A catalog on the shelf.", ["cat"])
        assert not verdict.ok
        assert verdict.missing == ("cat",)

    def test_case_insensitive_whole_word(self):
        assert validate_caption("The Cat sleeps.", ["cat"]).ok

    def test_multiword_token(self):
        assert validate_caption("A dining table here.", ["dining table"]).ok
        assert not validate_caption("A dining area.", ["dining table"]).ok


class TestInstantiateInstruction:
    def test_attribute_change_template(self):
        q = EditQuery(query_id="q", image_id="im",
                      edit_type=EditType.ATTRIBUTE_CHANGE,
                      target_object_id="b1",
                      params={"category": "color", "old": "brown",
                              "new": "yellow"})
        text = instantiate_instruction(q, object_class="bench")
        assert text == "change the color of the bench from brown to yellow"

    def test_removal_contains_object(self):
        q = EditQuery(query_id="q", image_id="im", edit_type=EditType.REMOVAL,
                      target_object_id="d1", instruction_only=True)
        text = instantiate_instruction(q, object_class="dog")
        assert text and "dog" in text

    def test_missing_object_class_names_slot(self):
        q = EditQuery(query_id="q", image_id="im", edit_type=EditType.REMOVAL,
                      target_object_id="d1", instruction_only=True)
        with pytest.raises(CaptionError, match="object"):
            instantiate_instruction(q)

    def test_background_and_style(self):
        q = EditQuery(query_id="q", image_id="im",
                      edit_type=EditType.BACKGROUND_CHANGE,
                      params={"background": "beach"})
        assert instantiate_instruction(q) == "change the background to beach"
        q = EditQuery(query_id="q", image_id="im",
                      edit_type=EditType.STYLE_CHANGE,
                      params={"style": "pop art"})
        assert instantiate_instruction(q) == "change the image style to pop art"

    def test_deterministic_idempotent(self):
        q = EditQuery(query_id="q", image_id="im", edit_type=EditType.RESIZING,
                      target_object_id="b1", params={"direction": "larger"})
        a = instantiate_instruction(q, "bench")
        b = instantiate_instruction(q, "bench")
        assert a == b == "make the bench larger"


class TestGenerateDescriptionPair:
    def test_template_llm_first_try(self):
        record = _record([_bench()])
        q = EditQuery(query_id="q", image_id="im", edit_type=EditType.RESIZING,
                      target_object_id="b1", params={"direction": "larger"})
        result = generate_description_pair(q, record, TemplateLlm())
        assert result.retries == 0
        assert not result.needs_manual_fix
        assert "bench" in result.caption_original
        assert "larger" in result.caption_edited

    def test_retry_then_accept(self):
        record = _record([_bench()])
        q = EditQuery(query_id="q", image_id="im", edit_type=EditType.RESIZING,
                      target_object_id="b1", params={"direction": "larger"})
        llm = ScriptedLlm([
            "A photo of nothing.",          # missing 'bench'
            "Still nothing relevant.",      # missing again
            "A photo of a bench.",          # valid on third try
            "A photo of a bench, with the bench being noticeably larger.",
        ])
        result = generate_description_pair(q, record, llm)
        assert result.retries == 2
        assert not result.needs_manual_fix

    def test_exhausted_retries_flagged(self):
        record = _record([_bench()])
        q = EditQuery(query_id="q", image_id="im", edit_type=EditType.RESIZING,
                      target_object_id="b1", params={"direction": "larger"})
        llm = ScriptedLlm(["nope"] * 9 + ["tail", "tail"])
        result = generate_description_pair(q, record, llm)
        assert result.retries == 8
        assert result.needs_manual_fix

    def test_removal_refused(self):
        record = _record([_bench()])
        q = EditQuery(query_id="q", image_id="im", edit_type=EditType.REMOVAL,
                      target_object_id="b1", instruction_only=True)
        with pytest.raises(CaptionError):
            generate_description_pair(q, record, TemplateLlm())

    def test_style_change_contains_style_and_scene(self):
        cat = SceneObject("c1", "cat", (100, 100, 80, 80))
        couch = SceneObject("s1", "couch", (250, 250, 180, 120))
        record = _record([cat, couch])
        q = EditQuery(query_id="q", image_id="im",
                      edit_type=EditType.STYLE_CHANGE,
                      params={"style": "oil painting"})
        result = generate_description_pair(q, record, TemplateLlm())
        assert "oil painting" in result.caption_edited
        assert "cat" in result.caption_edited
        assert "couch" in result.caption_edited

    def test_attribute_swap_is_exact(self):
        bench = _bench({"color": "brown"})
        record = _record([bench])
        q = EditQuery(query_id="q", image_id="im",
                      edit_type=EditType.ATTRIBUTE_CHANGE,
                      target_object_id="b1",
                      params={"category": "color", "old": "brown",
                              "new": "yellow"})
        result = generate_description_pair(q, record, TemplateLlm())
        assert "brown" in result.caption_original
        assert "yellow" in result.caption_edited
        assert "brown" not in result.caption_edited

    def test_replacement_mentions_new_class(self):
        record = _record([_bench()])
        q = EditQuery(query_id="q", image_id="im",
                      edit_type=EditType.REPLACEMENT, target_object_id="b1",
                      params={"new_class": "sofa"})
        result = generate_description_pair(q, record, TemplateLlm())
        assert "sofa" in result.caption_edited

    def test_reproducible(self):
        record = _record([_bench({"color": "brown"})])
        q = EditQuery(query_id="q", image_id="im",
                      edit_type=EditType.ADDITION, target_object_id="b1",
                      params={"new_class": "lamp", "relation": "next to"})
        a = generate_description_pair(q, record, TemplateLlm())
        b = generate_description_pair(q, record, TemplateLlm())
        assert a == b


class TestTemplateLibrary:
    def test_missing_template(self, tmp_path):
        lib = TemplateLibrary(tmp_path)
        with pytest.raises(CaptionError, match="no template"):
            lib.get("nonexistent")

    def test_missing_slot_named(self, tmp_path):
        (tmp_path / "t.txt").write_text("Hello {name} and {other}")
        lib = TemplateLibrary(tmp_path)
        template = lib.get("t")
        with pytest.raises(CaptionError, match="other"):
            template.render(name="x")
