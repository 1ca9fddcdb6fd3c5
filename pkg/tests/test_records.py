import json

import pytest

from editgauge.records import (CriterionScores, EditQuery, EditType,
                               FilterReport, ImageRecord, MetricVector,
                               PreferenceRecord, RecordError, SceneObject,
                               WeightConfig, load_corpus, load_records,
                               load_weights, save_records, save_weights)


def _image(image_id="img", objects=()):
    return ImageRecord(image_id=image_id, width=512, height=512,
                       objects=tuple(objects))


def _obj(oid="o1", cls="cup", bbox=(10, 10, 40, 40), **kw):
    return SceneObject(object_id=oid, class_name=cls, bbox=bbox, **kw)


class TestInvariants:
    def test_image_dimensions(self):
        with pytest.raises(RecordError):
            ImageRecord(image_id="x", width=0, height=10)

    def test_duplicate_object_ids(self):
        with pytest.raises(RecordError, match="duplicate"):
            _image(objects=[_obj("a"), _obj("a", bbox=(100, 100, 10, 10))])

    def test_bbox_outside_bounds(self):
        with pytest.raises(RecordError, match="outside"):
            _image(objects=[_obj(bbox=(500, 10, 40, 40))])

    def test_unknown_attribute_category(self):
        with pytest.raises(RecordError, match="category"):
            _obj(attributes={"texture": "rough"})

    def test_unknown_relation(self):
        with pytest.raises(RecordError, match="relation"):
            _obj(relations=(("inside of", "o2"),))

    def test_metric_vector_range(self):
        with pytest.raises(RecordError):
            MetricVector(values={"of.det": 1.0000000001})
        with pytest.raises(RecordError):
            MetricVector(values={"of.det": -0.1})
        MetricVector(values={"of.det": 1.0, "bc.l2": 0.0})

    def test_criterion_scores_range(self):
        with pytest.raises(RecordError):
            CriterionScores(of=1.5)
        scores = CriterionScores(of=0.5, bc=1.0)
        assert scores.present() == {"of": 0.5, "bc": 1.0}

    def test_removal_carries_no_description(self):
        with pytest.raises(RecordError, match="description"):
            EditQuery(query_id="q", image_id="i", edit_type=EditType.REMOVAL,
                      target_object_id="o", caption_original="a",
                      caption_edited="b")

    def test_params_exact(self):
        with pytest.raises(RecordError, match="params"):
            EditQuery(query_id="q", image_id="i", edit_type=EditType.ADDITION,
                      target_object_id="o", params={"new_class": "cup"})
        with pytest.raises(RecordError, match="params"):
            EditQuery(query_id="q", image_id="i", edit_type=EditType.REMOVAL,
                      target_object_id="o", params={"stray": "x"})

    def test_votes_exactly_three(self):
        with pytest.raises(RecordError):
            PreferenceRecord(question_id="q", criterion="of", query_id="x",
                             sample_a=("m1", "p1"), sample_b=("m2", "p2"),
                             votes=("A", "B"))
        with pytest.raises(RecordError, match="sample_a equals"):
            PreferenceRecord(question_id="q", criterion="of", query_id="x",
                             sample_a=("m1", "p1"), sample_b=("m1", "p1"),
                             votes=("A", "B", "A"))


class TestWeightConfig:
    def test_uniform_valid(self):
        w = WeightConfig.uniform()
        for group in w.groups.values():
            assert abs(sum(group.values()) - 1.0) <= 1e-9

    def test_rejects_bad_sum(self):
        w = WeightConfig.uniform()
        groups = {k: dict(v) for k, v in w.groups.items()}
        groups["bc"]["lpips"] += 1e-6
        with pytest.raises(RecordError, match="sums"):
            WeightConfig(groups)

    def test_rejects_negative(self):
        groups = {k: dict(v) for k, v in WeightConfig.uniform().groups.items()}
        groups["bc"] = {"lpips": -0.5, "dino": 0.75, "l2": 0.75}
        with pytest.raises(RecordError, match="negative"):
            WeightConfig(groups)

    def test_rejects_missing_group(self):
        groups = {k: dict(v) for k, v in WeightConfig.uniform().groups.items()}
        del groups["oc"]
        with pytest.raises(RecordError, match="missing"):
            WeightConfig(groups)

    def test_round_trip(self, tmp_path):
        w = WeightConfig.uniform().replace_group(
            "bc", {"lpips": 0.2, "dino": 0.3, "l2": 0.5})
        save_weights(w, tmp_path / "w.json")
        assert load_weights(tmp_path / "w.json") == w


class TestRoundTrips:
    def test_empty_list(self, tmp_path):
        save_records([], tmp_path / "x.jsonl")
        assert load_records(tmp_path / "x.jsonl", EditQuery) == []

    def test_queries_round_trip(self, tmp_path):
        queries = [
            EditQuery(query_id="q1", image_id="i", edit_type=EditType.ADDITION,
                      target_object_id="o",
                      params={"new_class": "cup", "relation": "on"}),
            EditQuery(query_id="q2", image_id="i", edit_type=EditType.REMOVAL,
                      target_object_id="o", instruction_only=True,
                      instruction="remove the cup"),
            EditQuery(query_id="q3", image_id="i",
                      edit_type=EditType.STYLE_CHANGE,
                      params={"style": "cartoon"},
                      caption_original="A cup.", caption_edited="A cartoon."),
        ]
        save_records(queries, tmp_path / "q.jsonl")
        assert load_records(tmp_path / "q.jsonl", EditQuery) == queries

    def test_vectors_round_trip_full_precision(self, tmp_path):
        vec = MetricVector(values={"of.det": 0.12345678901234567,
                                   "bc.l2": 1.0 / 3.0},
                           flags={"target": True})
        save_records([vec], tmp_path / "v.jsonl")
        assert load_records(tmp_path / "v.jsonl", MetricVector) == [vec]

    def test_scores_round_trip(self, tmp_path):
        scores = [CriterionScores(of=0.25, bc=2.0 / 3.0),
                  CriterionScores(bf=1.0, oc=0.0, iq=0.5, total=0.625)]
        save_records(scores, tmp_path / "s.jsonl")
        assert load_records(tmp_path / "s.jsonl", CriterionScores) == scores

    def test_votes_round_trip(self, tmp_path):
        rec = PreferenceRecord(question_id="q", criterion="total",
                               query_id="x", sample_a=("m1", "a.png"),
                               sample_b=("m2", "b.png"), votes=("A", "B", "A"))
        save_records([rec], tmp_path / "p.jsonl")
        assert load_records(tmp_path / "p.jsonl", PreferenceRecord) == [rec]

    def test_filter_report_round_trip(self, tmp_path):
        rep = FilterReport(image_id="i", kept=("a",),
                           rejections=(("b", "too_small"),),
                           metadata={"resample": "bilinear"})
        save_records([rep], tmp_path / "f.jsonl")
        assert load_records(tmp_path / "f.jsonl", FilterReport) == [rep]

    def test_invalid_vector_rejected_at_save(self, tmp_path):
        vec = MetricVector(values={"of.det": 0.5})
        object.__setattr__(vec, "values", {"of.det": 1.0000000001})
        with pytest.raises(RecordError):
            save_records([vec], tmp_path / "v.jsonl")


class TestLoadCorpus:
    def test_empty_directory(self, tmp_path):
        records, errors = load_corpus(tmp_path)
        assert records == [] and errors == []

    def test_missing_directory(self, tmp_path):
        with pytest.raises(RecordError):
            load_corpus(tmp_path / "nope")

    def test_single_valid_record(self, tmp_path):
        doc = {"image_id": "im1", "width": 100, "height": 100,
               "objects": [{"object_id": "o", "class_name": "cup",
                            "bbox": [5, 5, 20, 20]}]}
        (tmp_path / "im1.json").write_text(json.dumps(doc))
        records, errors = load_corpus(tmp_path)
        assert len(records) == 1 and records[0].image_id == "im1"
        assert errors == []

    def test_bbox_violation_names_object(self, tmp_path):
        doc = {"image_id": "im1", "width": 100, "height": 100,
               "objects": [{"object_id": "bad_box", "class_name": "cup",
                            "bbox": [95, 5, 20, 20]}]}
        (tmp_path / "im1.json").write_text(json.dumps(doc))
        records, errors = load_corpus(tmp_path)
        assert records == []
        assert len(errors) == 1 and "bad_box" in errors[0].message

    def test_class_filtering(self, tmp_path):
        doc = {"image_id": "im1", "width": 100, "height": 100,
               "objects": [{"object_id": "o1", "class_name": "cup",
                            "bbox": [5, 5, 20, 20]},
                           {"object_id": "o2", "class_name": "unknown thing",
                            "bbox": [40, 40, 20, 20]}]}
        (tmp_path / "im1.json").write_text(json.dumps(doc))
        records, _ = load_corpus(tmp_path, detector_classes={"cup"})
        assert [o.object_id for o in records[0].objects] == ["o1"]
