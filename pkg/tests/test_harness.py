import numpy as np
import pytest

from editgauge.harness import (HarnessError, aggregate, bootstrap_se,
                               compute_iq, report_from_json, report_to_json,
                               sweep_series)
from editgauge.records import (CriterionScores, EditType, EvaluatedSample,
                               MetricVector, WeightConfig)
from editgauge.reporting import format_mean_se, render_report, render_sweep

WEIGHTS = WeightConfig.uniform()


def _sample(model="m", qid="q0", etype=EditType.ADDITION, target="cup", **scores):
    return EvaluatedSample(model_id=model, query_id=qid, edit_type=etype,
                           target_class=target, vector=MetricVector(),
                           scores=CriterionScores(**scores))


class TestBootstrapSe:
    def test_constant_statistic(self):
        se = bootstrap_se(np.full(50, 3.3), np.mean, 1000, seed=1)
        assert se < 1e-12

    def test_mean_of_normal_matches_analytic(self):
        rng = np.random.default_rng(0)
        data = rng.standard_normal(400)
        se = bootstrap_se(data, np.mean, 1000, seed=2)
        analytic = 1.0 / 20.0
        assert abs(se - analytic) / analytic < 0.25

    def test_deterministic_under_seed(self):
        data = np.random.default_rng(1).standard_normal(100)
        a = bootstrap_se(data, np.mean, 500, seed=9)
        b = bootstrap_se(data, np.mean, 500, seed=9)
        assert a == b

    def test_small_sample_rejected(self):
        with pytest.raises(HarnessError):
            bootstrap_se([1.0], np.mean, 1000)

    def test_too_few_resamples_rejected(self):
        with pytest.raises(HarnessError):
            bootstrap_se([1.0, 2.0], np.mean, 99)

    def test_shrinks_with_variance(self):
        rng = np.random.default_rng(3)
        wide = bootstrap_se(rng.normal(0, 2.0, 200), np.mean, 500, seed=0)
        narrow = bootstrap_se(rng.normal(0, 0.1, 200), np.mean, 500, seed=0)
        assert narrow < wide


class TestComputeIq:
    def test_identical_sets_score_one(self):
        rng = np.random.default_rng(0)
        feats = rng.standard_normal((40, 3))
        value, se = compute_iq(feats, feats, n_resamples=100, seed=0)
        assert value == pytest.approx(1.0, abs=1e-9)
        assert se < 1e-9

    def test_shifted_sets_below_one(self):
        rng = np.random.default_rng(0)
        a = rng.standard_normal((60, 3))
        b = a + 5.0
        value, _ = compute_iq(a, b, n_resamples=100, seed=0)
        assert value < 0.5


class TestAggregate:
    def test_single_sample_means(self):
        report = aggregate([_sample(of=0.4, bc=0.6)], WEIGHTS,
                           n_resamples=100, seed=0)
        summary = report.models["m"]
        assert summary.criteria["of"][0] == 0.4
        assert summary.criteria["bc"][0] == 0.6
        # total renormalizes over {of, bc}
        assert summary.criteria["total"][0] == pytest.approx(0.5)

    def test_two_sample_mean(self):
        samples = [_sample(qid="q0", of=0.2, bc=1.0),
                   _sample(qid="q1", of=0.8, bc=1.0)]
        report = aggregate(samples, WEIGHTS, n_resamples=100, seed=0)
        assert report.models["m"].criteria["of"][0] == pytest.approx(0.5)

    def test_criterion_means_skip_absent(self):
        samples = [_sample(qid="q0", of=0.2, bc=1.0),
                   _sample(qid="q1", etype=EditType.STYLE_CHANGE, target=None,
                           bf=0.9, bc=0.5)]
        report = aggregate(samples, WEIGHTS, n_resamples=100, seed=0)
        crit = report.models["m"].criteria
        assert crit["of"][0] == 0.2
        assert crit["bf"][0] == 0.9
        assert crit["bc"][0] == pytest.approx(0.75)

    def test_iq_joins_totals(self):
        report = aggregate([_sample(of=0.5, bc=0.5)], WEIGHTS,
                           iq_by_model={"m": (1.0, 0.0)},
                           n_resamples=100, seed=0)
        # total over {of, bc, iq} = (0.5 + 0.5 + 1.0) / 3
        assert report.models["m"].criteria["total"][0] == \
            pytest.approx(2.0 / 3.0)

    def test_order_invariance(self):
        samples = [_sample(qid=f"q{i}", of=0.1 * i, bc=0.5)
                   for i in range(5)]
        a = aggregate(samples, WEIGHTS, n_resamples=100, seed=0)
        b = aggregate(list(reversed(samples)), WEIGHTS, n_resamples=100, seed=0)
        assert report_to_json(a) == report_to_json(b)

    def test_per_type_and_class_group(self):
        samples = [
            _sample(qid="q0", etype=EditType.ADDITION, target="cup", of=0.4,
                    bc=0.8),
            _sample(qid="q1", etype=EditType.STYLE_CHANGE, target=None,
                    bf=0.6, bc=0.9),
        ]
        report = aggregate(samples, WEIGHTS, n_resamples=100, seed=0)
        summary = report.models["m"]
        assert "addition" in summary.per_type
        assert "style_change" in summary.per_type
        assert "Whole Image" in summary.per_class_group
        assert "Dining" in summary.per_class_group

    def test_empty_rejected(self):
        with pytest.raises(HarnessError):
            aggregate([], WEIGHTS)

    def test_errored_samples_excluded(self):
        good = _sample(qid="q0", of=0.4, bc=0.8)
        bad = EvaluatedSample(model_id="m", query_id="q1",
                              edit_type=EditType.ADDITION, target_class="cup",
                              vector=MetricVector(), scores=CriterionScores(),
                              error="missing raster")
        report = aggregate([good, bad], WEIGHTS, n_resamples=100, seed=0)
        assert report.models["m"].n_samples == 1
        assert report.models["m"].n_errors == 1

    def test_round_trip(self):
        report = aggregate([_sample(of=0.4, bc=0.6)], WEIGHTS,
                           n_resamples=100, seed=0)
        data = report_to_json(report)
        assert report_to_json(report_from_json(data)) == data


class TestSweepSeries:
    def _report(self, of):
        return aggregate([_sample(of=of, bc=1.0 - of)], WEIGHTS,
                         n_resamples=100, seed=0)

    def test_monotone_tradeoff(self):
        reports = [(0.1, self._report(0.2)), (0.5, self._report(0.5)),
                   (0.9, self._report(0.8))]
        series = sweep_series(reports, "strength")[0]
        assert series.values == (0.1, 0.5, 0.9)
        of = series.series["of"]
        bc = series.series["bc"]
        assert of[0] < of[1] < of[2]
        assert bc[0] > bc[1] > bc[2]

    def test_single_setting(self):
        series = sweep_series([(1.0, self._report(0.5))], "s")[0]
        assert series.values == (1.0,)
        assert len(series.series["of"]) == 1

    def test_lengths_match_setting_count(self):
        reports = [(float(i), self._report(0.1 * i)) for i in range(4)]
        for s in sweep_series(reports, "p"):
            for values in s.series.values():
                assert len(values) == 4

    def test_empty_rejected(self):
        with pytest.raises(HarnessError):
            sweep_series([], "p")


class TestRendering:
    def test_mean_se_format(self):
        assert format_mean_se(0.7329, 0.0007) == "0.7329 ± 0.0007"
        assert format_mean_se(1.0, 0.0) == "1.0000 ± 0.0000"

    def test_report_files(self, tmp_path):
        report = aggregate([_sample(of=0.73294, bc=0.5)], WEIGHTS,
                           n_resamples=100, seed=0)
        files = render_report(report, tmp_path)
        assert "report.txt" in files and "criteria.csv" in files
        text = (tmp_path / "report.txt").read_text(encoding="utf-8")
        assert "0.7329 ±" in text
        assert (tmp_path / "criteria.png").exists()

    def test_empty_group_omitted_with_note(self, tmp_path):
        report = aggregate([_sample(of=0.4, bc=0.5)], WEIGHTS,
                           n_resamples=100, seed=0)
        render_report(report, tmp_path, skip_plots=True)
        text = (tmp_path / "report.txt").read_text(encoding="utf-8")
        assert "omitted" in text
        assert "Person" not in text.split("omitted")[0].split("target classes")[1]

    def test_csv_is_stable(self, tmp_path):
        report = aggregate([_sample(of=0.4, bc=0.5)], WEIGHTS,
                           n_resamples=100, seed=0)
        render_report(report, tmp_path / "a", skip_plots=True)
        render_report(report, tmp_path / "b", skip_plots=True)
        assert (tmp_path / "a" / "criteria.csv").read_bytes() == \
            (tmp_path / "b" / "criteria.csv").read_bytes()

    def test_sweep_render(self, tmp_path):
        reports = [(0.1, aggregate([_sample(of=0.3, bc=0.7)], WEIGHTS,
                                   n_resamples=100, seed=0)),
                   (0.2, aggregate([_sample(of=0.6, bc=0.4)], WEIGHTS,
                                   n_resamples=100, seed=0))]
        series = sweep_series(reports, "p")
        files = render_sweep(series, tmp_path)
        assert "sweep.csv" in files and "sweep.png" in files
        rows = (tmp_path / "sweep.csv").read_text().strip().splitlines()
        assert rows[0] == "model,parameter,criterion,value,score"
