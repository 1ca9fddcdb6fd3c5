"""End-to-end aggregation: criterion means, bootstrap errors, breakdowns.

Aggregation is a single ordered pass and invariant to sample order;
bootstrap resampling is seeded so parallel runs cannot change results.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .backends import fid_between_sets
from .config import class_group_table
from .metrics import combine_weighted, iq_score
from .records import EditType, EvaluatedSample, WeightConfig

log = logging.getLogger(__name__)

CLASS_GROUPS = ("Whole Image", "Person", "Animal", "Vehicle", "Household",
                "Dining", "Outdoor", "Other")


class HarnessError(ValueError):
    """Raised on unusable aggregation inputs."""


def bootstrap_se(samples, statistic: Callable, n_resamples: int = 1000,
                 seed: int = 0) -> float:
    """Standard error of a statistic over seeded bootstrap resamples."""
    arr = np.asarray(samples, dtype=np.float64)
    if arr.size < 2:
        raise HarnessError(f"need at least 2 samples, got {arr.size}")
    if n_resamples < 100:
        raise HarnessError(f"need at least 100 resamples, got {n_resamples}")
    rng = np.random.default_rng(seed)
    idx = rng.integers(0, arr.size, size=(n_resamples, arr.size))
    stats = np.array([statistic(arr[row]) for row in idx], dtype=np.float64)
    return float(stats.std(ddof=1))


def _mean_se(values: Sequence[float], n_resamples: int, seed: int
             ) -> tuple[float, float]:
    arr = np.asarray(values, dtype=np.float64)
    mean = float(arr.mean())
    if arr.size < 2:
        return mean, 0.0
    return mean, bootstrap_se(arr, np.mean, n_resamples, seed)


def compute_iq(original_features: np.ndarray, edited_features: np.ndarray,
               n_resamples: int = 1000, seed: int = 0) -> tuple[float, float]:
    """Model-level image quality from the FID of paired feature sets.

    The bootstrap resamples query indices, applied to both sets together.
    """
    orig = np.atleast_2d(np.asarray(original_features, dtype=np.float64))
    edit = np.atleast_2d(np.asarray(edited_features, dtype=np.float64))
    if orig.shape != edit.shape:
        raise HarnessError(
            f"feature sets must pair up, got {orig.shape} vs {edit.shape}")
    value = iq_score(fid_between_sets(orig, edit))
    n = orig.shape[0]
    rng = np.random.default_rng(seed)
    stats = []
    for _ in range(n_resamples):
        idx = rng.integers(0, n, size=n)
        try:
            stats.append(iq_score(fid_between_sets(orig[idx], edit[idx])))
        except Exception:
            continue  # a degenerate resample (rank-deficient) is skipped
    se = float(np.std(stats, ddof=1)) if len(stats) >= 2 else 0.0
    return value, se


@dataclass(frozen=True)
class ModelSummary:
    """Per-model criterion means with bootstrap errors."""

    model_id: str
    criteria: dict[str, tuple[float, float]]
    per_type: dict[str, tuple[float, float]]
    per_class_group: dict[str, tuple[float, float]]
    n_samples: int
    n_errors: int


@dataclass(frozen=True)
class BenchmarkReport:
    """Aggregated benchmark results for a set of models."""

    models: dict[str, ModelSummary]
    metadata: dict[str, str] = field(default_factory=dict)


def _group_total(samples: Sequence[EvaluatedSample], iq: Optional[float],
                 weights: WeightConfig, n_resamples: int, seed: int
                 ) -> Optional[tuple[float, float]]:
    """Total score of a sample group: criterion means combined once.

    Criteria are averaged over the samples where each is defined, IQ joins
    as the model constant, and the total-score weights renormalize over the
    criteria present. The error bootstraps query indices.
    """
    total_weights = weights.group("total")

    def stat(indices) -> Optional[float]:
        criteria = {}
        for name in ("of", "bf", "oc", "bc"):
            values = [getattr(samples[i].scores, name) for i in indices
                      if getattr(samples[i].scores, name) is not None]
            if values:
                criteria[name] = float(np.mean(values))
        if iq is not None:
            criteria["iq"] = iq
        if not criteria:
            return None
        return combine_weighted(criteria, total_weights)

    value = stat(range(len(samples)))
    if value is None:
        return None
    if len(samples) < 2:
        return value, 0.0
    rng = np.random.default_rng(seed)
    stats = []
    for _ in range(n_resamples):
        resampled = stat(rng.integers(0, len(samples), size=len(samples)))
        if resampled is not None:
            stats.append(resampled)
    se = float(np.std(stats, ddof=1)) if len(stats) >= 2 else 0.0
    return value, se


def _class_group(sample: EvaluatedSample, table: dict[str, str]) -> str:
    if sample.edit_type in (EditType.BACKGROUND_CHANGE, EditType.STYLE_CHANGE):
        return "Whole Image"
    if sample.target_class is None:
        return "Other"
    return table.get(sample.target_class, "Other")


def aggregate(samples: Sequence[EvaluatedSample], weights: WeightConfig,
              iq_by_model: Optional[dict[str, tuple[float, float]]] = None,
              n_resamples: int = 1000, seed: int = 0,
              metadata: Optional[dict[str, str]] = None) -> BenchmarkReport:
    """Aggregate evaluated samples into per-model summaries and breakdowns.

    Criterion means run over the samples where the criterion is defined;
    totals renormalize the total-score weights over the criteria present.
    Errored samples are counted and excluded.
    """
    if not samples:
        raise HarnessError("no samples to aggregate")
    iq_by_model = iq_by_model or {}
    group_table = class_group_table()

    by_model: dict[str, list[EvaluatedSample]] = {}
    for sample in sorted(samples, key=lambda s: (s.model_id, s.query_id)):
        by_model.setdefault(sample.model_id, []).append(sample)

    models = {}
    for model_id in sorted(by_model):
        rows = by_model[model_id]
        errors = [s for s in rows if s.error is not None]
        ok = [s for s in rows if s.error is None]
        iq_pair = iq_by_model.get(model_id)
        iq = iq_pair[0] if iq_pair else None

        criteria: dict[str, tuple[float, float]] = {}
        for name in ("of", "bf", "oc", "bc"):
            values = [getattr(s.scores, name) for s in ok
                      if getattr(s.scores, name) is not None]
            if values:
                criteria[name] = _mean_se(values, n_resamples, seed)
        if iq_pair:
            criteria["iq"] = iq_pair
        total = _group_total(ok, iq, weights, n_resamples, seed)
        if total is not None:
            criteria["total"] = total

        per_type: dict[str, tuple[float, float]] = {}
        for etype in EditType:
            sub = [s for s in ok if s.edit_type is etype]
            pair = _group_total(sub, iq, weights, n_resamples, seed) \
                if sub else None
            if pair is not None:
                per_type[etype.value] = pair

        per_group: dict[str, tuple[float, float]] = {}
        for group in CLASS_GROUPS:
            sub = [s for s in ok if _class_group(s, group_table) == group]
            pair = _group_total(sub, iq, weights, n_resamples, seed) \
                if sub else None
            if pair is not None:
                per_group[group] = pair

        models[model_id] = ModelSummary(
            model_id=model_id, criteria=criteria, per_type=per_type,
            per_class_group=per_group, n_samples=len(ok), n_errors=len(errors))

    return BenchmarkReport(models=models, metadata=dict(metadata or {}))


def report_to_json(report: BenchmarkReport) -> dict:
    return {
        "metadata": dict(report.metadata),
        "models": {
            m: {
                "criteria": {k: list(v) for k, v in s.criteria.items()},
                "per_type": {k: list(v) for k, v in s.per_type.items()},
                "per_class_group": {k: list(v)
                                    for k, v in s.per_class_group.items()},
                "n_samples": s.n_samples,
                "n_errors": s.n_errors,
            }
            for m, s in report.models.items()
        },
    }


def report_from_json(data: dict) -> BenchmarkReport:
    models = {}
    for m, s in data.get("models", {}).items():
        models[m] = ModelSummary(
            model_id=m,
            criteria={k: tuple(v) for k, v in s.get("criteria", {}).items()},
            per_type={k: tuple(v) for k, v in s.get("per_type", {}).items()},
            per_class_group={k: tuple(v)
                             for k, v in s.get("per_class_group", {}).items()},
            n_samples=int(s.get("n_samples", 0)),
            n_errors=int(s.get("n_errors", 0)),
        )
    return BenchmarkReport(models=models, metadata=data.get("metadata", {}))


@dataclass(frozen=True)
class SweepSeries:
    """Plot-ready criterion-versus-parameter series for one model."""

    model_id: str
    parameter: str
    values: tuple[float, ...]
    series: dict[str, tuple[float, ...]]


def sweep_series(reports: Sequence[tuple[float, BenchmarkReport]],
                 parameter: str) -> list[SweepSeries]:
    """Turn per-setting reports into criterion-vs-parameter series."""
    if not reports:
        raise HarnessError("no sweep settings")
    ordered = sorted(reports, key=lambda p: p[0])
    values = tuple(v for v, _ in ordered)
    model_ids = sorted({m for _, r in ordered for m in r.models})
    out = []
    for model_id in model_ids:
        series: dict[str, list[float]] = {}
        for _, report in ordered:
            summary = report.models.get(model_id)
            for name in ("of", "bf", "oc", "bc", "iq", "total"):
                if summary is not None and name in summary.criteria:
                    series.setdefault(name, []).append(summary.criteria[name][0])
        out.append(SweepSeries(
            model_id=model_id, parameter=parameter, values=values,
            series={k: tuple(v) for k, v in series.items()
                    if len(v) == len(values)}))
    return out
