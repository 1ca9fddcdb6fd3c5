"""Human-preference alignment: winning rates and weight fitting.

Weights are fitted by exhaustive grid search over the probability simplex,
maximizing the Pearson correlation between human and metric winning rates.
The search streams candidate blocks and evaluates them vectorized, so the
full 5-dimensional step-0.01 grid (4.6M candidates) stays tractable.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Iterator, Optional, Sequence

import numpy as np

from .records import PreferenceRecord

log = logging.getLogger(__name__)


class AlignmentError(ValueError):
    """Raised on invalid alignment inputs (vote counts, degenerate vectors)."""


@dataclass(frozen=True)
class WinningRates:
    """Per-model winning rates for one criterion."""

    criterion: str
    rates: dict[str, float]

    def __post_init__(self):
        object.__setattr__(self, "rates", dict(self.rates))
        for model, rate in self.rates.items():
            if not 0.0 <= rate <= 1.0:
                raise AlignmentError(f"rate {rate} for {model!r} outside [0,1]")

    def vector(self, models: Sequence[str]) -> np.ndarray:
        return np.array([self.rates[m] for m in models], dtype=np.float64)


def majority_vote(record: PreferenceRecord) -> str:
    """The choice with at least two of the three votes."""
    if len(record.votes) != 3:
        raise AlignmentError(f"question {record.question_id}: needs exactly 3 votes")
    a = sum(1 for v in record.votes if v == "A")
    return "A" if a >= 2 else "B"


def human_winning_rates(records: Sequence[PreferenceRecord],
                        criterion: str) -> WinningRates:
    """Majority-vote winning rate per model over one criterion's questions."""
    wins: dict[str, float] = {}
    appearances: dict[str, int] = {}
    for record in records:
        if record.criterion != criterion:
            raise AlignmentError(
                f"question {record.question_id} is for criterion "
                f"{record.criterion!r}, not {criterion!r}")
        winner = record.model_a if majority_vote(record) == "A" else record.model_b
        for model in (record.model_a, record.model_b):
            appearances[model] = appearances.get(model, 0) + 1
            wins.setdefault(model, 0.0)
        wins[winner] += 1.0
    rates = {}
    for model, n in appearances.items():
        if n == 0:
            log.warning("model %s has no appearances; excluded", model)
            continue
        rates[model] = wins[model] / n
    return WinningRates(criterion=criterion, rates=rates)


@dataclass(frozen=True)
class QuestionComponents:
    """One pairwise question with both samples' metric components."""

    question_id: str
    model_a: str
    model_b: str
    components_a: dict[str, float]
    components_b: dict[str, float]


def metric_winning_rates(questions: Sequence[QuestionComponents],
                         weights: dict[str, float],
                         criterion: str) -> WinningRates:
    """Winning rates under a weighted criterion score; exact ties split 0.5.

    Questions missing every weighted component (or with asymmetric
    component sets) are dropped with a log line.
    """
    wins: dict[str, float] = {}
    appearances: dict[str, int] = {}
    for q in questions:
        keys_a = set(q.components_a) & set(weights)
        keys_b = set(q.components_b) & set(weights)
        if not keys_a or keys_a != keys_b:
            log.warning("question %s missing weighted components; dropped",
                        q.question_id)
            continue
        score_a = _weighted_score(q.components_a, weights)
        score_b = _weighted_score(q.components_b, weights)
        for model in (q.model_a, q.model_b):
            appearances[model] = appearances.get(model, 0) + 1
            wins.setdefault(model, 0.0)
        if score_a > score_b:
            wins[q.model_a] += 1.0
        elif score_b > score_a:
            wins[q.model_b] += 1.0
        else:
            wins[q.model_a] += 0.5
            wins[q.model_b] += 0.5
    rates = {m: wins[m] / n for m, n in appearances.items() if n > 0}
    return WinningRates(criterion=criterion, rates=rates)


def _weighted_score(components: dict[str, float], weights: dict[str, float]) -> float:
    """Convex score over the components the weight group covers.

    Weights renormalize over the present keys, matching the task workflows;
    a zero present-weight mass scores 0 (a tie when it happens to both
    samples of a question).
    """
    present = {k: v for k, v in components.items() if k in weights}
    if not present:
        raise AlignmentError(f"no weighted components among {sorted(components)}")
    wsum = sum(weights[k] for k in present)
    if wsum <= 0:
        return 0.0
    return sum(weights[k] * present[k] for k in sorted(present)) / wsum


# ---------------------------------------------------------------------------
# Simplex grid
# ---------------------------------------------------------------------------

def _grid_steps(step: float) -> int:
    k = round(1.0 / step)
    if abs(k * step - 1.0) > 1e-12:
        raise AlignmentError(f"step {step} does not divide 1")
    return k


def simplex_grid_count(dim: int, step: float) -> int:
    """Number of grid vectors: C(1/step + dim - 1, dim - 1)."""
    k = _grid_steps(step)
    return math.comb(k + dim - 1, dim - 1)


def _composition_array(k: int, dim: int) -> np.ndarray:
    """All compositions of k into dim nonnegative parts, lexicographic order."""
    if dim == 1:
        return np.array([[k]], dtype=np.int64)
    if dim == 2:
        first = np.arange(k + 1, dtype=np.int64)
        return np.stack([first, k - first], axis=1)
    blocks = []
    for first in range(k + 1):
        rest = _composition_array(k - first, dim - 1)
        col = np.full((rest.shape[0], 1), first, dtype=np.int64)
        blocks.append(np.hstack([col, rest]))
    return np.vstack(blocks)


def simplex_grid_blocks(dim: int, step: float) -> Iterator[np.ndarray]:
    """Stream the grid as float blocks (each row sums to 1), lex order."""
    if dim < 1:
        raise AlignmentError("dim must be at least 1")
    k = _grid_steps(step)
    if dim == 1:
        yield np.array([[1.0]])
        return
    if dim <= 3:
        yield _composition_array(k, dim).astype(np.float64) / k
        return
    for first in range(k + 1):
        rest = _composition_array(k - first, dim - 1)
        col = np.full((rest.shape[0], 1), first, dtype=np.int64)
        yield np.hstack([col, rest]).astype(np.float64) / k


def simplex_grid(dim: int, step: float) -> Iterator[tuple[float, ...]]:
    """Enumerate all weight vectors on the step grid summing to 1.

    Streams lexicographically; never materializes the full grid for high
    dimensions.
    """
    for block in simplex_grid_blocks(dim, step):
        for row in block:
            yield tuple(row)


# ---------------------------------------------------------------------------
# Correlation kernels
# ---------------------------------------------------------------------------

def _check_pair(x, y, min_len: int = 3) -> tuple[np.ndarray, np.ndarray]:
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise AlignmentError(f"need equal-length vectors, got {x.shape}, {y.shape}")
    if x.size < min_len:
        raise AlignmentError(f"need at least {min_len} points, got {x.size}")
    return x, y


def pearson(x, y) -> float:
    """Pearson correlation; undefined (error) for constant vectors."""
    x, y = _check_pair(x, y)
    xc = x - x.mean()
    yc = y - y.mean()
    denom = np.sqrt((xc ** 2).sum() * (yc ** 2).sum())
    if denom == 0.0:
        raise AlignmentError("pearson undefined for constant vectors")
    return float(np.dot(xc, yc) / denom)


def _average_ranks(x: np.ndarray) -> np.ndarray:
    order = np.argsort(x, kind="stable")
    ranks = np.empty(x.size, dtype=np.float64)
    i = 0
    while i < x.size:
        j = i
        while j + 1 < x.size and x[order[j + 1]] == x[order[i]]:
            j += 1
        ranks[order[i:j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    return ranks


def spearman(x, y) -> float:
    """Spearman's rho: Pearson correlation on average ranks."""
    x, y = _check_pair(x, y)
    return pearson(_average_ranks(x), _average_ranks(y))


def kendall(x, y) -> float:
    """Kendall's tau-b with tie corrections."""
    x, y = _check_pair(x, y)
    n = x.size
    concordant = discordant = 0
    for i in range(n - 1):
        dx = x[i + 1:] - x[i]
        dy = y[i + 1:] - y[i]
        s = np.sign(dx) * np.sign(dy)
        concordant += int((s > 0).sum())
        discordant += int((s < 0).sum())
    n0 = n * (n - 1) // 2
    n1 = sum(c * (c - 1) // 2 for c in _tie_counts(x))
    n2 = sum(c * (c - 1) // 2 for c in _tie_counts(y))
    denom = math.sqrt((n0 - n1) * (n0 - n2))
    if denom == 0.0:
        raise AlignmentError("kendall tau-b undefined for constant vectors")
    return float((concordant - discordant) / denom)


def _tie_counts(x: np.ndarray) -> list[int]:
    _, counts = np.unique(x, return_counts=True)
    return [int(c) for c in counts]


# ---------------------------------------------------------------------------
# Weight fitting
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class FitResult:
    """Outcome of one grid-search fit."""

    criterion: str
    keys: tuple[str, ...]
    weights: dict[str, float]
    correlation: float
    degenerate: bool
    candidates: int
    human_rates: dict[str, float] = field(default_factory=dict)
    metric_rates: dict[str, float] = field(default_factory=dict)


def _prepare_matrices(questions: Sequence[QuestionComponents],
                      keys: Sequence[str], models: Sequence[str]):
    """Difference matrix and model-incidence matrices for vectorized rates.

    Keys absent from both samples of a question contribute zero difference;
    renormalizing over present keys never changes a question's winner, so
    this reproduces the per-question renormalized comparison exactly.
    """
    model_index = {m: i for i, m in enumerate(models)}
    rows_a, rows_b, diffs = [], [], []
    for q in questions:
        row, usable, any_present = [], True, False
        for k in keys:
            in_a, in_b = k in q.components_a, k in q.components_b
            if in_a != in_b:
                usable = False
                break
            if in_a:
                any_present = True
                row.append(q.components_a[k] - q.components_b[k])
            else:
                row.append(0.0)
        if not usable or not any_present:
            log.warning("question %s missing weighted components; dropped",
                        q.question_id)
            continue
        rows_a.append(model_index[q.model_a])
        rows_b.append(model_index[q.model_b])
        diffs.append(row)
    if not diffs:
        raise AlignmentError("no usable questions for fitting")
    nq = len(diffs)
    ind_a = np.zeros((nq, len(models)))
    ind_b = np.zeros((nq, len(models)))
    ind_a[np.arange(nq), rows_a] = 1.0
    ind_b[np.arange(nq), rows_b] = 1.0
    return np.array(diffs), ind_a, ind_b


def _rates_for_candidates(diff: np.ndarray, ind_a: np.ndarray, ind_b: np.ndarray,
                          candidates: np.ndarray) -> np.ndarray:
    """Winning-rate matrix (models x candidates) for a candidate block."""
    scores = diff @ candidates.T  # questions x candidates
    wins_a = (scores > 0).astype(np.float64) + 0.5 * (scores == 0)
    wins = ind_a.T @ wins_a + ind_b.T @ (1.0 - wins_a)
    appearances = (ind_a.sum(axis=0) + ind_b.sum(axis=0))[:, None]
    return wins / appearances


def _pearson_columns(u: np.ndarray, rates: np.ndarray) -> np.ndarray:
    """Pearson of each rates column against u; NaN where undefined."""
    uc = u - u.mean()
    un = np.sqrt((uc ** 2).sum())
    rc = rates - rates.mean(axis=0, keepdims=True)
    rn = np.sqrt((rc ** 2).sum(axis=0))
    with np.errstate(invalid="ignore", divide="ignore"):
        corr = (uc @ rc) / (un * rn)
    corr[rn == 0.0] = np.nan
    if un == 0.0:
        corr[:] = np.nan
    return corr


def fit_weights(criterion: str, questions: Sequence[QuestionComponents],
                human_records: Sequence[PreferenceRecord],
                step: float = 0.01,
                keys: Optional[Sequence[str]] = None,
                coarse_step: Optional[float] = None) -> FitResult:
    """Exhaustive simplex search maximizing Pearson(u, v).

    Ties break to the lexicographically smallest weight vector. Degenerate
    data (correlation undefined for every candidate) falls back to uniform
    weights with the degeneracy reported.

    ``coarse_step`` enables the optional two-stage search: a coarse pass
    followed by a fine pass confined to the coarse optimum's neighborhood.
    Off by default; the single full-grid pass is the reference procedure.
    """
    if keys is None:
        key_set = set()
        for q in questions:
            key_set.update(q.components_a)
        keys = tuple(sorted(key_set))
    else:
        keys = tuple(keys)
    if not keys:
        raise AlignmentError("no component keys to fit")

    human = human_winning_rates(human_records, criterion)
    models = sorted(human.rates)
    u = human.vector(models)

    diff, ind_a, ind_b = _prepare_matrices(questions, keys, models)

    if len(keys) == 1:
        weights = {keys[0]: 1.0}
        v = metric_winning_rates(questions, weights, criterion)
        try:
            corr = pearson(u, v.vector(models))
            degenerate = False
        except AlignmentError:
            corr = float("nan")
            degenerate = True
        return FitResult(criterion=criterion, keys=keys, weights=weights,
                         correlation=corr, degenerate=degenerate, candidates=1,
                         human_rates=dict(zip(models, u)),
                         metric_rates=v.rates)

    center: Optional[np.ndarray] = None
    if coarse_step is not None and coarse_step > step:
        coarse = fit_weights(criterion, questions, human_records,
                             step=coarse_step, keys=keys)
        if not coarse.degenerate:
            center = np.array([coarse.weights[k] for k in keys])

    best_corr = -np.inf
    best_vec: Optional[np.ndarray] = None
    n_candidates = 0
    for block in simplex_grid_blocks(len(keys), step):
        if center is not None:
            near = np.abs(block - center).max(axis=1) <= coarse_step + 1e-9
            block = block[near]
            if block.shape[0] == 0:
                continue
        n_candidates += block.shape[0]
        rates = _rates_for_candidates(diff, ind_a, ind_b, block)
        corr = _pearson_columns(u, rates)
        finite = np.where(np.isfinite(corr))[0]
        if finite.size == 0:
            continue
        local_best = finite[np.argmax(corr[finite])]
        # strict > keeps the earliest (lexicographically smallest) argmax
        if corr[local_best] > best_corr:
            best_corr = float(corr[local_best])
            best_vec = block[local_best].copy()

    if best_vec is None:
        log.warning("fit for %s degenerate: correlation undefined everywhere; "
                    "returning uniform weights", criterion)
        uniform = np.full(len(keys), 1.0 / len(keys))
        weights = dict(zip(keys, uniform))
        v = metric_winning_rates(questions, weights, criterion)
        return FitResult(criterion=criterion, keys=keys, weights=weights,
                         correlation=float("nan"), degenerate=True,
                         candidates=n_candidates,
                         human_rates=dict(zip(models, u)), metric_rates=v.rates)

    weights = {k: float(w) for k, w in zip(keys, best_vec)}
    v = metric_winning_rates(questions, weights, criterion)
    return FitResult(criterion=criterion, keys=keys, weights=weights,
                     correlation=best_corr, degenerate=False,
                     candidates=n_candidates,
                     human_rates=dict(zip(models, u)), metric_rates=v.rates)


def fit_total_weights(per_sample_criteria: Sequence[QuestionComponents],
                      overall_records: Sequence[PreferenceRecord],
                      iq_by_model: dict[str, float],
                      step: float = 0.01,
                      include_iq: bool = True) -> FitResult:
    """Fit the total-score weights over the five main criteria.

    The image-quality criterion enters each question as the model's
    constant; ``include_iq=False`` drops it from the search.
    """
    questions = []
    for q in per_sample_criteria:
        comp_a = dict(q.components_a)
        comp_b = dict(q.components_b)
        if include_iq:
            comp_a["iq"] = iq_by_model.get(q.model_a, 0.0)
            comp_b["iq"] = iq_by_model.get(q.model_b, 0.0)
        questions.append(QuestionComponents(
            question_id=q.question_id, model_a=q.model_a, model_b=q.model_b,
            components_a=comp_a, components_b=comp_b))
    keys = set()
    for q in questions:
        keys.update(q.components_a)
    return fit_weights("total", questions, overall_records, step,
                       keys=sorted(keys))
