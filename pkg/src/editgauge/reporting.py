"""Report rendering: text tables, CSV files, and matplotlib figures."""

from __future__ import annotations

import csv
import logging
from pathlib import Path
from typing import Optional, Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .harness import CLASS_GROUPS, BenchmarkReport, SweepSeries
from .records import EditType

log = logging.getLogger(__name__)

CRITERION_LABELS = {
    "of": "Object Fidelity",
    "bf": "Background Fidelity",
    "oc": "Object Consistency",
    "bc": "Background Consistency",
    "iq": "Image Quality",
    "total": "Total Score",
}

TYPE_LABELS = {
    "addition": "Object Addition",
    "removal": "Object Removal",
    "replacement": "Object Replacement",
    "resizing": "Object Resizing",
    "attribute_change": "Attribute Change",
    "background_change": "Background Change",
    "style_change": "Style Change",
}


def format_mean_se(mean: float, se: float) -> str:
    return f"{mean:.4f} ± {se:.4f}"


def _render_table(title: str, rows: list[tuple[str, dict]],
                  columns: Sequence[str], labels: dict[str, str]) -> str:
    header = ["Model"] + [labels.get(c, c) for c in columns]
    body = []
    for model, cells in rows:
        body.append([model] + [
            format_mean_se(*cells[c]) if c in cells else "-" for c in columns
        ])
    widths = [max(len(r[i]) for r in [header] + body) for i in range(len(header))]
    lines = [title]
    lines.append("  ".join(h.ljust(w) for h, w in zip(header, widths)))
    lines.append("  ".join("-" * w for w in widths))
    for row in body:
        lines.append("  ".join(c.ljust(w) for c, w in zip(row, widths)))
    return "\n".join(lines) + "\n"


def _write_csv(path: Path, header: Sequence[str], rows: Sequence[Sequence]):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)


def render_report(report: BenchmarkReport, outdir,
                  skip_plots: bool = False) -> list[str]:
    """Write criterion/type/class tables (text + CSV) and summary figures.

    Returns the list of files written, relative to ``outdir``.
    """
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    written: list[str] = []
    models = sorted(report.models)

    criteria_cols = ["of", "bf", "oc", "bc", "iq", "total"]
    rows = [(m, report.models[m].criteria) for m in models]
    text = _render_table("Benchmark results across score criteria",
                         rows, criteria_cols, CRITERION_LABELS)

    type_cols = [t.value for t in EditType]
    type_rows = [(m, report.models[m].per_type) for m in models]
    text += "\n" + _render_table("Benchmark results across edit types",
                                 type_rows, type_cols, TYPE_LABELS)

    group_rows = [(m, report.models[m].per_class_group) for m in models]
    present_groups = [g for g in CLASS_GROUPS
                      if any(g in cells for _, cells in group_rows)]
    omitted = [g for g in CLASS_GROUPS if g not in present_groups]
    text += "\n" + _render_table("Benchmark results across target classes",
                                 group_rows, present_groups, {})
    if omitted:
        text += f"(groups with no samples omitted: {', '.join(omitted)})\n"

    (outdir / "report.txt").write_text(text, encoding="utf-8")
    written.append("report.txt")

    for name, cols, getter, labels in (
            ("criteria.csv", criteria_cols,
             lambda s: s.criteria, CRITERION_LABELS),
            ("per_type.csv", type_cols, lambda s: s.per_type, TYPE_LABELS),
            ("per_class.csv", present_groups, lambda s: s.per_class_group, {})):
        csv_rows = []
        for m in models:
            cells = getter(report.models[m])
            for c in cols:
                if c in cells:
                    mean, se = cells[c]
                    csv_rows.append([m, c, f"{mean:.4f}", f"{se:.4f}"])
        _write_csv(outdir / name, ["model", "column", "mean", "se"], csv_rows)
        written.append(name)

    if not skip_plots:
        written.append(_criteria_figure(report, outdir / "criteria.png"))
    return written


def _criteria_figure(report: BenchmarkReport, path: Path) -> str:
    models = sorted(report.models)
    criteria = ["of", "bf", "oc", "bc", "iq", "total"]
    fig, ax = plt.subplots(figsize=(8, 4.5))
    x = np.arange(len(criteria), dtype=float)
    width = 0.8 / max(1, len(models))
    for i, model in enumerate(models):
        cells = report.models[model].criteria
        means = [cells[c][0] if c in cells else 0.0 for c in criteria]
        errs = [cells[c][1] if c in cells else 0.0 for c in criteria]
        ax.bar(x + i * width, means, width=width, yerr=errs, capsize=2,
               label=model)
    ax.set_xticks(x + 0.4 - width / 2)
    ax.set_xticklabels([CRITERION_LABELS[c] for c in criteria],
                       rotation=20, ha="right")
    ax.set_ylim(0, 1.05)
    ax.set_ylabel("score")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path.name


def render_sweep(series_list: Sequence[SweepSeries], outdir,
                 skip_plots: bool = False) -> list[str]:
    """Write per-setting series as CSV plus the trade-off figure."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    written = []
    rows = []
    for series in series_list:
        for name, values in sorted(series.series.items()):
            for x, y in zip(series.values, values):
                rows.append([series.model_id, series.parameter, name,
                             f"{x:g}", f"{y:.4f}"])
    _write_csv(outdir / "sweep.csv",
               ["model", "parameter", "criterion", "value", "score"], rows)
    written.append("sweep.csv")

    if not skip_plots and series_list:
        fig, ax = plt.subplots(figsize=(7, 4.5))
        for series in series_list:
            for name, values in sorted(series.series.items()):
                ax.plot(series.values, values, marker="o",
                        label=f"{series.model_id}:{name}")
        ax.set_xlabel(series_list[0].parameter)
        ax.set_ylabel("score")
        ax.set_ylim(0, 1.05)
        ax.legend(fontsize=7)
        fig.tight_layout()
        fig.savefig(outdir / "sweep.png", dpi=120)
        plt.close(fig)
        written.append("sweep.png")
    return written


def render_alignment_scatter(human_rates: dict[str, float],
                             metric_rates: dict[str, float],
                             criterion: str, path,
                             correlation: Optional[float] = None) -> str:
    """Scatter of human vs metric winning rates with a least-squares line."""
    path = Path(path)
    models = sorted(set(human_rates) & set(metric_rates))
    u = np.array([human_rates[m] for m in models])
    v = np.array([metric_rates[m] for m in models])
    fig, ax = plt.subplots(figsize=(4.5, 4.5))
    ax.scatter(v, u, color="tab:blue")
    for m, xi, yi in zip(models, v, u):
        ax.annotate(m, (xi, yi), fontsize=7,
                    textcoords="offset points", xytext=(3, 3))
    if len(models) >= 2 and np.ptp(v) > 0:
        slope, intercept = np.polyfit(v, u, 1)
        xs = np.linspace(v.min(), v.max(), 10)
        ax.plot(xs, slope * xs + intercept, color="tab:red", linewidth=1)
    label = f"r = {correlation:.4f}" if correlation is not None \
        and np.isfinite(correlation) else "r undefined"
    ax.set_title(f"{CRITERION_LABELS.get(criterion, criterion)} ({label})")
    ax.set_xlabel("metric winning rate")
    ax.set_ylabel("human winning rate")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path.name
