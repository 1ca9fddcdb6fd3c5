"""Command-line interface: filter, gen-queries, gen-captions, evaluate,
fit-weights, report, sweep, plus demo-corpus for the shipped synthetic set."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

import editgauge

from . import alignment, harness, reporting
from .backends import load_backend_set, resolve_adapter
from .captions import TemplateLibrary, TemplateLlm, generate_description_pair, \
    instantiate_instruction
from .config import RunConfig, detector_classes, load_config
from .filtering import TrimRejection, filter_image, trim_and_resize
from .queries import balance_pool, build_stats, generate_for_image
from .rasters import RasterError, read_raster, write_raster
from .records import (EditQuery, EditType, EvaluatedSample, FilterReport,
                      ImageRecord, MetricVector, CriterionScores,
                      PreferenceRecord, WeightConfig, edit_query_from_json,
                      edit_query_to_json, image_record_to_json, load_corpus,
                      load_records, load_weights, save_records, save_weights)
from .workflows import EvaluationContext, criterion_components, evaluate_sample

log = logging.getLogger("editgauge")


def _write_manifest(outdir: Path, args: argparse.Namespace, config: RunConfig,
                    backend_names=None):
    outdir.mkdir(parents=True, exist_ok=True)
    manifest = {
        "version": editgauge.__version__,
        "command": args.command,
        "config_hash": config.config_hash(),
        "seed": getattr(args, "seed", None),
        "backends": dict(backend_names or {}),
    }
    (outdir / "manifest.json").write_text(
        json.dumps(manifest, sort_keys=True, indent=1) + "\n", encoding="utf-8")


def _load_prepared(corpus_dir) -> tuple[dict[str, ImageRecord], Path]:
    records, errors = load_corpus(corpus_dir)
    for err in errors:
        log.warning("corpus: %s: %s", err.path, err.message)
    return {r.image_id: r for r in records}, Path(corpus_dir)


def cmd_filter(args) -> int:
    config = load_config(args.config)
    records, errors = load_corpus(args.corpus, detector_classes())
    for err in errors:
        log.warning("rejected record %s: %s", err.image_id or err.path, err.message)
    registry = json.loads(Path(args.backends).read_text(encoding="utf-8"))
    segmenter = resolve_adapter(args.seg_backend, registry)
    vqa = resolve_adapter(args.vqa_backend, registry)

    prepared_dir = Path(args.prepared_dir) if args.prepared_dir else None
    reports = []
    for record in records:
        raster = None
        raster_path = Path(args.corpus) / f"{record.image_id}.png"
        if raster_path.exists():
            raster = read_raster(raster_path)
        report = filter_image(record, segmenter, vqa, raster, config)
        metadata = {}
        if report.kept and prepared_dir is not None:
            try:
                prepared, _, praster = trim_and_resize(
                    record, report.kept, raster, config.output_size)
            except TrimRejection as exc:
                log.warning("%s", exc)
                report = FilterReport(
                    image_id=record.image_id, kept=(),
                    rejections=report.rejections, metadata={"trim": "rejected"})
                reports.append(report)
                continue
            metadata["resample"] = config.resample_kernel
            prepared_dir.mkdir(parents=True, exist_ok=True)
            (prepared_dir / f"{record.image_id}.json").write_text(
                json.dumps(image_record_to_json(prepared), sort_keys=True,
                           indent=1),
                encoding="utf-8")
            if praster is not None:
                write_raster(prepared_dir / f"{record.image_id}.png", praster)
        reports.append(FilterReport(image_id=report.image_id, kept=report.kept,
                                    rejections=report.rejections,
                                    metadata=metadata))
    save_records(reports, args.out)
    log.info("filtered %d images -> %s", len(reports), args.out)
    return 0


def cmd_gen_queries(args) -> int:
    config = load_config(args.config)
    prepared, corpus_dir = _load_prepared(args.corpus)
    reports = load_records(args.filter_report, FilterReport)
    kept = {r.image_id: r.kept for r in reports}

    embedder = None
    if args.backends:
        registry = json.loads(Path(args.backends).read_text(encoding="utf-8"))
        embedder = resolve_adapter(args.embed_backend, registry)

    pool: list[EditQuery] = []
    stats = build_stats(sorted(prepared.values(), key=lambda r: r.image_id))
    for image_id in sorted(prepared):
        ids = kept.get(image_id, ())
        if not ids:
            continue
        raster_path = corpus_dir / f"{image_id}.png"
        raster = read_raster(raster_path) if raster_path.exists() else None
        pool.extend(generate_for_image(prepared[image_id], ids, stats, raster,
                                       embedder, args.seed, config))

    per_type = per_class = None
    if args.balance_config:
        balance = json.loads(Path(args.balance_config).read_text(encoding="utf-8"))
        per_type = balance.get("per_type")
        per_class = balance.get("per_class")
    rng = np.random.default_rng(args.seed)
    queries, report = balance_pool(pool, list(prepared.values()), rng,
                                   per_type=per_type, per_class=per_class)
    save_records(queries, args.out)
    balance_out = Path(str(args.out) + ".balance.json")
    balance_out.write_text(json.dumps({
        "type_histogram": report.type_histogram,
        "class_histogram": report.class_histogram,
        "shortfalls": report.shortfalls,
    }, sort_keys=True, indent=1) + "\n", encoding="utf-8")
    log.info("generated %d queries (pool %d) -> %s", len(queries), len(pool),
             args.out)
    return 0


def cmd_gen_captions(args) -> int:
    config = load_config(args.config)
    prepared, _ = _load_prepared(args.corpus)
    queries = load_records(args.queries, EditQuery)
    kept = None
    if args.filter_report:
        reports = load_records(args.filter_report, FilterReport)
        kept = {r.image_id: r.kept for r in reports}

    if args.backends and args.llm_backend:
        registry = json.loads(Path(args.backends).read_text(encoding="utf-8"))
        llm = resolve_adapter(args.llm_backend, registry)
    else:
        llm = TemplateLlm()
    templates = TemplateLibrary(args.templates) if args.templates else None

    out = []
    flagged = 0
    for query in queries:
        record = prepared[query.image_id]
        object_class = None
        if query.target_object_id is not None:
            object_class = record.object_by_id(query.target_object_id).class_name
        instruction = instantiate_instruction(query, object_class, templates)
        fields = edit_query_to_json(query)
        fields["instruction"] = instruction
        if not query.instruction_only and query.edit_type is not EditType.REMOVAL:
            result = generate_description_pair(
                query, record, llm,
                kept_ids=(kept or {}).get(query.image_id),
                templates=templates, config=config)
            fields["caption_original"] = result.caption_original
            fields["caption_edited"] = result.caption_edited
            if result.needs_manual_fix:
                flagged += 1
                log.warning("query %s needs manual caption fix: %s",
                            query.query_id, "; ".join(result.reasons))
        out.append(edit_query_from_json(fields))
    save_records(out, args.out)
    log.info("captioned %d queries (%d flagged) -> %s", len(out), flagged, args.out)
    return 0


def _evaluate_one(query: EditQuery, prepared: dict[str, ImageRecord],
                  corpus_dir: Path, edited_dir: Path, backends, weights,
                  kept: dict, model: str, config: RunConfig) -> EvaluatedSample:
    record = prepared[query.image_id]
    target_class = None
    if query.target_object_id is not None:
        target_class = record.object_by_id(query.target_object_id).class_name
    edited_path = edited_dir / f"{query.query_id}.png"
    try:
        original = read_raster(corpus_dir / f"{query.image_id}.png")
        edited = read_raster(edited_path)
    except RasterError as exc:
        return EvaluatedSample(
            model_id=model, query_id=query.query_id, edit_type=query.edit_type,
            target_class=target_class, vector=MetricVector(),
            scores=CriterionScores(), error=str(exc))
    ctx = EvaluationContext(query=query, record=record, original=original,
                            edited=edited, backends=backends, weights=weights,
                            kept_ids=tuple(kept.get(query.image_id, ())),
                            config=config)
    return evaluate_sample(ctx, model_id=model)


def cmd_evaluate(args) -> int:
    config = load_config(args.config)
    prepared, corpus_dir = _load_prepared(args.corpus)
    queries = load_records(args.queries, EditQuery)
    backends = load_backend_set(args.backends)
    weights = load_weights(args.weights)
    kept = {}
    if args.filter_report:
        reports = load_records(args.filter_report, FilterReport)
        kept = {r.image_id: r.kept for r in reports}
    edited_dir = Path(args.edited_dir)

    def run(query: EditQuery) -> EvaluatedSample:
        return _evaluate_one(query, prepared, corpus_dir, edited_dir, backends,
                             weights, kept, args.model, config)

    queries = sorted(queries, key=lambda q: q.query_id)
    if args.jobs > 1:
        with ThreadPoolExecutor(max_workers=args.jobs) as pool:
            samples = list(pool.map(run, queries))
    else:
        samples = [run(q) for q in queries]
    save_records(samples, args.out)

    feats_orig, feats_edit, qids = [], [], []
    extractor = backends.feature_extractor
    for query in queries:
        edited_path = edited_dir / f"{query.query_id}.png"
        orig_path = corpus_dir / f"{query.image_id}.png"
        if not edited_path.exists() or not orig_path.exists():
            continue
        feats_orig.append(extractor.features(read_raster(orig_path)))
        feats_edit.append(extractor.features(read_raster(edited_path)))
        qids.append(query.query_id)
    if feats_orig:
        np.savez(str(args.out) + ".features.npz",
                 original=np.array(feats_orig), edited=np.array(feats_edit),
                 query_ids=np.array(qids))
    n_err = sum(1 for s in samples if s.error)
    log.info("evaluated %d samples (%d errors) -> %s", len(samples), n_err,
             args.out)
    return 0


def _load_samples(paths) -> list[EvaluatedSample]:
    samples = []
    for path in paths:
        samples.extend(load_records(path, EvaluatedSample))
    return samples


def _iq_from_features(metrics_paths, n_resamples: int, seed: int,
                      samples) -> dict[str, tuple[float, float]]:
    by_model = {}
    model_by_path = {}
    for path in metrics_paths:
        rows = load_records(path, EvaluatedSample)
        if rows:
            model_by_path[path] = rows[0].model_id
    for path, model in model_by_path.items():
        feat_path = Path(str(path) + ".features.npz")
        if not feat_path.exists():
            continue
        data = np.load(feat_path)
        try:
            by_model[model] = harness.compute_iq(
                data["original"], data["edited"], n_resamples, seed)
        except Exception as exc:
            log.warning("IQ for %s failed: %s", model, exc)
    return by_model


def cmd_report(args) -> int:
    config = load_config(args.config)
    samples = _load_samples(args.metrics)
    weights = load_weights(args.weights)
    outdir = Path(args.out)
    iq = _iq_from_features(args.metrics, config.bootstrap_resamples, args.seed,
                           samples)
    report = harness.aggregate(samples, weights, iq_by_model=iq,
                               n_resamples=config.bootstrap_resamples,
                               seed=args.seed,
                               metadata={"config_hash": config.config_hash(),
                                         "seed": str(args.seed)})
    written = reporting.render_report(report, outdir, skip_plots=args.no_plots)
    (outdir / "report.json").write_text(
        json.dumps(harness.report_to_json(report), sort_keys=True, indent=1)
        + "\n", encoding="utf-8")
    written.append("report.json")

    if args.votes:
        votes = load_records(args.votes, PreferenceRecord)
        written.extend(_correlation_section(samples, votes, weights, iq, outdir,
                                            args.no_plots))
    _write_manifest(outdir, args, config)
    log.info("report written to %s (%s)", outdir, ", ".join(written))
    return 0


def _correlation_section(samples, votes, weights, iq, outdir: Path,
                         no_plots: bool) -> list[str]:
    """Human-vs-metric winning-rate correlations per voted criterion."""
    by_key = {(s.model_id, s.query_id): s for s in samples}
    rows = []
    written = []
    for criterion in ("of", "bf", "oc", "bc", "total"):
        records = [v for v in votes if v.criterion == criterion]
        if not records:
            continue
        questions = []
        for vote in records:
            a = by_key.get((vote.model_a, vote.query_id))
            b = by_key.get((vote.model_b, vote.query_id))
            if a is None or b is None:
                continue
            comp_a = _score_components(a, criterion, iq, weights)
            comp_b = _score_components(b, criterion, iq, weights)
            if comp_a is None or comp_b is None:
                continue
            questions.append(alignment.QuestionComponents(
                question_id=vote.question_id, model_a=vote.model_a,
                model_b=vote.model_b, components_a=comp_a, components_b=comp_b))
        if not questions:
            continue
        human = alignment.human_winning_rates(records, criterion)
        metric = alignment.metric_winning_rates(
            questions, {"score": 1.0}, criterion)
        models = sorted(set(human.rates) & set(metric.rates))
        if len(models) < 3:
            continue
        u = human.vector(models)
        v = metric.vector(models)
        try:
            pear = alignment.pearson(u, v)
            rho = alignment.spearman(u, v)
            tau = alignment.kendall(u, v)
        except alignment.AlignmentError as exc:
            log.warning("correlation for %s undefined: %s", criterion, exc)
            continue
        rows.append([criterion, f"{pear:.4f}", f"{rho:.4f}", f"{tau:.4f}"])
        if not no_plots:
            written.append(reporting.render_alignment_scatter(
                human.rates, metric.rates, criterion,
                outdir / f"alignment_{criterion}.png", pear))
    if rows:
        import csv

        with open(outdir / "correlations.csv", "w", newline="",
                  encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["criterion", "pearson", "spearman", "kendall"])
            writer.writerows(rows)
        written.append("correlations.csv")
    return written


def _score_components(sample: EvaluatedSample, criterion: str, iq,
                      weights: WeightConfig):
    if sample.error is not None:
        return None
    if criterion == "total":
        present = sample.scores.present()
        if not present:
            return None
        pair = iq.get(sample.model_id)
        score_map = dict(present)
        if pair is not None:
            score_map["iq"] = pair[0]
        from .metrics import combine_weighted

        return {"score": combine_weighted(score_map, weights.group("total"))}
    value = getattr(sample.scores, criterion, None)
    if value is None:
        return None
    return {"score": value}


_FIT_GROUP_BY_CRITERION = {"of": "of", "oc": "oc", "bc": "bc", "total": "total"}


def cmd_fit_weights(args) -> int:
    config = load_config(args.config)
    votes = [v for v in load_records(args.votes, PreferenceRecord)
             if v.criterion == args.criterion]
    if not votes:
        log.error("no votes for criterion %s", args.criterion)
        return 2
    samples = _load_samples(args.metrics)
    by_key = {(s.model_id, s.query_id): s for s in samples}
    base = load_weights(args.weights) if args.weights else WeightConfig.uniform()
    group = args.group or _FIT_GROUP_BY_CRITERION.get(args.criterion)
    if group is None:
        log.error("criterion %s needs an explicit --group", args.criterion)
        return 2

    iq = {}
    if args.criterion == "total" and config.fit_include_iq:
        iq = {m: pair[0] for m, pair in
              _iq_from_features(args.metrics, config.bootstrap_resamples,
                                args.seed, samples).items()}

    questions = []
    for vote in votes:
        a = by_key.get((vote.model_a, vote.query_id))
        b = by_key.get((vote.model_b, vote.query_id))
        if a is None or b is None:
            log.warning("question %s lacks evaluated samples; dropped",
                        vote.question_id)
            continue
        comp_a = criterion_components(a, args.criterion, group, base)
        comp_b = criterion_components(b, args.criterion, group, base)
        if comp_a is None or comp_b is None:
            continue
        questions.append(alignment.QuestionComponents(
            question_id=vote.question_id, model_a=vote.model_a,
            model_b=vote.model_b, components_a=comp_a, components_b=comp_b))

    if args.criterion == "total":
        result = alignment.fit_total_weights(questions, votes, iq,
                                             step=args.step,
                                             include_iq=config.fit_include_iq)
    else:
        from .records import WEIGHT_GROUP_KEYS

        result = alignment.fit_weights(args.criterion, questions, votes,
                                       step=args.step,
                                       keys=WEIGHT_GROUP_KEYS[group],
                                       coarse_step=args.coarse_step)

    fitted = dict.fromkeys(base.group(group), 0.0)
    for key, value in result.weights.items():
        fitted[key] = value
    total = sum(fitted.values())
    if abs(total - 1.0) > 1e-9 and total > 0:
        fitted = {k: v / total for k, v in fitted.items()}
    updated = base.replace_group(group, fitted)
    save_weights(updated, args.out)

    summary = {
        "criterion": args.criterion,
        "group": group,
        "weights": result.weights,
        "pearson": None if not np.isfinite(result.correlation)
        else result.correlation,
        "degenerate": result.degenerate,
        "candidates": result.candidates,
        "questions": len(questions),
    }
    Path(str(args.out) + ".fit.json").write_text(
        json.dumps(summary, sort_keys=True, indent=1) + "\n", encoding="utf-8")
    if args.plot:
        reporting.render_alignment_scatter(result.human_rates,
                                           result.metric_rates,
                                           args.criterion, args.plot,
                                           result.correlation)
    log.info("fitted %s (%s): pearson=%s weights=%s", args.criterion, group,
             result.correlation, result.weights)
    return 0


def cmd_sweep(args) -> int:
    config = load_config(args.config)
    prepared, corpus_dir = _load_prepared(args.corpus)
    queries = load_records(args.queries, EditQuery)
    backends = load_backend_set(args.backends)
    weights = load_weights(args.weights)
    kept = {}
    if args.filter_report:
        reports = load_records(args.filter_report, FilterReport)
        kept = {r.image_id: r.kept for r in reports}
    outdir = Path(args.out)

    settings = []
    for spec in args.setting:
        if "=" not in spec:
            log.error("--setting needs VALUE=DIR, got %r", spec)
            return 2
        value, directory = spec.split("=", 1)
        if not Path(directory).is_dir():
            log.error("missing edited directory %s", directory)
            return 2
        settings.append((float(value), Path(directory)))

    reports_by_value = []
    queries = sorted(queries, key=lambda q: q.query_id)
    for value, directory in settings:
        samples = [_evaluate_one(q, prepared, corpus_dir, directory, backends,
                                 weights, kept, args.model, config)
                   for q in queries]
        report = harness.aggregate(samples, weights,
                                   n_resamples=config.bootstrap_resamples,
                                   seed=args.seed)
        label = f"{args.param}={value:g}"
        sub = outdir / label.replace("=", "_")
        reporting.render_report(report, sub, skip_plots=args.no_plots)
        reports_by_value.append((value, report))
    series = harness.sweep_series(reports_by_value, args.param)
    reporting.render_sweep(series, outdir, skip_plots=args.no_plots)
    _write_manifest(outdir, args, config, backends.names)
    log.info("sweep over %d settings -> %s", len(settings), outdir)
    return 0


def cmd_demo_corpus(args) -> int:
    from .mockdata import build_mock_corpus

    paths = build_mock_corpus(args.out, seed=args.seed, per_type=args.per_type)
    log.info("demo corpus with %d queries at %s", paths["n_queries"], args.out)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="editgauge",
        description="Automated, human-aligned evaluation of text-guided "
                    "image editing")
    parser.add_argument("--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", default=None, help="run-config JSON")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--jobs", type=int, default=1)

    p = sub.add_parser("filter", help="select editable objects, prepare images")
    common(p)
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seg-backend", required=True)
    p.add_argument("--vqa-backend", required=True)
    p.add_argument("--backends", required=True, help="backend registry JSON")
    p.add_argument("--prepared-dir", default=None)
    p.set_defaults(func=cmd_filter)

    p = sub.add_parser("gen-queries", help="generate balanced edit queries")
    common(p)
    p.add_argument("--corpus", required=True, help="prepared corpus dir")
    p.add_argument("--filter-report", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--balance-config", default=None)
    p.add_argument("--backends", default=None)
    p.add_argument("--embed-backend", default="embedder")
    p.set_defaults(func=cmd_gen_queries)

    p = sub.add_parser("gen-captions", help="fill caption pairs and instructions")
    common(p)
    p.add_argument("--queries", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--filter-report", default=None)
    p.add_argument("--backends", default=None)
    p.add_argument("--llm-backend", default=None)
    p.add_argument("--templates", default=None)
    p.set_defaults(func=cmd_gen_captions)

    p = sub.add_parser("evaluate", help="score edited images for one model")
    common(p)
    p.add_argument("--queries", required=True)
    p.add_argument("--edited-dir", required=True)
    p.add_argument("--backends", required=True)
    p.add_argument("--weights", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--corpus", required=True, help="prepared corpus dir")
    p.add_argument("--filter-report", default=None)
    p.add_argument("--model", default="model")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("fit-weights", help="fit weight groups to human votes")
    common(p)
    p.add_argument("--votes", required=True)
    p.add_argument("--metrics", required=True, nargs="+")
    p.add_argument("--criterion", required=True,
                   choices=["of", "oc", "bc", "total"])
    p.add_argument("--step", type=float, default=0.01)
    p.add_argument("--coarse-step", type=float, default=None,
                   help="optional coarse-to-fine search (off by default)")
    p.add_argument("--out", required=True)
    p.add_argument("--weights", default=None, help="base weights to update")
    p.add_argument("--group", default=None,
                   help="weight group to fit (defaults by criterion)")
    p.add_argument("--plot", default=None)
    p.set_defaults(func=cmd_fit_weights)

    p = sub.add_parser("report", help="aggregate metrics into tables and plots")
    common(p)
    p.add_argument("--metrics", required=True, nargs="+")
    p.add_argument("--weights", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--votes", default=None)
    p.add_argument("--no-plots", action="store_true")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("sweep", help="evaluate across hyperparameter settings")
    common(p)
    p.add_argument("--queries", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--backends", required=True)
    p.add_argument("--weights", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--param", required=True)
    p.add_argument("--setting", action="append", required=True,
                   help="VALUE=EDITED_DIR (repeatable)")
    p.add_argument("--filter-report", default=None)
    p.add_argument("--model", default="model")
    p.add_argument("--no-plots", action="store_true")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("demo-corpus", help="build the synthetic demo corpus")
    common(p)
    p.add_argument("--out", required=True)
    p.add_argument("--per-type", type=int, default=4)
    p.set_defaults(func=cmd_demo_corpus)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
