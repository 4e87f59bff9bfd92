"""Command-line front end.

Subcommands: fit, score, calibrate-tau, calibrate-tstar, eval, stratify,
filter-overlap, report, correlate. Flag values override config-file keys.
"""

from __future__ import annotations

import argparse
import sys

from . import records as rio
from .calibration import apply_omega, calibrate_t_star, calibrate_tau
from .errors import ConfigurationError, EngineError
from .metrics.binary import auroc, fpr_at_tpr
from .metrics.osod import coverage_stats, osod_metrics
from .pipeline import (
    EvalReport,
    _dump_outcomes,
    emit_correlation_table,
    emit_tables,
    load_config,
    metric_correlations,
    run_pipeline,
)
from .scoring import (
    IdnessScore,
    METHODS,
    ScoringConfig,
    fit_method,
    load_state,
    save_state,
    score_detections,
)
from .scoring.latent import pool_detections, pooled_from_records, write_pooled
from .tensorio import load_feature_maps, load_head


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--records", help="detection records file")
    p.add_argument("--gt", help="ground truth file")
    p.add_argument("--head", help="head weights container")
    p.add_argument("--feature-maps", help="feature map container")
    p.add_argument("--embeddings", help="embedding records file")
    p.add_argument("--method", help="scoring method id")
    p.add_argument("--tau", type=float, help="ID-ness threshold")
    p.add_argument("--tpr-target", type=float, default=None, help="default 0.95")
    p.add_argument("--iou", type=float, default=None, help="default 0.5")
    p.add_argument("--config", help="run configuration file")
    p.add_argument("--out", help="output path or directory")
    p.add_argument("--workers", type=int, default=None, help="default 1")
    p.add_argument("--seed", type=int, default=None, help="default 0")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="oodeval")
    sub = parser.add_subparsers(dest="command", required=True)

    for name, help_text in (
        ("fit", "fit a scoring method on ID training records"),
        ("score", "score detection records with a method"),
        ("calibrate-tau", "pick the score threshold at the target ID retention"),
        ("calibrate-tstar", "pick the detector confidence threshold by mAP sweep"),
        ("eval", "compute all metrics for one method on one split"),
        ("stratify", "overlap removal + near/far assignment to a manifest"),
        ("filter-overlap", "overlap removal only"),
        ("report", "run the full pipeline from a config file"),
        ("correlate", "metric correlation matrix from a report"),
    ):
        p = sub.add_parser(name, help=help_text)
        _add_common(p)
        if name == "fit":
            p.add_argument("--categories", required=True)
            p.add_argument("--state-out", required=True)
        if name == "score":
            p.add_argument("--categories", required=True)
            p.add_argument("--state", help="fitted state container")
            p.add_argument("--pooled-out", help="also write the pooled latent vectors")
        if name == "calibrate-tau":
            p.add_argument("--scores", required=True, help="ID score file")
        if name == "calibrate-tstar":
            p.add_argument("--categories", required=True)
            p.add_argument("--grid", required=True, help="comma-joined candidate thresholds")
        if name == "eval":
            p.add_argument("--categories", required=True)
            p.add_argument("--scores", required=True, help="score file for --records")
            p.add_argument("--id-scores", help="ID score file for AUROC/FPR")
            p.add_argument("--images", help="image universe for coverage")
        if name in ("stratify", "filter-overlap"):
            p.add_argument("--categories")
            p.add_argument("--overlap", required=True, help="overlap category list")
            p.add_argument("--near", help="near category list")
            p.add_argument("--overrides", help="manual assignment overrides")
            p.add_argument("--far-label", default="far")
            p.add_argument("--id-embeddings", help="with --embeddings: report similarity stats")
        if name == "report":
            p.add_argument("--format", choices=("csv", "markdown"), help="also emit a table")
        if name == "correlate":
            p.add_argument("--report", required=True, help="report.json path")
    return parser


def _tpr(args) -> float:
    return 0.95 if args.tpr_target is None else args.tpr_target


def _iou_thr(args) -> float:
    return 0.5 if args.iou is None else args.iou


def _scoring_config(args) -> ScoringConfig:
    return ScoringConfig(seed=0 if args.seed is None else args.seed)


def _load_pooled_if_needed(args, method, records):
    if not METHODS[method].needs_latent:
        return None
    if args.feature_maps:
        return pool_detections(load_feature_maps(args.feature_maps), records)
    return pooled_from_records(records)


def cmd_fit(args) -> int:
    categories = rio.load_categories(args.categories)
    records = rio.load_detections(args.records, categories)
    head = load_head(args.head) if args.head else None
    config = _scoring_config(args)
    pooled = _load_pooled_if_needed(args, args.method, records)
    state = fit_method(
        args.method, config, train_records=records, head=head,
        train_pooled=pooled, num_classes=categories.num_classes,
    )
    if state is None:
        print(f"method {args.method} needs no fit; nothing written")
        return 0
    save_state(args.state_out, args.method, state)
    print(f"wrote {args.state_out}")
    return 0


def cmd_score(args) -> int:
    categories = rio.load_categories(args.categories)
    records = rio.load_detections(args.records, categories)
    head = load_head(args.head) if args.head else None
    state = load_state(args.state, args.method) if args.state else None
    pooled = _load_pooled_if_needed(args, args.method, records)
    scores = score_detections(
        args.method, records, _scoring_config(args), state, head, pooled
    )
    rio.write_scores(
        args.out,
        [rio.ScoreRecord(s.image_id, s.det_index, s.method, s.value) for s in scores],
    )
    print(f"wrote {len(scores)} scores to {args.out}")
    if args.pooled_out and pooled is not None:
        write_pooled(args.pooled_out, pooled)
        print(f"wrote {len(pooled)} pooled vectors to {args.pooled_out}")
    return 0


def cmd_calibrate_tau(args) -> int:
    scores = [s.value for s in rio.load_scores(args.scores)]
    result = calibrate_tau(scores, _tpr(args))
    print(f"tau={result.tau!r} achieved_tpr={result.achieved_tpr!r}")
    return 0


def cmd_calibrate_tstar(args) -> int:
    categories = rio.load_categories(args.categories)
    records = rio.load_detections(args.records, categories)
    gt = rio.load_ground_truth(args.gt, categories)
    grid = [float(t) for t in args.grid.split(",")]
    result = calibrate_t_star(records, gt, grid, _iou_thr(args))
    for t, value in result.sweep_table:
        print(f"t={t!r} map={value!r}")
    print(f"t_star={result.t_star!r}")
    return 0


def cmd_eval(args) -> int:
    categories = rio.load_categories(args.categories)
    records = rio.load_detections(args.records, categories)
    gt = rio.load_ground_truth(args.gt)
    score_records = rio.load_scores(args.scores)
    scores = [IdnessScore(s.value, s.method, s.image_id, s.det_index) for s in score_records]
    if args.tau is None:
        raise ConfigurationError("eval requires --tau (calibrate first)")
    flagged = apply_omega(records, scores, args.tau)
    result, outcome = osod_metrics(flagged, gt, _iou_thr(args))
    print(f"tp_u={outcome.tp_u} fp_u={outcome.fp_u} fn_d={outcome.fn_d} fn_m={outcome.fn_m}")
    print(
        f"p_u={result.precision_u!r} r_u={result.recall_u!r} "
        f"ap_u={result.ap_u!r} nose={result.nose!r}"
    )
    if args.id_scores:
        id_vals = [s.value for s in rio.load_scores(args.id_scores)]
        ood_vals = [s.value for s in scores]
        print(
            f"auroc={auroc(id_vals, ood_vals)!r} "
            f"fpr{int(_tpr(args) * 100)}={fpr_at_tpr(id_vals, ood_vals, _tpr(args))!r}"
        )
    if args.images:
        frac, _ = coverage_stats(records, rio.load_image_list(args.images))
        print(f"coverage_zero_prediction={frac!r}")
    if args.out:
        _dump_outcomes(args.out, score_records[0].method if score_records else "m", "eval", outcome)
    return 0


def cmd_stratify(args, overlap_only: bool = False) -> int:
    categories = rio.load_categories(args.categories) if args.categories else None
    gt = rio.load_ground_truth(args.gt, categories)
    overlap = set(rio.load_category_list(args.overlap))
    from . import stratify as strat

    if overlap_only:
        manifest = strat.filter_overlap(gt, overlap, categories)
    else:
        if not args.near:
            raise ConfigurationError("stratify requires --near")
        near = set(rio.load_category_list(args.near))
        overrides = rio.load_overrides(args.overrides) if args.overrides else None
        manifest = strat.remove_then_assign(
            gt, overlap, near, categories, far_label=args.far_label, overrides=overrides
        )
    rio.write_manifest(args.out, manifest)
    print(f"wrote {len(manifest.entries)} manifest entries to {args.out}")

    if args.embeddings and args.id_embeddings:
        id_emb = rio.load_embeddings(args.id_embeddings)
        ood_emb = rio.load_embeddings(args.embeddings)
        # the exact pairing behind the published similarity plots is unstated:
        # report both modes, labeled
        for pairing in ("nearest_id", "all_pairs_sampled"):
            stats = strat.cosine_similarity_stats(
                id_emb, ood_emb, pairing=pairing, pair_label=pairing,
                seed=0 if args.seed is None else args.seed,
            )
            print(
                f"similarity[{pairing}]: n={stats.similarities.size} "
                f"mean={stats.mean!r}"
            )
    return 0


def cmd_report(args) -> int:
    overrides = {
        "tpr_target": args.tpr_target,
        "iou_threshold": args.iou,
        "workers": args.workers,
        "seed": args.seed,
    }
    config = load_config(args.config, overrides)
    report = run_pipeline(config, out_dir=args.out)
    print(f"{len(report.rows)} rows, {len(report.metadata['aborted_rows'])} aborted")
    if args.format and args.out:
        ext = "csv" if args.format == "csv" else "md"
        emit_tables(report, args.format, f"{args.out}/report.{ext}")
    return 0


def cmd_correlate(args) -> int:
    report = EvalReport.load(args.report)
    correlations = metric_correlations(report)
    if args.out:
        emit_correlation_table(correlations, args.out)
        print(f"wrote {args.out}")
    else:
        for (a, b), v in sorted(correlations.items()):
            print(f"{a},{b},{'' if v is None else repr(v)}")
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    handlers = {
        "fit": cmd_fit,
        "score": cmd_score,
        "calibrate-tau": cmd_calibrate_tau,
        "calibrate-tstar": cmd_calibrate_tstar,
        "eval": cmd_eval,
        "stratify": cmd_stratify,
        "filter-overlap": lambda a: cmd_stratify(a, overlap_only=True),
        "report": cmd_report,
        "correlate": cmd_correlate,
    }
    try:
        return handlers[args.command](args)
    except (EngineError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
