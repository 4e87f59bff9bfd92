"""Run orchestration: fit, score, calibrate, evaluate, report.

A run is a set of (method, ood_split) rows. Rows fail independently; an
aborted row is listed with its cause and never blocks the others. Reports
are JSON with sorted keys and shortest round-trip floats, so identical runs
produce byte-identical files regardless of worker count.
"""

from __future__ import annotations

import hashlib
import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import records as rio
from . import stratify
from .calibration import apply_omega, calibrate_tau
from .errors import ConfigurationError, EngineError, InputError
from .metrics.binary import auroc, fpr_at_tpr
from .metrics.osod import coverage_stats, osod_metrics
from .scoring import METHODS, ScoringConfig, fit_method, score_detections
from .scoring.latent import pool_detections, pooled_from_records
from .tensorio import load_feature_maps, load_head

REPORT_FORMAT_VERSION = 1

AP_RANKING_OOD_MARGIN = "ood_margin"  # rank flagged detections by (tau - idness)
AP_RANKING_CONFIDENCE = "confidence"  # rank by detector confidence

METRIC_COLUMNS = ("auroc", "fpr95", "nose", "ap_u", "p_u", "r_u")


@dataclass
class ReportRow:
    method: str
    architecture: str
    id_dataset: str
    ood_split: str
    auroc: float
    fpr95: float
    nose: float | None
    ap_u: float
    p_u: float
    r_u: float
    coverage: float | None
    tau: float
    n_id: int
    n_ood: int
    aose: int

    def __post_init__(self):
        for name in ("auroc", "fpr95", "ap_u", "p_u", "r_u"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise AssertionError(f"{name}={v} outside [0, 1]")
        for name in ("nose", "coverage"):
            v = getattr(self, name)
            if v is not None and not 0.0 <= v <= 1.0:
                raise AssertionError(f"{name}={v} outside [0, 1]")

    def as_dict(self) -> dict:
        return {
            "method": self.method,
            "architecture": self.architecture,
            "id_dataset": self.id_dataset,
            "ood_split": self.ood_split,
            "auroc": self.auroc,
            "fpr95": self.fpr95,
            "nose": self.nose,
            "ap_u": self.ap_u,
            "p_u": self.p_u,
            "r_u": self.r_u,
            "coverage": self.coverage,
            "tau": self.tau,
            "n_id": self.n_id,
            "n_ood": self.n_ood,
            "aose": self.aose,
        }


@dataclass
class EvalReport:
    rows: list[ReportRow]
    metadata: dict

    def to_json(self) -> str:
        payload = {
            "format_version": REPORT_FORMAT_VERSION,
            "metadata": self.metadata,
            "rows": [r.as_dict() for r in self.rows],
        }
        return json.dumps(payload, sort_keys=True, indent=2) + "\n"

    def save(self, path: str) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.to_json())

    @classmethod
    def load(cls, path: str) -> "EvalReport":
        with open(path, "r", encoding="utf-8") as fh:
            payload = json.load(fh)
        rows = [ReportRow(**row) for row in payload["rows"]]
        return cls(rows=rows, metadata=payload["metadata"])


@dataclass
class OodSplitSpec:
    name: str
    records: str
    gt: str
    images: str | None = None  # image universe for coverage
    feature_maps: str | None = None


@dataclass
class RunConfig:
    """Everything needed to reproduce a run; serialized whole into report metadata.

    Paths stay as given (usually relative) and resolve against `base` only
    when opened, so report metadata is machine-independent.
    """

    methods: list[str]
    categories: str
    id_records: str
    ood_splits: list[OodSplitSpec]
    architecture: str = "unspecified"
    id_dataset: str = "unspecified"
    train_records: str | None = None
    head: str | None = None
    train_feature_maps: str | None = None
    id_feature_maps: str | None = None
    tpr_target: float = 0.95
    iou_threshold: float = 0.5
    ap_ranking: str = AP_RANKING_OOD_MARGIN
    workers: int = 1
    scoring: ScoringConfig = field(default_factory=ScoringConfig)
    base: str = "."

    def path(self, p: str | None) -> str | None:
        return _resolve(self.base, p)

    def items(self) -> dict:
        # workers is an execution knob, not an input: it never changes values,
        # so it stays out of the metadata echo (reports must be byte-identical
        # across worker counts)
        out = {
            "methods": ",".join(self.methods),
            "categories": self.categories,
            "id_records": self.id_records,
            "architecture": self.architecture,
            "id_dataset": self.id_dataset,
            "train_records": self.train_records,
            "head": self.head,
            "train_feature_maps": self.train_feature_maps,
            "id_feature_maps": self.id_feature_maps,
            "tpr_target": self.tpr_target,
            "iou_threshold": self.iou_threshold,
            "ap_ranking": self.ap_ranking,
        }
        out.update(self.scoring.as_dict())
        for split in self.ood_splits:
            out[f"ood.{split.name}.records"] = split.records
            out[f"ood.{split.name}.gt"] = split.gt
            out[f"ood.{split.name}.images"] = split.images
            out[f"ood.{split.name}.feature_maps"] = split.feature_maps
        return out


def _parse_kv_file(path: str) -> dict[str, str]:
    out = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ConfigurationError(f"{path}:{lineno}: expected key = value")
            key, _, value = line.partition("=")
            out[key.strip()] = value.strip()
    return out


def _resolve(base: str, value: str | None) -> str | None:
    if value is None or value == "":
        return None
    if os.path.isabs(value):
        return value
    return os.path.normpath(os.path.join(base, value))


def config_from_items(items: dict, base: str = ".") -> RunConfig:
    """Build a RunConfig from flat key/value items (config file or report metadata)."""

    def get(key, default=None):
        v = items.get(key, default)
        return default if v in ("", None) else v

    splits = {}
    for key, value in items.items():
        if not key.startswith("ood."):
            continue
        _, name, attr = key.split(".", 2)
        splits.setdefault(name, {})[attr] = value
    ood_splits = []
    for name in sorted(splits):
        attrs = splits[name]
        if not attrs.get("records") or not attrs.get("gt"):
            raise ConfigurationError(f"split {name!r} needs both records and gt")
        ood_splits.append(
            OodSplitSpec(
                name=name,
                records=attrs["records"],
                gt=attrs["gt"],
                images=attrs.get("images") or None,
                feature_maps=attrs.get("feature_maps") or None,
            )
        )

    methods = [m for m in str(get("methods", "")).split(",") if m]
    for m in methods:
        if m not in METHODS:
            raise ConfigurationError(f"unknown method {m!r}")

    vim_dim = int(get("vim_dim", 0) or 0)
    reg_eps = float(get("reg_epsilon", 0) or 0)
    scoring = ScoringConfig(
        energy_temperature=float(get("energy_temperature", 1.0)),
        gen_lambda=float(get("gen_lambda", 0.5)),
        knn_k=int(get("knn_k", 10)),
        vim_dim=vim_dim if vim_dim > 0 else None,
        vim_center_sign=int(get("vim_center_sign", 1)),
        ash_percentile=float(get("ash_percentile", 90.0)),
        react_percentile=float(get("react_percentile", 90.0)),
        dice_keep_fraction=float(get("dice_keep_fraction", 0.3)),
        lard_resolution=int(get("lard_resolution", 9)),
        reg_epsilon=reg_eps if reg_eps > 0 else None,
        seed=int(get("seed", 0)),
    )

    if get("categories") is None or get("id_records") is None:
        raise ConfigurationError("config must name categories and id_records")

    return RunConfig(
        methods=methods,
        categories=get("categories"),
        id_records=get("id_records"),
        ood_splits=ood_splits,
        architecture=str(get("architecture", "unspecified")),
        id_dataset=str(get("id_dataset", "unspecified")),
        train_records=get("train_records"),
        head=get("head"),
        train_feature_maps=get("train_feature_maps"),
        id_feature_maps=get("id_feature_maps"),
        tpr_target=float(get("tpr_target", 0.95)),
        iou_threshold=float(get("iou_threshold", 0.5)),
        ap_ranking=str(get("ap_ranking", AP_RANKING_OOD_MARGIN)),
        workers=int(get("workers", 1)),
        scoring=scoring,
        base=base,
    )


def load_config(path: str, overrides: dict | None = None) -> RunConfig:
    items = _parse_kv_file(path)
    if overrides:
        items.update({k: v for k, v in overrides.items() if v is not None})
    return config_from_items(items, base=os.path.dirname(os.path.abspath(path)))


def _sha256(path: str) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def _input_hashes(config: RunConfig) -> dict[str, str]:
    paths = [config.categories, config.id_records, config.train_records,
             config.head, config.train_feature_maps, config.id_feature_maps]
    for split in config.ood_splits:
        paths += [split.records, split.gt, split.images, split.feature_maps]
    return {p: _sha256(config.path(p)) for p in sorted({p for p in paths if p})}


def _pooled_for(records, maps_path, resolution):
    if maps_path:
        return pool_detections(load_feature_maps(maps_path), records, resolution)
    return pooled_from_records(records)


def run_pipeline(config: RunConfig, out_dir: str | None = None) -> EvalReport:
    categories = rio.load_categories(config.path(config.categories))
    id_records = rio.load_detections(config.path(config.id_records), categories)
    head = load_head(config.path(config.head)) if config.head else None
    train_records = (
        rio.load_detections(config.path(config.train_records), categories)
        if config.train_records
        else None
    )

    aborted: list[dict] = []
    fitted: dict[str, object] = {}
    id_scores: dict[str, list] = {}
    taus: dict[str, float] = {}

    for method in config.methods:
        info = METHODS[method]
        try:
            train_pooled = None
            if info.needs_latent:
                if train_records is None:
                    raise ConfigurationError(f"method {method!r} needs train_records")
                train_pooled = _pooled_for(
                    train_records,
                    config.path(config.train_feature_maps),
                    config.scoring.lard_resolution,
                )
            if info.needs_fit and train_records is None:
                raise ConfigurationError(f"method {method!r} needs train_records")
            fitted[method] = fit_method(
                method,
                config.scoring,
                train_records=train_records,
                head=head,
                train_pooled=train_pooled,
                num_classes=categories.num_classes,
            )
            id_pooled = None
            if info.needs_latent:
                id_pooled = _pooled_for(
                    id_records,
                    config.path(config.id_feature_maps),
                    config.scoring.lard_resolution,
                )
            scores = score_detections(
                method, id_records, config.scoring, fitted[method], head, id_pooled
            )
            id_scores[method] = scores
            taus[method] = calibrate_tau(
                [s.value for s in scores], config.tpr_target
            ).tau
        except EngineError as exc:
            for split in config.ood_splits:
                aborted.append(
                    {"method": method, "split": split.name, "error": str(exc)}
                )

    split_data = {}
    for split in config.ood_splits:
        split_data[split.name] = {
            "records": rio.load_detections(config.path(split.records), categories),
            "gt": rio.load_ground_truth(config.path(split.gt)),
            "images": rio.load_image_list(config.path(split.images)) if split.images else None,
        }

    def eval_row(method: str, split: OodSplitSpec) -> ReportRow:
        data = split_data[split.name]
        info = METHODS[method]
        pooled = None
        if info.needs_latent:
            pooled = _pooled_for(
                data["records"], config.path(split.feature_maps), config.scoring.lard_resolution
            )
        ood_scores = score_detections(
            method, data["records"], config.scoring, fitted[method], head, pooled
        )
        tau = taus[method]
        id_vals = [s.value for s in id_scores[method]]
        ood_vals = [s.value for s in ood_scores]
        flagged = apply_omega(data["records"], ood_scores, tau)
        if config.ap_ranking == AP_RANKING_OOD_MARGIN:
            ranking = {
                (f.record.image_id, f.record.det_index): tau - f.idness for f in flagged
            }
        elif config.ap_ranking == AP_RANKING_CONFIDENCE:
            ranking = {
                (f.record.image_id, f.record.det_index): f.record.confidence
                for f in flagged
            }
        else:
            raise ConfigurationError(f"unknown ap_ranking {config.ap_ranking!r}")
        result, outcome = osod_metrics(flagged, data["gt"], config.iou_threshold, ranking)
        coverage = None
        if data["images"] is not None:
            coverage, _ = coverage_stats(data["records"], data["images"])
        if out_dir:
            _dump_outcomes(out_dir, method, split.name, outcome)
        return ReportRow(
            method=method,
            architecture=config.architecture,
            id_dataset=config.id_dataset,
            ood_split=split.name,
            auroc=auroc(id_vals, ood_vals),
            fpr95=fpr_at_tpr(id_vals, ood_vals, config.tpr_target),
            nose=result.nose,
            ap_u=result.ap_u,
            p_u=result.precision_u,
            r_u=result.recall_u,
            coverage=coverage,
            tau=tau,
            n_id=len(id_vals),
            n_ood=len(ood_vals),
            aose=result.aose,
        )

    tasks = [
        (method, split)
        for method in config.methods
        if method in taus
        for split in config.ood_splits
    ]
    rows: list[ReportRow] = []
    if config.workers > 1 and len(tasks) > 1:
        with ThreadPoolExecutor(max_workers=config.workers) as pool:
            futures = {(m, s.name): pool.submit(eval_row, m, s) for m, s in tasks}
        for (method, split_name), fut in futures.items():
            try:
                rows.append(fut.result())
            except EngineError as exc:
                aborted.append({"method": method, "split": split_name, "error": str(exc)})
    else:
        for method, split in tasks:
            try:
                rows.append(eval_row(method, split))
            except EngineError as exc:
                aborted.append({"method": method, "split": split.name, "error": str(exc)})

    rows.sort(key=lambda r: (r.method, r.ood_split))
    aborted.sort(key=lambda a: (a["method"], a["split"]))

    metadata = {
        "config_items": {k: v for k, v in config.items().items() if v is not None},
        "thresholds": {m: taus[m] for m in sorted(taus)},
        "tpr_target": config.tpr_target,
        "iou_threshold": config.iou_threshold,
        "ap_ranking": config.ap_ranking,
        "seed": config.scoring.seed,
        "hyperparameters": config.scoring.as_dict(),
        "record_schema_version": rio.SCHEMA_VERSION,
        "report_format_version": REPORT_FORMAT_VERSION,
        "ash_sum_semantics": "per_sample",
        "ash_threshold_source": "global_train_percentile",
        "roi_sampling": "2x2_regular_bilinear_zero_padded",
        "input_hashes": _input_hashes(config),
        "aborted_rows": aborted,
    }
    report = EvalReport(rows=rows, metadata=metadata)
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
        report.save(os.path.join(out_dir, "report.json"))
    return report


def rerun_from_report(path: str, base: str = ".") -> EvalReport:
    """Re-execute a pipeline from its own report metadata.

    `base` resolves the relative input paths recorded in the metadata.
    """
    report = EvalReport.load(path)
    config = config_from_items(dict(report.metadata["config_items"]), base=base)
    return run_pipeline(config)


def _dump_outcomes(out_dir: str, method: str, split: str, outcome) -> None:
    os.makedirs(out_dir, exist_ok=True)
    path = os.path.join(out_dir, f"outcomes_{method}_{split}.tsv")
    lines = [
        "\t".join((img, str(idx), tag, "" if gt is None else str(gt)))
        for img, idx, tag, gt in outcome.per_detection
    ]
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("#schema:outcomes:1\n")
        for line in lines:
            fh.write(line + "\n")


# ---------------------------------------------------------------------------
# correlations and tables


def metric_correlations(report: EvalReport) -> dict[tuple[str, str], float | None]:
    """Pearson correlation for every metric-column pair over complete rows."""
    complete = [
        r for r in report.rows
        if all(getattr(r, c) is not None for c in METRIC_COLUMNS)
    ]
    if len(complete) < 3:
        raise InputError(f"need >= 3 complete rows, have {len(complete)}")
    columns = {
        c: np.array([getattr(r, c) for r in complete], dtype=np.float64)
        for c in METRIC_COLUMNS
    }
    out: dict[tuple[str, str], float | None] = {}
    for a in METRIC_COLUMNS:
        for b in METRIC_COLUMNS:
            xa, xb = columns[a], columns[b]
            da, db = xa - xa.mean(), xb - xb.mean()
            va, vb = float(da @ da), float(db @ db)
            if va == 0.0 or vb == 0.0:
                out[(a, b)] = None
            else:
                out[(a, b)] = float((da @ db) / np.sqrt(va * vb))
    return out


def _fmt_metric(value: float | None) -> str:
    """Percent-style metric formatting, one decimal place; absent values stay blank."""
    if value is None:
        return ""
    return f"{100.0 * value:.1f}"


def _fmt_plain(value: float | None) -> str:
    if value is None:
        return ""
    return f"{value:.4f}"


TABLE_COLUMNS = (
    ("method", None),
    ("ood_split", None),
    ("auroc", _fmt_metric),
    ("fpr95", _fmt_metric),
    ("nose", _fmt_metric),
    ("ap_u", _fmt_metric),
    ("p_u", _fmt_metric),
    ("r_u", _fmt_metric),
    ("coverage", _fmt_metric),
    ("tau", _fmt_plain),
)


def emit_tables(report: EvalReport, fmt: str, out_path: str) -> None:
    """Write the report rows as csv or markdown with deterministic ordering."""
    if fmt not in ("csv", "markdown"):
        raise ConfigurationError(f"unknown table format {fmt!r}")
    rows = sorted(report.rows, key=lambda r: (r.method, r.ood_split))
    header = [name for name, _ in TABLE_COLUMNS]
    body = []
    for r in rows:
        cells = []
        for name, formatter in TABLE_COLUMNS:
            value = getattr(r, name)
            cells.append(str(value) if formatter is None else formatter(value))
        body.append(cells)
    with open(out_path, "w", encoding="utf-8") as fh:
        if fmt == "csv":
            fh.write(",".join(header) + "\n")
            for cells in body:
                fh.write(",".join(cells) + "\n")
        else:
            fh.write("| " + " | ".join(header) + " |\n")
            fh.write("|" + "|".join(" --- " for _ in header) + "|\n")
            for cells in body:
                fh.write("| " + " | ".join(cells) + " |\n")


def emit_correlation_table(
    correlations: dict[tuple[str, str], float | None], out_path: str
) -> None:
    with open(out_path, "w", encoding="utf-8") as fh:
        fh.write("," + ",".join(METRIC_COLUMNS) + "\n")
        for a in METRIC_COLUMNS:
            cells = [a]
            for b in METRIC_COLUMNS:
                v = correlations[(a, b)]
                cells.append("" if v is None else f"{v:.4f}")
            fh.write(",".join(cells) + "\n")


def stratify_run(
    gt_path: str,
    overlap_path: str,
    near_path: str,
    categories_path: str | None = None,
    overrides_path: str | None = None,
    far_label: str = "far",
) -> stratify.SplitManifest:
    categories = rio.load_categories(categories_path) if categories_path else None
    gt = rio.load_ground_truth(gt_path, categories)
    overlap = set(rio.load_category_list(overlap_path))
    near = set(rio.load_category_list(near_path))
    overrides = rio.load_overrides(overrides_path) if overrides_path else None
    return stratify.remove_then_assign(
        gt, overlap, near, categories, far_label=far_label, overrides=overrides
    )
