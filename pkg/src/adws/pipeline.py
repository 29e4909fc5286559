"""Per-image detection pipeline and dataset-level evaluation."""

import csv
import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .backbone import Backbone, extract_feature_map, global_pool
from .errors import SingleClass
from .ingest import DatasetIndex, Image, load_image
from .metrics import auroc, confusion_metrics
from .normality import (
    ScoreMap,
    adaptive_threshold,
    fit_mvg,
    fit_ocsvm,
    score_map,
)
from .selection import DEFAULT_SP, FeatureDictionary, image_features, select_subset
from .sift import SiftConfig


@dataclass
class DetectorConfig:
    selector: str = "cosine"          # cosine | sift-flann
    sp: float | None = None           # None -> per-selector default
    alpha: float = 0.7
    model: str = "mvg"                # mvg | ocsvm
    shrinkage: float = 0.01
    nu: float = 0.05
    gamma: object = "auto"
    margin: float = 1.0
    fallback_k: int = 5
    checks: int = 32
    seed: int = 0
    sift: SiftConfig = field(default_factory=SiftConfig)

    def __post_init__(self):
        if self.selector not in DEFAULT_SP:
            raise ValueError(f"unknown selector {self.selector!r}")
        if self.model not in ("mvg", "ocsvm"):
            raise ValueError(f"unknown model {self.model!r}")

    @property
    def resolved_sp(self) -> float:
        return DEFAULT_SP[self.selector] if self.sp is None else self.sp


@dataclass
class AnomalyReport:
    image_id: str
    selector: str
    sp: float
    model: str
    selected: list            # [{"id": ..., "score": ...}] in selection order
    percent_saved: float
    tau: float
    image_score: float
    verdict: str              # anomalous | normal
    score_map: ScoreMap
    timings: dict             # {"select", "fit", "score"} seconds
    fallback_used: bool

    def to_dict(self) -> dict:
        """The report's JSON form; score map omitted, timings included."""
        return {
            "image_id": self.image_id,
            "selector": self.selector,
            "sp": self.sp,
            "model": self.model,
            "selected": self.selected,
            "percent_saved": self.percent_saved,
            "tau": self.tau,
            "image_score": self.image_score,
            "verdict": self.verdict,
            "timings": self.timings,
        }


def _fit_model(vectors: np.ndarray, cfg: DetectorConfig):
    if cfg.model == "mvg":
        return fit_mvg(vectors, shrinkage=cfg.shrinkage)
    return fit_ocsvm(vectors, nu=cfg.nu, gamma=cfg.gamma, seed=cfg.seed)


def detect(d: FeatureDictionary, img: Image, cfg: DetectorConfig,
           backbone: Backbone, image_id: str = "image") -> AnomalyReport:
    """Select similar training images, fit a model to them, score the image.

    Stage timings cover: select (test feature extraction + subset choice),
    fit (model fit + adaptive threshold over the subset), score (test map).
    """
    d.check_backbone(backbone)

    t0 = time.perf_counter()
    need_sift = cfg.selector == "sift-flann"
    pooled, fm, feats = image_features(img, backbone, cfg.sift, with_sift=need_sift)
    sel = select_subset(
        d, pooled, feats if need_sift else None,
        selector=cfg.selector, sp=cfg.sp, alpha=cfg.alpha,
        fallback_k=cfg.fallback_k, checks=cfg.checks,
    )
    t1 = time.perf_counter()

    by_id = {e.image_id: e for e in d.entries}
    maps = [by_id[i].feature_map for i in sel.selected_ids]
    vectors = np.concatenate(
        [m.reshape(m.shape[0], -1).T for m in maps], axis=0
    ).astype(np.float64)
    model = _fit_model(vectors, cfg)
    threshold = adaptive_threshold(model, maps, margin=cfg.margin)
    t2 = time.perf_counter()

    sm = score_map(model, fm)
    verdict = "anomalous" if sm.image_score > threshold.tau else "normal"
    t3 = time.perf_counter()

    return AnomalyReport(
        image_id=image_id,
        selector=cfg.selector,
        sp=sel.sp,
        model=cfg.model,
        selected=[
            {"id": i, "score": float(sel.scores[i])} for i in sel.selected_ids
        ],
        percent_saved=sel.data_saved_percent,
        tau=float(threshold.tau),
        image_score=float(sm.image_score),
        verdict=verdict,
        score_map=sm,
        timings={"select": t1 - t0, "fit": t2 - t1, "score": t3 - t2},
        fallback_used=sel.fallback_used,
    )


@dataclass
class EvalReport:
    dataset: str
    selector: str
    sp: float
    model: str
    reports: list
    labels: list
    accuracy: float
    f1: float
    auroc: float | None
    pct_saved_mean: float
    time_mean: float
    time_std: float

    def to_dict(self) -> dict:
        return {
            "dataset": self.dataset,
            "model": self.model,
            "selector": self.selector,
            "sp": self.sp,
            "accuracy": self.accuracy,
            "f1": self.f1,
            "auroc": self.auroc,
            "pct_saved_mean": self.pct_saved_mean,
            "time_mean": self.time_mean,
            "time_std": self.time_std,
            "images": [r.to_dict() for r in self.reports],
        }


CSV_COLUMNS = [
    "dataset", "model", "selector", "sp", "accuracy", "f1", "auroc",
    "pct_saved_mean", "time_mean", "time_std",
]


def evaluate(d: FeatureDictionary, test_set: DatasetIndex, cfg: DetectorConfig,
             backbone: Backbone, dataset_name: str | None = None,
             csv_path=None, json_path=None) -> EvalReport:
    """Run detect over every test image and aggregate the metrics.

    AUROC needs both classes; with only one present it is reported absent
    rather than raising.
    """
    name = dataset_name or Path(test_set.root).name
    reports = []
    labels = []
    for entry in test_set.test_images:
        img = load_image(entry.path)
        reports.append(detect(d, img, cfg, backbone, image_id=entry.image_id))
        labels.append(entry.label)

    verdicts = [r.verdict for r in reports]
    accuracy, f1 = confusion_metrics(verdicts, labels)
    scores = [r.image_score for r in reports]
    try:
        area = auroc(scores, labels)
    except SingleClass:
        area = None
    times = np.array([sum(r.timings.values()) for r in reports], dtype=np.float64)
    saved = np.array([r.percent_saved for r in reports], dtype=np.float64)

    report = EvalReport(
        dataset=name,
        selector=cfg.selector,
        sp=cfg.resolved_sp,
        model=cfg.model,
        reports=reports,
        labels=labels,
        accuracy=accuracy,
        f1=f1,
        auroc=area,
        pct_saved_mean=float(saved.mean()) if saved.size else 0.0,
        time_mean=float(times.mean()) if times.size else 0.0,
        time_std=float(times.std()) if times.size else 0.0,
    )
    if csv_path is not None:
        write_csv(report, csv_path)
    if json_path is not None:
        write_json(report, json_path)
    return report


def write_csv(report: EvalReport, path):
    row = report.to_dict()
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=CSV_COLUMNS, extrasaction="ignore")
        writer.writeheader()
        out = {k: row[k] for k in CSV_COLUMNS}
        if out["auroc"] is None:
            out["auroc"] = ""
        writer.writerow(out)


def write_json(report, path):
    payload = report.to_dict() if hasattr(report, "to_dict") else report
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
