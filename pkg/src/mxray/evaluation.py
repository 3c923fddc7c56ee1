"""VOC-2010 style detection evaluation (every-point interpolated AP)."""

from __future__ import annotations

import csv
import io
import logging
from dataclasses import dataclass
from typing import Hashable, Iterable, Optional, Sequence

import numpy as np

from mxray.boxes import AnyBox, iou

log = logging.getLogger(__name__)

DEFAULT_IOU_2D = 0.5
DEFAULT_IOU_3D = 0.374


@dataclass(frozen=True)
class Detection:
    box: AnyBox
    class_label: str
    confidence: float
    unit_id: Hashable


@dataclass(frozen=True)
class GroundTruth:
    box: AnyBox
    class_label: str
    unit_id: Hashable


@dataclass(frozen=True)
class EvalConfig:
    iou_threshold: float
    dimensionality: str = "2d"

    def __post_init__(self):
        if not 0.0 < self.iou_threshold <= 1.0:
            raise ValueError("iou_threshold must lie in (0, 1]")
        if self.dimensionality not in ("2d", "3d"):
            raise ValueError("dimensionality must be '2d' or '3d'")

    @classmethod
    def for_dim(cls, dimensionality: str, iou_threshold: Optional[float] = None) -> "EvalConfig":
        dimensionality = dimensionality.lower()
        if iou_threshold is None:
            iou_threshold = DEFAULT_IOU_3D if dimensionality == "3d" else DEFAULT_IOU_2D
        return cls(iou_threshold, dimensionality)


def confidence_order(dets: Sequence[Detection]) -> np.ndarray:
    """Indices by descending confidence; ties keep input order."""
    conf = np.array([d.confidence for d in dets], dtype=float)
    return np.argsort(-conf, kind="stable")


def match_detections(
    dets: Sequence[Detection], gts: Sequence[GroundTruth], cfg: EvalConfig
) -> tuple[np.ndarray, np.ndarray]:
    """Greedy matching in confidence order.

    Returns ``(order, tp)``: the detection indices in processing order and a
    boolean TP flag for each of them.
    """
    order = confidence_order(dets)
    by_unit: dict[Hashable, list[int]] = {}
    for i, g in enumerate(gts):
        by_unit.setdefault(g.unit_id, []).append(i)
    used = np.zeros(len(gts), dtype=bool)
    tp = np.zeros(len(order), dtype=bool)
    for rank, i in enumerate(order):
        det = dets[i]
        best, best_j = -1.0, -1
        for j in by_unit.get(det.unit_id, ()):
            if used[j]:
                continue
            ov = iou(det.box, gts[j].box)
            if ov > best:
                best, best_j = ov, j
        if best_j >= 0 and best >= cfg.iou_threshold:
            used[best_j] = True
            tp[rank] = True
    return order, tp


def _cumulative(tp: Sequence[bool], n_gt: int) -> tuple[np.ndarray, np.ndarray]:
    tp = np.asarray(tp, dtype=bool)
    ctp = np.cumsum(tp)
    cfp = np.cumsum(~tp)
    recall = ctp / n_gt if n_gt > 0 else np.zeros(len(tp))
    precision = ctp / np.maximum(ctp + cfp, 1)
    return recall, precision


def _envelope(precision: np.ndarray) -> np.ndarray:
    return np.maximum.accumulate(precision[::-1])[::-1] if len(precision) else precision


def average_precision(tp: Sequence[bool], n_gt: int) -> float:
    """Area under the precision envelope, summed over recall steps."""
    if n_gt <= 0:
        return float("nan")
    recall, precision = _cumulative(tp, n_gt)
    env = _envelope(precision)
    ap = 0.0
    prev = 0.0
    for r, p in zip(recall, env):
        if r > prev:
            ap += (r - prev) * p
            prev = r
    return float(ap)


def pr_curve(tp: Sequence[bool], n_gt: int) -> list[tuple[float, float, float]]:
    """(recall, precision, interpolated precision) after each detection."""
    recall, precision = _cumulative(tp, n_gt)
    env = _envelope(precision)
    return [(float(r), float(p), float(e)) for r, p, e in zip(recall, precision, env)]


def evaluate_run(
    dets: Sequence[Detection], gts: Sequence[GroundTruth], cfg: EvalConfig
) -> dict:
    gt_classes = sorted({g.class_label for g in gts})
    unknown = sorted({d.class_label for d in dets} - set(gt_classes))
    if unknown:
        log.warning("detections with classes absent from ground truth: %s", ", ".join(unknown))
    per_class = {}
    curves = {}
    for cls in gt_classes:
        cd = [d for d in dets if d.class_label == cls]
        cg = [g for g in gts if g.class_label == cls]
        _, tp = match_detections(cd, cg, cfg)
        per_class[cls] = {
            "ap": average_precision(tp, len(cg)),
            "n_gt": len(cg),
            "n_det": len(cd),
            "n_tp": int(tp.sum()),
        }
        curves[cls] = pr_curve(tp, len(cg))
    aps = [v["ap"] for v in per_class.values()]
    return {
        "dimensionality": cfg.dimensionality,
        "iou_threshold": cfg.iou_threshold,
        "classes": per_class,
        "mAP": float(np.mean(aps)) if aps else 0.0,
        "unknown_classes": {c: sum(d.class_label == c for d in dets) for c in unknown},
        "pr_curves": curves,
    }


def pr_curves_csv(curves: dict[str, Iterable[tuple[float, float, float]]]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["class", "recall", "precision", "interpolated_precision"])
    for cls, pts in curves.items():
        for r, p, e in pts:
            writer.writerow([cls, repr(r), repr(p), repr(e)])
    return buf.getvalue()
