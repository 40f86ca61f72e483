"""COCO-style detection scoring: TP/FP assignment, PR curves, AP and mAP."""

from __future__ import annotations

import math
from collections import defaultdict
from dataclasses import dataclass, field

import numpy as np

from .geometry import BoxXyxy, iou

RECALL_POINTS = 101
SWEEP_THRESHOLDS = tuple(round(0.5 + 0.05 * i, 2) for i in range(10))


@dataclass(frozen=True)
class Detection:
    image_id: int
    category_id: int
    bbox: BoxXyxy
    score: float

    def __post_init__(self):
        if not np.isfinite(self.score):
            raise ValueError(f"non-finite detection score {self.score}")
        if not isinstance(self.bbox, BoxXyxy):
            raise TypeError("detection bbox must be a BoxXyxy")


@dataclass
class GroundTruthSet:
    """Ground-truth boxes per image plus the category registry."""

    boxes: dict = field(default_factory=dict)  # image_id -> [(category_id, BoxXyxy)]
    categories: dict = field(default_factory=dict)  # category_id -> name

    def add(self, image_id: int, category_id: int, box: BoxXyxy) -> None:
        if not isinstance(box, BoxXyxy):
            raise TypeError("ground-truth box must be a BoxXyxy")
        self.boxes.setdefault(image_id, []).append((category_id, box))
        self.categories.setdefault(category_id, str(category_id))

    def present_classes(self) -> list[int]:
        return sorted({c for items in self.boxes.values() for c, _ in items})

    def count(self, category_id: int) -> int:
        return sum(1 for items in self.boxes.values() for c, _ in items if c == category_id)


@dataclass(frozen=True)
class PRCurve:
    """Cumulative TP/FP counts after each ranked detection."""

    tp: tuple[int, ...]
    fp: tuple[int, ...]
    n_gt: int

    @property
    def recall(self) -> np.ndarray:
        if self.n_gt == 0:
            return np.zeros(len(self.tp))
        return np.asarray(self.tp, dtype=np.float64) / self.n_gt

    @property
    def precision(self) -> np.ndarray:
        tp = np.asarray(self.tp, dtype=np.float64)
        fp = np.asarray(self.fp, dtype=np.float64)
        return tp / np.maximum(tp + fp, 1.0)

    def samples(self) -> list[tuple[float, float]]:
        return list(zip(self.recall.tolist(), self.precision.tolist()))

    def __len__(self) -> int:
        return len(self.tp)


def _mean(values) -> float:
    # order-independent, correctly rounded
    return math.fsum(values) / len(values)


def _check_thresh(iou_thresh: float) -> None:
    if not 0.0 < iou_thresh < 1.0:
        raise ValueError(f"IoU threshold must lie in (0, 1), got {iou_thresh}")


def rank(dets) -> list[int]:
    """Indices by descending score; equal scores keep input order."""
    return sorted(range(len(dets)), key=lambda i: -dets[i].score)


def assign_tp_fp(dets, gts: GroundTruthSet, iou_thresh: float = 0.5) -> list[bool]:
    """Flag each detection as TP (``True``) or FP, in input order.

    Detections are visited by descending score; each claims the unclaimed
    same-class ground truth in its image with the highest IoU, provided
    that IoU is at least ``iou_thresh``.
    """
    _check_thresh(iou_thresh)
    flags = [False] * len(dets)
    claimed = defaultdict(set)  # (image, category) -> claimed gt indices
    for i in rank(dets):
        d = dets[i]
        key = (d.image_id, d.category_id)
        best_j, best_iou = -1, -1.0
        for j, (c, box) in enumerate(gts.boxes.get(d.image_id, ())):
            if c != d.category_id or j in claimed[key]:
                continue
            v = iou(d.bbox, box)
            if v >= iou_thresh and v > best_iou:
                best_j, best_iou = j, v
        if best_j >= 0:
            claimed[key].add(best_j)
            flags[i] = True
    return flags


def pr_curve(flags, n_gt: int) -> PRCurve:
    """Cumulative precision/recall for flags already in rank order."""
    tp, fp = [], []
    n_tp = n_fp = 0
    for f in flags:
        if f:
            n_tp += 1
        else:
            n_fp += 1
        tp.append(n_tp)
        fp.append(n_fp)
    return PRCurve(tuple(tp), tuple(fp), int(n_gt))


def average_precision(curve: PRCurve) -> float:
    """101-point interpolated AP.

    For each recall level r in {0, 0.01, ..., 1} take the best precision
    achieved at recall >= r (0 if never reached) and average.  Recall
    comparisons are done on integer counts so they are exact.
    """
    if curve.n_gt == 0 or len(curve) == 0:
        return 0.0
    prec = curve.precision
    envelope = np.maximum.accumulate(prec[::-1])[::-1]
    tp100 = 100 * np.asarray(curve.tp, dtype=np.int64)
    levels = np.arange(RECALL_POINTS, dtype=np.int64) * curve.n_gt
    # first rank position whose recall reaches each level
    pos = np.searchsorted(tp100, levels, side="left")
    reached = pos < len(curve)
    return math.fsum(envelope[pos[reached]].tolist()) / RECALL_POINTS


@dataclass
class EvalReport:
    ap: dict  # category_id -> {threshold: AP}
    categories: dict
    map_50: float
    map_sweep: float | None
    map_by_iou: dict = field(default_factory=dict)
    curves: dict = field(default_factory=dict, repr=False)  # category_id -> PRCurve at 0.5

    def to_dict(self) -> dict:
        per_class = {}
        for cid in sorted(self.ap):
            by_thr = self.ap[cid]
            entry = {
                "category_id": cid,
                "ap50": by_thr[0.5],
                "ap_by_iou": {f"{t:.2f}": v for t, v in sorted(by_thr.items())},
            }
            if all(t in by_thr for t in SWEEP_THRESHOLDS):
                entry["ap_sweep"] = _mean([by_thr[t] for t in SWEEP_THRESHOLDS])
            per_class[self.categories.get(cid, str(cid))] = entry
        return {
            "per_class": per_class,
            "map_50": self.map_50,
            "map_sweep": self.map_sweep,
            "map_by_iou": {f"{t:.2f}": v for t, v in sorted(self.map_by_iou.items())},
        }


def class_ap(dets, gts: GroundTruthSet, category_id: int, iou_thresh: float):
    mine = [d for d in dets if d.category_id == category_id]
    flags = assign_tp_fp(mine, gts, iou_thresh)
    ranked = [flags[i] for i in rank(mine)]
    curve = pr_curve(ranked, gts.count(category_id))
    return average_precision(curve), curve


def evaluate(dets, gts: GroundTruthSet, mode: str = "at_05", extra_thresholds=()) -> EvalReport:
    """Per-class AP and mAP over classes that have ground truth.

    ``mode="at_05"`` scores at IoU 0.5 only; ``mode="sweep"`` also scores
    0.50:0.05:0.95 and reports the mean over those thresholds.
    ``extra_thresholds`` are scored as well and show up in ``map_by_iou``
    but never in the sweep mean.
    """
    if mode not in ("at_05", "sweep"):
        raise ValueError(f"unknown mode {mode!r}")
    classes = gts.present_classes()
    if not classes:
        raise ValueError("empty ground truth")
    sweep = SWEEP_THRESHOLDS if mode == "sweep" else (0.5,)
    thresholds = list(sweep) + [t for t in extra_thresholds if t not in sweep]
    known = set(classes)
    dets = [d for d in dets if d.category_id in known]
    ap, curves = {}, {}
    for cid in classes:
        ap[cid] = {}
        for t in thresholds:
            value, curve = class_ap(dets, gts, cid, t)
            ap[cid][t] = value
            if t == 0.5:
                curves[cid] = curve
    map_50 = _mean([ap[c][0.5] for c in classes])
    map_by_iou = {t: _mean([ap[c][t] for c in classes]) for t in thresholds}
    map_sweep = None
    if mode == "sweep":
        map_sweep = _mean([_mean([ap[c][t] for t in sweep]) for c in classes])
    return EvalReport(ap, dict(gts.categories), map_50, map_sweep, map_by_iou, curves)
