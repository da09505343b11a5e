"""Detection evaluation: matching, AP, mAP@0.5, size-bucketed AP, LAMR, FPS."""
from __future__ import annotations

import math
import statistics
import time
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .boxes import BBox, Detection, iou

TP, FP, IGNORED = 1, 0, -1
DEFAULT_BUCKETS = (32.0 ** 2, 96.0 ** 2)
LAMR_FLOOR = 1e-10


def default_fppi_points() -> np.ndarray:
    return np.logspace(-2.0, 0.0, 9)


@dataclass(frozen=True)
class GroundTruth:
    box: BBox
    class_id: int
    image_id: int = 0


def _score_order(dets: Sequence[Detection]) -> list[int]:
    return sorted(range(len(dets)), key=lambda i: -dets[i].score)


def _match(dets, gts, iou_thr: float, keep: Optional[Callable[[GroundTruth], bool]] = None) -> list[int]:
    """Greedy per-(image, class) matching; returns TP/FP/IGNORED per detection.

    Ground truths rejected by ``keep`` never produce a TP; a detection that
    only overlaps them is IGNORED instead of FP.
    """
    by_key = defaultdict(list)
    for j, g in enumerate(gts):
        by_key[g.image_id, g.class_id].append(j)
    used = set()
    flags = [FP] * len(dets)
    for i in _score_order(dets):
        d = dets[i]
        best, best_iou, outside = None, iou_thr, False
        for j in by_key.get((d.image_id, d.class_id), ()):
            ov = iou(d.box, gts[j].box)
            if keep is not None and not keep(gts[j]):
                outside = outside or ov >= iou_thr
                continue
            if j in used or ov < best_iou:
                continue
            if best is None or ov > best_iou:
                best, best_iou = j, ov
        if best is not None:
            used.add(best)
            flags[i] = TP
        elif outside:
            flags[i] = IGNORED
    return flags


def match_detections(dets: Sequence[Detection], gts: Sequence[GroundTruth], iou_thr: float = 0.5) -> list[bool]:
    """TP flag per detection (input order) under greedy score-ordered matching."""
    return [f == TP for f in _match(dets, gts, iou_thr)]


def average_precision(flags: Sequence[bool], n_gt: int, scores: Optional[Sequence[float]] = None) -> float:
    """All-point interpolated AP.

    ``flags`` are TP markers, already in descending score order unless
    ``scores`` is given.  AP is 0 when there are no ground truths.
    """
    if n_gt <= 0:
        return 0.0
    flags = np.asarray(flags, dtype=bool)
    if scores is not None:
        flags = flags[np.argsort(-np.asarray(scores, dtype=float), kind="stable")]
    if flags.size == 0:
        return 0.0
    tp = np.cumsum(flags)
    fp = np.cumsum(~flags)
    recall = tp / n_gt
    precision = tp / (tp + fp)
    mrec = np.concatenate([[0.0], recall, [1.0]])
    mpre = np.concatenate([[0.0], precision, [0.0]])
    mpre = np.maximum.accumulate(mpre[::-1])[::-1]
    steps = np.nonzero(mrec[1:] != mrec[:-1])[0]
    return float(np.sum((mrec[steps + 1] - mrec[steps]) * mpre[steps + 1]))


def _class_ap(dets, gts, iou_thr, keep=None) -> dict[int, float]:
    flags = _match(dets, gts, iou_thr, keep)
    out = {}
    classes = sorted({g.class_id for g in gts if keep is None or keep(g)})
    for c in classes:
        n_gt = sum(1 for g in gts if g.class_id == c and (keep is None or keep(g)))
        idx = [i for i, d in enumerate(dets) if d.class_id == c and flags[i] != IGNORED]
        out[c] = average_precision([flags[i] == TP for i in idx], n_gt, [dets[i].score for i in idx])
    return out


def per_class_ap(dets, gts, iou_thr: float = 0.5) -> dict[int, float]:
    """AP for every class with at least one ground truth."""
    return _class_ap(list(dets), list(gts), iou_thr)


def mean_ap(dets, gts, iou_thr: float = 0.5) -> Optional[float]:
    aps = per_class_ap(dets, gts, iou_thr)
    return float(np.mean(list(aps.values()))) if aps else None


def size_bucketed_ap(dets, gts, buckets=DEFAULT_BUCKETS, iou_thr: float = 0.5):
    """``(ap_small, ap_medium, ap_large)``; ``None`` for an empty bucket.

    Buckets split ground-truth area at ``t1 < t2`` into ``[0, t1)``,
    ``[t1, t2)`` and ``[t2, inf)``.
    """
    t1, t2 = buckets
    if not t1 < t2:
        raise ValueError("bucket thresholds must satisfy t1 < t2")
    dets, gts = list(dets), list(gts)
    ranges = ((0.0, t1), (t1, t2), (t2, math.inf))
    out = []
    for lo, hi in ranges:
        aps = _class_ap(dets, gts, iou_thr, keep=lambda g, lo=lo, hi=hi: lo <= g.box.area < hi)
        out.append(float(np.mean(list(aps.values()))) if aps else None)
    return tuple(out)


def miss_rate_curve(dets, gts, n_images: int, iou_thr: float = 0.5) -> list[tuple[float, float, float]]:
    """``(threshold, fppi, miss_rate)`` at every distinct score, high to low."""
    dets, gts = list(dets), list(gts)
    flags = _match(dets, gts, iou_thr)
    n_gt = len(gts)
    order = _score_order(dets)
    points, tp, fp = [], 0, 0
    for rank, i in enumerate(order):
        tp += flags[i] == TP
        fp += flags[i] != TP
        last = rank + 1 == len(order) or dets[order[rank + 1]].score != dets[i].score
        if last:
            points.append((dets[i].score, fp / n_images, 1.0 - tp / n_gt))
    return points


def lamr(dets, gts, n_images: Optional[int] = None, fppi_points=None, iou_thr: float = 0.5) -> Optional[float]:
    """Log-average miss rate over log-spaced FPPI reference points.

    At each reference point the miss rate of the operating point with the
    largest FPPI not above it is used (the highest-threshold point when none
    qualifies).  Returns ``None`` without ground truths.
    """
    dets, gts = list(dets), list(gts)
    if not gts:
        return None
    if n_images is None:
        n_images = len({g.image_id for g in gts} | {d.image_id for d in dets})
    if n_images < 1:
        raise ValueError("lamr needs at least one image")
    refs = default_fppi_points() if fppi_points is None else np.asarray(fppi_points, dtype=float)
    curve = miss_rate_curve(dets, gts, n_images, iou_thr)
    sampled = []
    for ref in refs:
        if not curve:
            sampled.append(1.0)
            continue
        below = [(fppi, -mr) for _, fppi, mr in curve if fppi <= ref]
        if below:
            sampled.append(-max(below)[1])
        else:
            sampled.append(curve[0][2])
    logs = np.log(np.maximum(np.asarray(sampled), LAMR_FLOOR))
    if np.all(logs == logs[0]):
        return float(max(sampled[0], LAMR_FLOOR))
    return float(np.exp(logs.mean()))


@dataclass(frozen=True)
class FPSResult:
    fps: float
    p50_seconds: float
    iters: int
    elapsed: float


def fps_benchmark(work: Callable[[], object], warmup: int = 1, iters: int = 10) -> FPSResult:
    """Frames per second of ``work`` over ``iters`` timed calls."""
    if iters < 1:
        raise ValueError("iters must be >= 1")
    for _ in range(warmup):
        work()
    durations = []
    start = time.perf_counter()
    for _ in range(iters):
        t0 = time.perf_counter()
        work()
        durations.append(time.perf_counter() - t0)
    elapsed = time.perf_counter() - start
    if elapsed <= 0:
        raise RuntimeError("non-positive elapsed time")
    return FPSResult(iters / elapsed, statistics.median(durations), iters, elapsed)


@dataclass
class EvalReport:
    per_class: dict  # name -> {"ap": float, "lamr": float | None}
    map50: Optional[float]
    ap_s: Optional[float]
    ap_m: Optional[float]
    ap_l: Optional[float]
    fps: Optional[float] = None
    config_echo: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return {
            "per_class": self.per_class,
            "map50": self.map50,
            "ap_s": self.ap_s,
            "ap_m": self.ap_m,
            "ap_l": self.ap_l,
            "fps": self.fps,
            "config_echo": self.config_echo,
        }


def evaluate(dets, gts, class_names: Sequence[str], n_images: int, iou_thr: float = 0.5,
             buckets=DEFAULT_BUCKETS, fps: Optional[float] = None, config_echo=None) -> EvalReport:
    dets, gts = list(dets), list(gts)
    aps = per_class_ap(dets, gts, iou_thr)
    per_class = {}
    for c, ap in aps.items():
        class_lamr = lamr([d for d in dets if d.class_id == c], [g for g in gts if g.class_id == c],
                          n_images, iou_thr=iou_thr)
        per_class[class_names[c]] = {"ap": ap, "lamr": class_lamr}
    ap_s, ap_m, ap_l = size_bucketed_ap(dets, gts, buckets, iou_thr)
    map50 = float(np.mean(list(aps.values()))) if aps else None
    return EvalReport(per_class, map50, ap_s, ap_m, ap_l, fps, dict(config_echo or {}))
