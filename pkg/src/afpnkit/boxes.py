"""Box overlap measures, GIoU/CIoU losses and non-maximum suppression.

Boxes are center-form ``(x, y, w, h)`` in pixels.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Iterable, NamedTuple, Sequence

import numpy as np

_V_FACTOR = 4.0 / math.pi ** 2


@dataclass(frozen=True)
class BBox:
    x: float
    y: float
    w: float
    h: float

    def __post_init__(self):
        if not (self.w > 0 and self.h > 0):
            raise ValueError(f"box width and height must be positive, got w={self.w}, h={self.h}")

    @classmethod
    def from_corners(cls, x1, y1, x2, y2) -> "BBox":
        return cls((x1 + x2) / 2, (y1 + y2) / 2, x2 - x1, y2 - y1)

    @property
    def corners(self) -> tuple[float, float, float, float]:
        return (self.x - self.w / 2, self.y - self.h / 2, self.x + self.w / 2, self.y + self.h / 2)

    @property
    def area(self) -> float:
        return self.w * self.h

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.w, self.h])

    def transposed(self) -> "BBox":
        return BBox(self.y, self.x, self.h, self.w)

    def scaled(self, s: float) -> "BBox":
        return BBox(self.x * s, self.y * s, self.w * s, self.h * s)

    def shifted(self, dx: float, dy: float) -> "BBox":
        return BBox(self.x + dx, self.y + dy, self.w, self.h)


@dataclass(frozen=True)
class Detection:
    box: BBox
    class_id: int
    score: float
    image_id: int = 0

    def __post_init__(self):
        if not 0.0 <= self.score <= 1.0:
            raise ValueError(f"detection score must lie in [0, 1], got {self.score}")


class CIoUBreakdown(NamedTuple):
    iou: float
    rho2: float
    c2: float
    v: float
    alpha: float
    penalty: float
    loss: float


def _intersection(a: BBox, b: BBox) -> tuple[float, float]:
    ax1, ay1, ax2, ay2 = a.corners
    bx1, by1, bx2, by2 = b.corners
    return max(0.0, min(ax2, bx2) - max(ax1, bx1)), max(0.0, min(ay2, by2) - max(ay1, by1))


def _enclosing(a: BBox, b: BBox) -> tuple[float, float]:
    ax1, ay1, ax2, ay2 = a.corners
    bx1, by1, bx2, by2 = b.corners
    return max(ax2, bx2) - min(ax1, bx1), max(ay2, by2) - min(ay1, by1)


def _corner_area(b: BBox) -> float:
    # measured from the corners so that a box overlaps itself exactly
    x1, y1, x2, y2 = b.corners
    return (x2 - x1) * (y2 - y1)


def _inter_union(a: BBox, b: BBox) -> tuple[float, float]:
    iw, ih = _intersection(a, b)
    inter = iw * ih
    return inter, _corner_area(a) + _corner_area(b) - inter


def iou(a: BBox, b: BBox) -> float:
    inter, union = _inter_union(a, b)
    return min(1.0, inter / union)


def giou_loss(pred: BBox, gt: BBox) -> float:
    inter, union = _inter_union(pred, gt)
    cw, ch = _enclosing(pred, gt)
    enclose = cw * ch
    return 1.0 - inter / union + (enclose - union) / enclose


def _aspect_term(pred: BBox, gt: BBox) -> tuple[float, float]:
    diff = math.atan(gt.w / gt.h) - math.atan(pred.w / pred.h)
    return _V_FACTOR * diff * diff, diff


def _trade_off(overlap: float, v: float) -> float:
    denom = (1.0 - overlap) + v
    # pred == gt: define alpha = 0 so the minimum has zero penalty gradient
    return 0.0 if denom <= 0.0 else v / denom


def ciou_terms(pred: BBox, gt: BBox) -> CIoUBreakdown:
    overlap = iou(pred, gt)
    rho2 = (pred.x - gt.x) ** 2 + (pred.y - gt.y) ** 2
    cw, ch = _enclosing(pred, gt)
    c2 = cw * cw + ch * ch
    v, _ = _aspect_term(pred, gt)
    alpha = _trade_off(overlap, v)
    penalty = rho2 / c2 + alpha * v
    return CIoUBreakdown(
        float(overlap), float(rho2), float(c2), v, alpha, float(penalty), float(1.0 - overlap + penalty)
    )


def ciou_loss(pred: BBox, gt: BBox, alpha: float | None = None) -> float:
    """CIoU loss; pass ``alpha`` to hold the trade-off weight fixed."""
    t = ciou_terms(pred, gt)
    if alpha is None:
        return t.loss
    return 1.0 - t.iou + t.rho2 / t.c2 + alpha * t.v


def _step(cond: bool) -> float:
    return 1.0 if cond else 0.0


def ciou_grad(pred: BBox, gt: BBox, constant_alpha: bool = True) -> np.ndarray:
    """Analytic gradient of the CIoU loss w.r.t. ``pred``'s ``(x, y, w, h)``.

    By default alpha is treated as a constant, the usual convention for
    training with CIoU.  ``constant_alpha=False`` also differentiates alpha.
    """
    px1, py1, px2, py2 = pred.corners
    gx1, gy1, gx2, gy2 = gt.corners

    # d(corner)/d(x, y, w, h) for pred: x1 = x - w/2, x2 = x + w/2
    def overlap_side(lo_gt, hi_gt, lo, hi):
        # d/d(center), d/d(size) of min(hi, hi_gt) - max(lo, lo_gt)
        d_hi = _step(hi < hi_gt)
        d_lo = _step(lo > lo_gt)
        return d_hi - d_lo, 0.5 * d_hi + 0.5 * d_lo

    def enclose_side(lo_gt, hi_gt, lo, hi):
        d_hi = _step(hi > hi_gt)
        d_lo = _step(lo < lo_gt)
        return d_hi - d_lo, 0.5 * d_hi + 0.5 * d_lo

    iw, ih = _intersection(pred, gt)
    inter = iw * ih
    union = pred.area + gt.area - inter
    overlap = inter / union

    d_iw = np.zeros(4)
    d_ih = np.zeros(4)
    if iw > 0 and ih > 0:
        d_iw[0], d_iw[2] = overlap_side(gx1, gx2, px1, px2)
        d_ih[1], d_ih[3] = overlap_side(gy1, gy2, py1, py2)
    d_inter = d_iw * ih + d_ih * iw
    d_area = np.array([0.0, 0.0, pred.h, pred.w])
    d_union = d_area - d_inter
    d_iou = (d_inter * union - inter * d_union) / (union * union)

    cw, ch = _enclosing(pred, gt)
    c2 = cw * cw + ch * ch
    d_cw = np.zeros(4)
    d_ch = np.zeros(4)
    d_cw[0], d_cw[2] = enclose_side(gx1, gx2, px1, px2)
    d_ch[1], d_ch[3] = enclose_side(gy1, gy2, py1, py2)
    d_c2 = 2 * cw * d_cw + 2 * ch * d_ch

    rho2 = (pred.x - gt.x) ** 2 + (pred.y - gt.y) ** 2
    d_rho2 = np.array([2 * (pred.x - gt.x), 2 * (pred.y - gt.y), 0.0, 0.0])
    d_dist = (d_rho2 * c2 - rho2 * d_c2) / (c2 * c2)

    v, diff = _aspect_term(pred, gt)
    norm = pred.w ** 2 + pred.h ** 2
    d_v = np.array([0.0, 0.0, -2 * _V_FACTOR * diff * pred.h / norm, 2 * _V_FACTOR * diff * pred.w / norm])
    alpha = _trade_off(overlap, v)

    grad = -d_iou + d_dist + alpha * d_v
    if not constant_alpha:
        denom = (1.0 - overlap) + v
        if denom > 0:
            d_alpha = (d_v * (1.0 - overlap) + v * d_iou) / (denom * denom)
            grad = grad + v * d_alpha
    return grad


def nms(dets: Sequence[Detection], iou_threshold: float, mode: str = "greedy") -> list[Detection]:
    """Per-class non-maximum suppression.

    Kept detections are returned in input order.  In ``weighted`` mode each
    kept box becomes the score-weighted mean of itself and the boxes it
    suppressed; its score is unchanged.
    """
    if not 0.0 < iou_threshold < 1.0:
        raise ValueError("iou_threshold must lie in (0, 1)")
    if mode not in ("greedy", "weighted"):
        raise ValueError(f"unknown nms mode {mode!r}")
    dets = list(dets)
    order = sorted(range(len(dets)), key=lambda i: -dets[i].score)
    alive = [True] * len(dets)
    kept: dict[int, Detection] = {}
    for i in order:
        if not alive[i]:
            continue
        alive[i] = False
        group = [i]
        for j in order:
            if alive[j] and dets[j].class_id == dets[i].class_id and iou(dets[i].box, dets[j].box) > iou_threshold:
                alive[j] = False
                group.append(j)
        det = dets[i]
        if mode == "weighted" and len(group) > 1:
            weights = np.array([dets[g].score for g in group])
            coords = np.array([dets[g].box.as_array() for g in group])
            if weights.sum() > 0:
                mean = weights @ coords / weights.sum()
                det = replace(det, box=BBox(*(float(c) for c in mean)))
        kept[i] = det
    return [kept[i] for i in sorted(kept)]


def pairwise_iou(boxes: Iterable[BBox]) -> np.ndarray:
    boxes = list(boxes)
    out = np.zeros((len(boxes), len(boxes)))
    for i, a in enumerate(boxes):
        for j, b in enumerate(boxes):
            out[i, j] = iou(a, b)
    return out
