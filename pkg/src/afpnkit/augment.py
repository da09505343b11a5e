"""The 15 augmentation operations over detection samples.

Images are ``(1, 3, H, W)`` float arrays in ``[0, 1]``.  Box coordinates are
continuous pixel coordinates: pixel ``(row i, col j)`` covers
``[j, j+1) x [i, i+1)``, so its center sits at ``(j + 0.5, i + 0.5)``.
Geometric ops map pixels and boxes through the same affine transform.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Optional, Sequence

import numpy as np
from scipy import ndimage

from .boxes import BBox
from .policy import AugOpSpec, Policy, SubPolicy
from .tensor import resize_bilinear

BACKGROUND = -1
MIN_BOX_SIDE = 1.0
POOL_REQUIREMENTS = {"Mosaic": 3, "CutMix": 1, "Mixup": 1, "SnapMix": 1}


class AugmentError(ValueError):
    pass


@dataclass(frozen=True)
class AnnotatedBox:
    box: BBox
    class_id: int
    weight: float = 1.0


@dataclass(frozen=True)
class Sample:
    image: np.ndarray
    boxes: tuple[AnnotatedBox, ...] = ()
    label_weights: Optional[dict[int, float]] = None

    def __post_init__(self):
        img = np.asarray(self.image, dtype=np.float64)
        if img.ndim != 4 or img.shape[0] != 1 or img.shape[1] != 3:
            raise AugmentError(f"image must have shape (1, 3, H, W), got {img.shape}")
        if img.shape[2] < 1 or img.shape[3] < 1:
            raise AugmentError(f"zero-area image {img.shape}")
        object.__setattr__(self, "image", img)
        object.__setattr__(self, "boxes", tuple(self.boxes))

    @property
    def height(self) -> int:
        return self.image.shape[2]

    @property
    def width(self) -> int:
        return self.image.shape[3]

    def effective_label_weights(self) -> dict[int, float]:
        if self.label_weights is not None:
            return dict(self.label_weights)
        classes = sorted({b.class_id for b in self.boxes})
        if not classes:
            return {BACKGROUND: 1.0}
        return {c: 1.0 / len(classes) for c in classes}


def _mix_labels(parts) -> dict[int, float]:
    out: dict[int, float] = {}
    for weight, labels in parts:
        for cls, w in labels.items():
            out[cls] = out.get(cls, 0.0) + weight * w
    total = sum(out.values())
    return {cls: w / total for cls, w in sorted(out.items())}


def _finish(s: Sample, image: np.ndarray, boxes=None, label_weights=None) -> Sample:
    return Sample(
        np.clip(image, 0.0, 1.0),
        s.boxes if boxes is None else tuple(boxes),
        s.label_weights if label_weights is None else label_weights,
    )


# -- geometry ---------------------------------------------------------------

def _clip_box(x1, y1, x2, y2, width, height) -> Optional[BBox]:
    x1, x2 = max(0.0, x1), min(float(width), x2)
    y1, y2 = max(0.0, y1), min(float(height), y2)
    if x2 - x1 < MIN_BOX_SIDE or y2 - y1 < MIN_BOX_SIDE:
        return None
    return BBox.from_corners(x1, y1, x2, y2)


def transform_boxes(boxes, matrix: np.ndarray, offset: np.ndarray, width: int, height: int):
    """Map box corners through ``p -> matrix @ p + offset``, re-fit, clip."""
    out = []
    for ab in boxes:
        x1, y1, x2, y2 = ab.box.corners
        pts = np.array([[x1, y1], [x2, y1], [x1, y2], [x2, y2]]) @ matrix.T + offset
        lo, hi = pts.min(axis=0), pts.max(axis=0)
        clipped = _clip_box(lo[0], lo[1], hi[0], hi[1], width, height)
        if clipped is not None:
            out.append(replace(ab, box=clipped))
    return out


def warp_image(image: np.ndarray, matrix: np.ndarray, offset: np.ndarray) -> np.ndarray:
    """Resample ``image`` under the forward map ``p -> matrix @ p + offset``.

    ``matrix`` and ``offset`` act on ``(x, y)`` continuous coordinates;
    uncovered pixels are filled with 0.
    """
    inv = np.linalg.inv(matrix)
    # input_idx = inv @ (out_idx + 0.5 - offset) - 0.5, rewritten in (row, col) order
    swap = np.array([[0, 1], [1, 0]])
    m_rc = swap @ inv @ swap
    off_xy = inv @ (np.array([0.5, 0.5]) - offset) - 0.5
    off_rc = off_xy[::-1]
    out = np.empty_like(image)
    for c in range(image.shape[1]):
        out[0, c] = ndimage.affine_transform(
            image[0, c], m_rc, offset=off_rc, order=1, mode="constant", cval=0.0
        )
    return out


def _affine(s: Sample, matrix: np.ndarray, offset: np.ndarray) -> Sample:
    image = warp_image(s.image, matrix, offset)
    boxes = transform_boxes(s.boxes, matrix, offset, s.width, s.height)
    return _finish(s, image, boxes)


def _about_center(s: Sample, matrix: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    center = np.array([s.width / 2, s.height / 2])
    return matrix, center - matrix @ center


def translate(s: Sample, dx: int, dy: int) -> Sample:
    """Integer pixel shift; vacated pixels become 0."""
    h, w = s.height, s.width
    image = np.zeros_like(s.image)
    src_y = slice(max(0, -dy), min(h, h - dy))
    dst_y = slice(max(0, dy), min(h, h + dy))
    src_x = slice(max(0, -dx), min(w, w - dx))
    dst_x = slice(max(0, dx), min(w, w + dx))
    if src_y.start < src_y.stop and src_x.start < src_x.stop:
        image[:, :, dst_y, dst_x] = s.image[:, :, src_y, src_x]
    boxes = transform_boxes(s.boxes, np.eye(2), np.array([dx, dy], float), w, h)
    return _finish(s, image, boxes)


def _translate_x(s, m, rng, pool):
    return translate(s, int(round(m * s.width)), 0)


def _translate_y(s, m, rng, pool):
    return translate(s, 0, int(round(m * s.height)))


def _shear(s, m, rng, pool):
    return _affine(s, *_about_center(s, np.array([[1.0, m], [0.0, 1.0]])))


def _rotate(s, m, rng, pool):
    t = math.radians(m)
    # y grows downward, so this turns the picture counter-clockwise on screen
    rot = np.array([[math.cos(t), math.sin(t)], [-math.sin(t), math.cos(t)]])
    return _affine(s, *_about_center(s, rot))


def _zoom(s, m, rng, pool):
    return _affine(s, *_about_center(s, np.eye(2) * m))


# -- photometric -------------------------------------------------------------

def _brightness(s, m, rng, pool):
    return _finish(s, s.image + m)


def _contrast(s, m, rng, pool):
    mean = s.image.mean()
    return _finish(s, mean + (s.image - mean) * m)


def _color_jitter(s, m, rng, pool):
    gains = 1.0 + m * rng.uniform(-1.0, 1.0, size=3)
    return _finish(s, s.image * gains[None, :, None, None])


def _noise(s, m, rng, pool):
    return _finish(s, s.image + rng.normal(0.0, 1.0, size=s.image.shape) * m)


def _blur(s, m, rng, pool):
    if m <= 0:
        return _finish(s, s.image.copy())
    out = np.empty_like(s.image)
    for c in range(3):
        out[0, c] = ndimage.gaussian_filter(s.image[0, c], sigma=m, mode="nearest")
    return _finish(s, out)


def _random_rect(rng, height: int, width: int, rh: int, rw: int) -> tuple[int, int, int, int]:
    y0 = int(rng.integers(0, height - rh + 1))
    x0 = int(rng.integers(0, width - rw + 1))
    return y0, x0, rh, rw


def _erasing(s, m, rng, pool):
    rh = min(s.height, int(round(m * s.height)))
    rw = min(s.width, int(round(m * s.width)))
    y0, x0, rh, rw = _random_rect(rng, s.height, s.width, rh, rw)
    image = s.image.copy()
    image[:, :, y0:y0 + rh, x0:x0 + rw] = 0.0
    return _finish(s, image)


# -- mixing ------------------------------------------------------------------

def _rescale_boxes(boxes, sx: float, sy: float, dx: float, dy: float, width: int, height: int):
    matrix = np.diag([sx, sy])
    return transform_boxes(boxes, matrix, np.array([dx, dy]), width, height)


def fit_to(other: Sample, height: int, width: int) -> Sample:
    """Resize ``other`` (pixels and boxes) to ``height x width``."""
    if (other.height, other.width) == (height, width):
        return other
    image = resize_bilinear(other.image, height, width)
    boxes = _rescale_boxes(other.boxes, width / other.width, height / other.height, 0.0, 0.0, width, height)
    return Sample(image, boxes, other.label_weights)


def _tag(boxes, factor: float):
    return [replace(b, weight=b.weight * factor) for b in boxes]


def _pick(pool, rng) -> Sample:
    return pool[int(rng.integers(len(pool)))]


def _cutmix(s, m, rng, pool):
    other = fit_to(_pick(pool, rng), s.height, s.width)
    side = math.sqrt(m)
    rh = min(s.height, int(round(side * s.height)))
    rw = min(s.width, int(round(side * s.width)))
    y0, x0, rh, rw = _random_rect(rng, s.height, s.width, rh, rw)
    image = s.image.copy()
    image[:, :, y0:y0 + rh, x0:x0 + rw] = other.image[:, :, y0:y0 + rh, x0:x0 + rw]
    lam = rh * rw / (s.height * s.width)
    labels = _mix_labels([(1 - lam, s.effective_label_weights()), (lam, other.effective_label_weights())])
    boxes = _tag(s.boxes, 1 - lam) + _tag(other.boxes, lam)
    return _finish(s, image, boxes, labels)


def _mixup(s, m, rng, pool):
    other = fit_to(_pick(pool, rng), s.height, s.width)
    image = (1 - m) * s.image + m * other.image
    labels = _mix_labels([(1 - m, s.effective_label_weights()), (m, other.effective_label_weights())])
    boxes = _tag(s.boxes, 1 - m) + _tag(other.boxes, m)
    return _finish(s, image, boxes, labels)


def _snapmix(s, m, rng, pool):
    # area-proportional stand-in for the CAM-weighted original: source and
    # target rectangles are sized independently
    other = fit_to(_pick(pool, rng), s.height, s.width)
    h, w = s.height, s.width

    def rect_size():
        side = math.sqrt(min(1.0, m * rng.uniform(0.5, 1.5)))
        return max(1, min(h, int(round(side * h)))), max(1, min(w, int(round(side * w))))

    th, tw = rect_size()
    sh, sw = rect_size()
    ty, tx, th, tw = _random_rect(rng, h, w, th, tw)
    sy, sx, sh, sw = _random_rect(rng, h, w, sh, sw)
    patch = resize_bilinear(other.image[:, :, sy:sy + sh, sx:sx + sw], th, tw)
    image = s.image.copy()
    image[:, :, ty:ty + th, tx:tx + tw] = patch
    kept = 1.0 - th * tw / (h * w)
    gained = sh * sw / (h * w)
    total = kept + gained
    labels = _mix_labels([(kept / total, s.effective_label_weights()),
                          (gained / total, other.effective_label_weights())])
    moved = transform_boxes(other.boxes, np.diag([tw / sw, th / sh]),
                            np.array([tx - sx * tw / sw, ty - sy * th / sh]), w, h)
    moved = [b for b in (_clip_to_rect(ab, tx, ty, tw, th) for ab in moved) if b is not None]
    boxes = _tag(s.boxes, kept / total) + _tag(moved, gained / total)
    return _finish(s, image, boxes, labels)


def _clip_to_rect(ab: AnnotatedBox, x0, y0, w, h) -> Optional[AnnotatedBox]:
    x1, y1, x2, y2 = ab.box.corners
    box = _clip_box(x1 - x0, y1 - y0, x2 - x0, y2 - y0, w, h)
    return None if box is None else replace(ab, box=box.shifted(x0, y0))


def mosaic(samples: Sequence[Sample], split_x: int, split_y: int, height: int, width: int) -> Sample:
    """Tile four samples into the quadrants of a ``height x width`` canvas.

    Each source image is rescaled whole into its quadrant: top-left,
    top-right, bottom-left, bottom-right in that order.
    """
    canvas = np.zeros((1, 3, height, width))
    rects = [
        (0, 0, split_y, split_x),
        (0, split_x, split_y, width - split_x),
        (split_y, 0, height - split_y, split_x),
        (split_y, split_x, height - split_y, width - split_x),
    ]
    boxes, labels = [], []
    for src, (y0, x0, qh, qw) in zip(samples, rects):
        canvas[:, :, y0:y0 + qh, x0:x0 + qw] = resize_bilinear(src.image, qh, qw)
        boxes += _rescale_boxes(src.boxes, qw / src.width, qh / src.height, x0, y0, width, height)
        labels.append((qh * qw / (height * width), src.effective_label_weights()))
    return Sample(np.clip(canvas, 0.0, 1.0), tuple(boxes), _mix_labels(labels))


def _mosaic(s, m, rng, pool, canvas=None):
    height, width = canvas or (s.height, s.width)
    if height < 2 or width < 2:
        raise AugmentError("mosaic canvas needs at least 2x2 pixels")
    picks = rng.choice(len(pool), size=3, replace=False)
    split_x = int(round(width * (0.5 + m * rng.uniform(-1.0, 1.0))))
    split_y = int(round(height * (0.5 + m * rng.uniform(-1.0, 1.0))))
    split_x = min(max(split_x, 1), width - 1)
    split_y = min(max(split_y, 1), height - 1)
    return mosaic([s] + [pool[int(i)] for i in picks], split_x, split_y, height, width)


_OPS = {
    "TranslateX": _translate_x,
    "TranslateY": _translate_y,
    "Shear": _shear,
    "Rotate": _rotate,
    "Zoom": _zoom,
    "Brightness": _brightness,
    "Contrast": _contrast,
    "ColorJitter": _color_jitter,
    "Noise": _noise,
    "Blur": _blur,
    "Erasing": _erasing,
    "CutMix": _cutmix,
    "Mixup": _mixup,
    "SnapMix": _snapmix,
    "Mosaic": _mosaic,
}


def apply_op(s: Sample, spec: AugOpSpec, rng: np.random.Generator,
             pool: Optional[Sequence[Sample]] = None, canvas: Optional[tuple[int, int]] = None) -> Sample:
    """Apply ``spec`` with its probability; otherwise return ``s`` itself.

    ``canvas`` sets Mosaic's output ``(height, width)``; it defaults to the
    input size.
    """
    need = POOL_REQUIREMENTS.get(spec.kind, 0)
    if need and (pool is None or len(pool) < need):
        raise AugmentError(f"{spec.kind} needs a pool of at least {need} extra samples")
    if rng.random() >= spec.probability:
        return s
    if spec.kind == "Mosaic":
        return _mosaic(s, spec.magnitude, rng, pool, canvas)
    return _OPS[spec.kind](s, spec.magnitude, rng, pool)


def apply_subpolicy(s: Sample, sub: SubPolicy, rng, pool=None, canvas=None) -> Sample:
    for spec in sub.ops:
        s = apply_op(s, spec, rng, pool, canvas)
    return s


def choose_subpolicy(p: Policy, rng) -> int:
    return int(rng.integers(len(p.subs)))


def apply_policy(s: Sample, p: Policy, rng, pool=None, canvas=None) -> Sample:
    return apply_subpolicy(s, p.subs[choose_subpolicy(p, rng)], rng, pool, canvas)
