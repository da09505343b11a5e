"""Self-checks behind ``afpnkit neck-check`` and ``afpnkit grad-check``."""
from __future__ import annotations

from typing import Callable

import numpy as np

from .boxes import BBox, ciou_grad, ciou_loss, ciou_terms
from .neck import NeckConfig, aam_forward, affpn_forward, pyramid_shapes, recompose_forward, weight_shapes
from .tensor import ConvSpec, conv2d, finite_diff_grad
from .weights import WeightStore

GRAD_TOLERANCE = 1e-3
GRAD_EPS = 1e-5
NECK_RESIDUAL_TOLERANCE = 1e-6
_EDGE_MARGIN = 1e-2


def _edges_separated(a: BBox, b: BBox) -> bool:
    ax1, ay1, ax2, ay2 = a.corners
    bx1, by1, bx2, by2 = b.corners
    pairs = [(ax1, bx1), (ax2, bx2), (ax1, bx2), (ax2, bx1), (ay1, by1), (ay2, by2), (ay1, by2), (ay2, by1)]
    return all(abs(p - q) > _EDGE_MARGIN for p, q in pairs)


def random_box_pair(rng: np.random.Generator) -> tuple[BBox, BBox]:
    """A (pred, gt) pair away from every kink of the CIoU loss."""
    while True:
        gt = BBox(*rng.uniform(20, 80, 2), *rng.uniform(4, 40, 2))
        pred = BBox(gt.x + rng.normal(0, 0.4 * gt.w), gt.y + rng.normal(0, 0.4 * gt.h),
                    gt.w * rng.uniform(0.4, 2.0), gt.h * rng.uniform(0.4, 2.0))
        if _edges_separated(pred, gt):
            return pred, gt


def relative_errors(analytic: np.ndarray, numeric: np.ndarray) -> np.ndarray:
    """Per-coordinate error scaled so 1e-3 means ``max(1e-4, 1e-3 |g|)``."""
    return np.abs(analytic - numeric) / np.maximum(np.abs(numeric), 0.1)


def grad_check(trials: int, seed: int, grad_fn: Callable[[BBox, BBox], np.ndarray] = ciou_grad,
               eps: float = GRAD_EPS) -> dict:
    """Compare the analytic CIoU gradient with central differences.

    Alpha is frozen at its value at the evaluation point, matching the
    constant-alpha convention of :func:`ciou_grad`.
    """
    rng = np.random.default_rng(seed)
    worst, worst_case, overlapping = 0.0, None, 0
    for t in range(trials):
        pred, gt = random_box_pair(rng)
        terms = ciou_terms(pred, gt)
        overlapping += terms.iou > 0
        numeric = finite_diff_grad(lambda v: ciou_loss(BBox(*v), gt, alpha=terms.alpha), pred.as_array(), eps)
        err = float(relative_errors(np.asarray(grad_fn(pred, gt)), numeric).max())
        if err > worst:
            worst, worst_case = err, t
    return {
        "trials": trials,
        "seed": seed,
        "eps": eps,
        "overlapping_pairs": int(overlapping),
        "max_rel_error": worst,
        "worst_trial": worst_case,
        "tolerance": GRAD_TOLERANCE,
        "passed": bool(worst <= GRAD_TOLERANCE),
    }


def neck_check(cfg: NeckConfig, weights: WeightStore, seed: int = 0, input_size: int = 608) -> dict:
    """Run the neck on seeded random backbone features and test its invariants."""
    weights.require(weight_shapes(cfg))
    for name, shape in weight_shapes(cfg).items():
        if weights[name].shape != shape:
            raise ValueError(f"weight {name!r} has shape {weights[name].shape}, expected {shape}")
    rng = np.random.default_rng(seed)
    shapes = pyramid_shapes(input_size, cfg)
    feats = [rng.normal(size=shapes[level]) for level in (2, 3, 4, 5)]
    outputs = affpn_forward(*feats, cfg, weights)
    reference = recompose_forward(*feats, cfg, weights)
    residuals = [float(np.max(np.abs(a - b))) for a, b in zip(outputs, reference)]

    m5 = conv2d(feats[3], ConvSpec(weights["lateral.c5.kernel"], weights["lateral.c5.bias"]))
    _, trace = aam_forward(feats[3], m5, cfg.aam, weights, return_trace=True)
    attn_min, attn_max = float(trace.attention.min()), float(trace.attention.max())

    expected = [[1, cfg.width, s[2], s[3]] for s in shapes.values()]
    got = [list(o.shape) for o in outputs]
    checks = {
        "shapes_match": got == expected,
        "finite": all(bool(np.all(np.isfinite(o))) for o in outputs),
        "attention_in_open_unit_interval": 0.0 < attn_min and attn_max < 1.0,
        "residuals_within_tolerance": max(residuals) <= NECK_RESIDUAL_TOLERANCE,
    }
    return {
        "input_size": input_size,
        "seed": seed,
        "output_shapes": got,
        "expected_shapes": expected,
        "attention_range": [attn_min, attn_max],
        "composition_residuals": residuals,
        "residual_tolerance": NECK_RESIDUAL_TOLERANCE,
        "checks": checks,
        "passed": all(checks.values()),
    }
