"""A tiny proxy reward: nearest-centroid classification of toy sign images.

The training split is augmented with the candidate policy; the reward is
accuracy on a held-out split rendered with random shifts and lighting, so
policies that teach translation and photometric robustness score higher.
"""
from __future__ import annotations

import json

import numpy as np

from .augment import AnnotatedBox, Sample, apply_policy
from .boxes import BBox
from .policy import Policy

SHAPES = ("disk", "square", "triangle")


def _render(shape: str, size: int, cx: float, cy: float, r: float, color, light: float) -> np.ndarray:
    yy, xx = np.mgrid[0:size, 0:size] + 0.5
    if shape == "disk":
        mask = (xx - cx) ** 2 + (yy - cy) ** 2 <= r * r
    elif shape == "square":
        mask = (np.abs(xx - cx) <= r * 0.85) & (np.abs(yy - cy) <= r * 0.85)
    else:
        mask = (yy >= cy - r) & (yy <= cy + r) & (np.abs(xx - cx) <= (yy - (cy - r)) / 2)
    img = np.full((3, size, size), 0.15 * light)
    for c in range(3):
        img[c][mask] = color[c] * light
    return np.clip(img, 0.0, 1.0)[None]


def toy_dataset(n_per_class: int, size: int, seed: int, shift: float, light_range=(1.0, 1.0)) -> list[Sample]:
    rng = np.random.default_rng(seed)
    palette = np.array([[0.9, 0.2, 0.2], [0.2, 0.3, 0.9], [0.9, 0.8, 0.1]])
    samples = []
    for cls, shape in enumerate(SHAPES):
        for _ in range(n_per_class):
            r = size * rng.uniform(0.18, 0.26)
            cx = size / 2 + rng.uniform(-shift, shift) * size
            cy = size / 2 + rng.uniform(-shift, shift) * size
            img = _render(shape, size, cx, cy, r, palette[cls], rng.uniform(*light_range))
            box = BBox(cx, cy, 2 * r, 2 * r)
            samples.append(Sample(img, (AnnotatedBox(box, cls),)))
    return samples


def _features(s: Sample) -> np.ndarray:
    img = s.image[0]
    c, h, w = img.shape
    k = 4
    pooled = img[:, : h // k * k, : w // k * k].reshape(c, h // k, k, w // k, k).mean(axis=(2, 4))
    return pooled.ravel()


class ProxyClassificationReward:
    """Deterministic reward for a policy given the evaluator's seed."""

    def __init__(self, seed: int = 0, size: int = 16, n_train: int = 6, n_val: int = 20, copies: int = 4):
        self.seed = seed
        self.copies = copies
        self.train = toy_dataset(n_train, size, seed, shift=0.05)
        self.val = toy_dataset(n_val, size, seed + 1, shift=0.25, light_range=(0.6, 1.2))

    def __call__(self, policy: Policy) -> float:
        key = json.dumps(policy.to_json(), sort_keys=True).encode()
        rng = np.random.default_rng([self.seed, *key])
        feats, labels = [], []
        for i, s in enumerate(self.train):
            pool = self.train[:i] + self.train[i + 1:]
            for _ in range(self.copies):
                out = apply_policy(s, policy, rng, pool)
                feats.append(_features(out))
                labels.append(self.train_label(s))
            feats.append(_features(s))
            labels.append(self.train_label(s))
        feats, labels = np.array(feats), np.array(labels)
        centroids = np.stack([feats[labels == c].mean(axis=0) for c in range(len(SHAPES))])
        correct = 0
        for s in self.val:
            d = ((centroids - _features(s)) ** 2).sum(axis=1)
            correct += int(np.argmin(d)) == self.train_label(s)
        return correct / len(self.val)

    @staticmethod
    def train_label(s: Sample) -> int:
        return s.boxes[0].class_id
