"""AF-FPN neck: adaptive attention module, feature enhancement module and
the top-down fusion path, as forward passes over a :class:`WeightStore`.

Weight names (all convolutions store ``<name>.kernel`` and ``<name>.bias``)::

    lateral.c5 ... lateral.c2           1x1 lateral convs to pyramid width
    aam.context{0,1,2}.conv             1x1 conv of each pooled context
    aam.attn.conv1                      1x1 conv over the concatenated contexts
    aam.attn.conv2                      3x3 conv producing one weight map per context
    fem.l{4,3,2}.branch{0,1,2}.conv     dilated 3x3 branch conv
    fem.l{4,3,2}.branch{0,1,2}.bn       .gamma .beta .mean .var (frozen batch norm)
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple, Optional

import numpy as np

from .tensor import (
    ConvSpec,
    ShapeError,
    adaptive_avg_pool,
    as_tensor,
    bilinear_upsample,
    concat_channels,
    conv2d,
    elementwise,
    mean_over,
    split_channels,
)
from .weights import WeightStore

BN_EPS = 1e-5
LEVELS = (2, 3, 4, 5)


@dataclass(frozen=True)
class AAMConfig:
    betas: tuple[float, float, float] = (0.1, 0.3, 0.5)
    mid_channels: int = 256
    attn_channels: Optional[int] = None

    def __post_init__(self):
        b = tuple(float(x) for x in self.betas)
        if len(b) != 3:
            raise ValueError("AAM takes exactly three pooling coefficients")
        if not all(0.1 <= x <= 0.5 for x in b) or not (b[0] < b[1] < b[2]):
            raise ValueError(f"betas must be strictly increasing within [0.1, 0.5], got {b}")
        object.__setattr__(self, "betas", b)

    @property
    def hidden(self) -> int:
        return self.attn_channels or self.mid_channels


@dataclass(frozen=True)
class FEMConfig:
    kernel: int = 3
    dilations: tuple[int, ...] = (1, 3, 5)
    mode: str = "train"
    infer_branch: int = 1

    def __post_init__(self):
        d = tuple(int(x) for x in self.dilations)
        if any(x < 1 for x in d) or len(set(d)) != len(d):
            raise ValueError(f"dilations must be positive and distinct, got {d}")
        if self.mode not in ("train", "infer"):
            raise ValueError(f"unknown FEM mode {self.mode!r}")
        if not 0 <= self.infer_branch < len(d):
            raise ValueError("infer_branch out of range")
        object.__setattr__(self, "dilations", d)

    @property
    def branch_count(self) -> int:
        return len(self.dilations)


@dataclass(frozen=True)
class NeckConfig:
    in_channels: tuple[int, int, int, int] = (64, 128, 256, 512)  # C2..C5
    width: int = 256
    aam: AAMConfig = field(default_factory=AAMConfig)
    fem: FEMConfig = field(default_factory=FEMConfig)
    c1_channels: Optional[int] = None  # accepted, never consumed

    def __post_init__(self):
        if len(self.in_channels) != 4 or min(self.in_channels) < 1 or self.width < 1:
            raise ValueError("channel counts must be positive, one per level C2..C5")
        if self.aam.mid_channels != self.width:
            raise ValueError("AAM context width must equal the pyramid width to be added to M5")

    def channels(self, level: int) -> int:
        return self.in_channels[level - 2]

    @classmethod
    def from_dict(cls, d: dict) -> "NeckConfig":
        d = dict(d)
        aam_d = dict(d.pop("aam", {}))
        if "width" in d:
            aam_d.setdefault("mid_channels", d["width"])
        aam = AAMConfig(**{k: tuple(v) if k == "betas" else v for k, v in aam_d.items()})
        fem = FEMConfig(**{k: tuple(v) if k == "dilations" else v for k, v in d.pop("fem", {}).items()})
        if "in_channels" in d:
            d["in_channels"] = tuple(d["in_channels"])
        d.setdefault("width", aam.mid_channels)
        return cls(aam=aam, fem=fem, **d)

    def to_dict(self) -> dict:
        return {
            "in_channels": list(self.in_channels),
            "width": self.width,
            "c1_channels": self.c1_channels,
            "aam": {"betas": list(self.aam.betas), "mid_channels": self.aam.mid_channels,
                    "attn_channels": self.aam.attn_channels},
            "fem": {"kernel": self.fem.kernel, "dilations": list(self.fem.dilations),
                    "mode": self.fem.mode, "infer_branch": self.fem.infer_branch},
        }


def effective_receptive_field(k: int, d: int, r_prev: Optional[int] = None) -> int:
    """Receptive field of a dilated conv, optionally stacked on ``r_prev``."""
    if k < 1 or d < 1 or (r_prev is not None and r_prev < 1):
        raise ValueError("k, d and r_prev must be >= 1")
    return d * (k - 1) + (1 if r_prev is None else r_prev)


def pooled_size(beta: float, n: int) -> int:
    # round half up, never below one cell
    return max(1, int(math.floor(beta * n + 0.5)))


def _conv(weights: WeightStore, name: str, padding: int = 0, dilation: int = 1) -> ConvSpec:
    return ConvSpec(weights[f"{name}.kernel"], weights[f"{name}.bias"], padding=padding, dilation=dilation)


class AAMTrace(NamedTuple):
    contexts: list  # upsampled context features F1..F3
    attention: np.ndarray  # (n, 3, h, w) sigmoid weights
    fused: np.ndarray  # sum of weighted contexts, i.e. M6 - M5


def aam_forward(c5, m5, cfg: AAMConfig, weights: WeightStore, prefix: str = "aam",
                return_trace: bool = False):
    c5, m5 = as_tensor(c5), as_tensor(m5)
    h, w = c5.shape[2:]
    if m5.shape[2:] != (h, w) or m5.shape[1] != cfg.mid_channels:
        raise ShapeError(f"M5 shape {m5.shape} incompatible with C5 {c5.shape} and width {cfg.mid_channels}")
    contexts = []
    for i, beta in enumerate(cfg.betas):
        pooled = adaptive_avg_pool(c5, pooled_size(beta, h), pooled_size(beta, w))
        reduced = conv2d(pooled, _conv(weights, f"{prefix}.context{i}.conv"))
        contexts.append(bilinear_upsample(reduced, h, w))
    merged = concat_channels(contexts)
    hidden = elementwise("relu", conv2d(merged, _conv(weights, f"{prefix}.attn.conv1")))
    attention = elementwise("sigmoid", conv2d(hidden, _conv(weights, f"{prefix}.attn.conv2", padding=1)))
    if attention.shape[1] != len(contexts):
        raise ShapeError(f"attention head must emit {len(contexts)} maps, got {attention.shape[1]}")
    weight_maps = split_channels(attention, [1] * len(contexts))
    fused = np.zeros_like(contexts[0])
    for ctx, wmap in zip(contexts, weight_maps):
        fused = elementwise("add", fused, elementwise("hadamard", ctx, wmap))
    m6 = elementwise("add", m5, fused)
    if return_trace:
        return m6, AAMTrace(contexts, attention, fused)
    return m6


def batch_norm(x, gamma, beta, mean, var) -> np.ndarray:
    scale = np.asarray(gamma) / np.sqrt(np.asarray(var) + BN_EPS)
    shift = np.asarray(beta) - np.asarray(mean) * scale
    return x * scale[None, :, None, None] + shift[None, :, None, None]


def fem_branch(x, dilation: int, weights: WeightStore, prefix: str, kernel: int = 3) -> np.ndarray:
    spec = _conv(weights, f"{prefix}.conv", padding=dilation * (kernel - 1) // 2, dilation=dilation)
    if spec.size != kernel:
        raise ShapeError(f"{prefix}.conv kernel is {spec.size}x{spec.size}, expected {kernel}x{kernel}")
    y = conv2d(x, spec)
    bn = [weights[f"{prefix}.bn.{p}"] for p in ("gamma", "beta", "mean", "var")]
    return elementwise("relu", batch_norm(y, *bn))


def fem_forward(x, cfg: FEMConfig, weights: WeightStore, prefix: str = "fem") -> np.ndarray:
    x = as_tensor(x)
    if cfg.mode == "infer":
        i = cfg.infer_branch
        return fem_branch(x, cfg.dilations[i], weights, f"{prefix}.branch{i}", cfg.kernel)
    branches = [
        fem_branch(x, d, weights, f"{prefix}.branch{i}", cfg.kernel)
        for i, d in enumerate(cfg.dilations)
    ]
    return mean_over(branches)


def check_pyramid(c2, c3, c4, c5, cfg: NeckConfig) -> None:
    feats = [as_tensor(c) for c in (c2, c3, c4, c5)]
    for level, f in zip(LEVELS, feats):
        if f.shape[1] != cfg.channels(level):
            raise ShapeError(f"C{level} has {f.shape[1]} channels, config expects {cfg.channels(level)}")
    for lo, hi in zip(feats, feats[1:]):
        if (lo.shape[2] + 1) // 2 != hi.shape[2] or (lo.shape[3] + 1) // 2 != hi.shape[3]:
            raise ShapeError(f"spatial sizes must halve level to level: {lo.shape[2:]} -> {hi.shape[2:]}")


def affpn_forward(c2, c3, c4, c5, cfg: NeckConfig, weights: WeightStore) -> tuple:
    """Top-down AF-FPN pass; returns ``(P2, P3, P4, P5)``."""
    check_pyramid(c2, c3, c4, c5, cfg)
    feats = dict(zip(LEVELS, (as_tensor(c) for c in (c2, c3, c4, c5))))
    m5 = conv2d(feats[5], _conv(weights, "lateral.c5"))
    outputs = {5: aam_forward(feats[5], m5, cfg.aam, weights)}
    for level in (4, 3, 2):
        lateral = conv2d(feats[level], _conv(weights, f"lateral.c{level}"))
        above = bilinear_upsample(outputs[level + 1], *lateral.shape[2:])
        outputs[level] = fem_forward(elementwise("add", lateral, above), cfg.fem, weights, f"fem.l{level}")
    return tuple(outputs[level] for level in LEVELS)


def weight_shapes(cfg: NeckConfig) -> dict[str, tuple[int, ...]]:
    """Every parameter name a full forward pass reads, with its shape."""
    shapes: dict[str, tuple[int, ...]] = {}

    def conv(name, out_c, in_c, k):
        shapes[f"{name}.kernel"] = (out_c, in_c, k, k)
        shapes[f"{name}.bias"] = (out_c,)

    for level in LEVELS:
        conv(f"lateral.c{level}", cfg.width, cfg.channels(level), 1)
    for i in range(3):
        conv(f"aam.context{i}.conv", cfg.aam.mid_channels, cfg.channels(5), 1)
    conv("aam.attn.conv1", cfg.aam.hidden, 3 * cfg.aam.mid_channels, 1)
    conv("aam.attn.conv2", 3, cfg.aam.hidden, 3)
    for level in (4, 3, 2):
        for b in range(cfg.fem.branch_count):
            prefix = f"fem.l{level}.branch{b}"
            conv(f"{prefix}.conv", cfg.width, cfg.width, cfg.fem.kernel)
            for p in ("gamma", "beta", "mean", "var"):
                shapes[f"{prefix}.bn.{p}"] = (cfg.width,)
    return shapes


def init_weights(cfg: NeckConfig, scheme: str = "random", seed: int = 0) -> WeightStore:
    """Build a complete weight store.

    ``zeros`` leaves every conv at zero with identity batch norm; ``random``
    uses He-scaled normal kernels, small biases and perturbed BN statistics.
    """
    rng = np.random.default_rng(seed)
    tensors = {}
    for name, shape in weight_shapes(cfg).items():
        kind = name.rsplit(".", 1)[-1]
        if kind in ("gamma", "var"):
            base = np.ones(shape)
            if scheme == "random":
                base = base + 0.1 * rng.uniform(-1, 1, shape)
        elif scheme == "zeros":
            base = np.zeros(shape)
        elif scheme == "random":
            if kind == "kernel":
                fan_in = shape[1] * shape[2] * shape[3]
                base = rng.normal(0.0, math.sqrt(2.0 / fan_in), shape)
            else:
                base = 0.05 * rng.normal(size=shape)
        else:
            raise ValueError(f"unknown init scheme {scheme!r}")
        tensors[name] = base
    return WeightStore(tensors)


def pyramid_shapes(input_size: int, cfg: NeckConfig, batch: int = 1) -> dict[int, tuple[int, int, int, int]]:
    """Backbone feature shapes for a square input at strides 4, 8, 16, 32."""
    shapes = {}
    for level in LEVELS:
        side = -(-input_size // 2 ** level)
        shapes[level] = (batch, cfg.channels(level), side, side)
    return shapes


def recompose_forward(c2, c3, c4, c5, cfg: NeckConfig, weights: WeightStore) -> tuple:
    """Re-derive the neck output straight from tensor primitives.

    Shares no code with :func:`aam_forward` or :func:`fem_forward`; used as a
    cross-check of the module wiring.
    """
    feats = dict(zip(LEVELS, (as_tensor(c) for c in (c2, c3, c4, c5))))

    def conv(x, name, padding=0, dilation=1):
        return conv2d(x, ConvSpec(weights[name + ".kernel"], weights[name + ".bias"],
                                  padding=padding, dilation=dilation))

    c5 = feats[5]
    h, w = c5.shape[2:]
    m5 = conv(c5, "lateral.c5")
    contexts = [
        bilinear_upsample(conv(adaptive_avg_pool(c5, pooled_size(b, h), pooled_size(b, w)), f"aam.context{i}.conv"), h, w)
        for i, b in enumerate(cfg.aam.betas)
    ]
    logits = conv(np.maximum(conv(np.concatenate(contexts, axis=1), "aam.attn.conv1"), 0.0),
                  "aam.attn.conv2", padding=1)
    attn = 1.0 / (1.0 + np.exp(-logits))
    prev = m5 + sum(ctx * attn[:, i:i + 1] for i, ctx in enumerate(contexts))
    outs = {5: prev}
    for level in (4, 3, 2):
        lat = conv(feats[level], f"lateral.c{level}")
        x = lat + bilinear_upsample(prev, *lat.shape[2:])
        branch_ids = range(len(cfg.fem.dilations)) if cfg.fem.mode == "train" else [cfg.fem.infer_branch]
        ys = []
        for b in branch_ids:
            d = cfg.fem.dilations[b]
            pre = f"fem.l{level}.branch{b}"
            y = conv(x, pre + ".conv", padding=d, dilation=d)
            g, beta, mu, var = (weights[f"{pre}.bn.{k}"][None, :, None, None] for k in ("gamma", "beta", "mean", "var"))
            ys.append(np.maximum((y - mu) / np.sqrt(var + BN_EPS) * g + beta, 0.0))
        prev = sum(ys) / len(ys)
        outs[level] = prev
    return tuple(outs[level] for level in LEVELS)
