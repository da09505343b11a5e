"""Dense rank-4 tensor primitives over numpy arrays.

Tensors are plain ``numpy.ndarray`` objects of shape ``(n, c, h, w)``
holding float64 values.  Every function here returns a fresh array and
never writes into its inputs.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional, Sequence, Union

import numpy as np

DTYPE = np.float64


class ShapeError(ValueError):
    """Raised when tensor shapes are incompatible for an operation."""


def as_tensor(x) -> np.ndarray:
    """Validate ``x`` as a rank-4 tensor and return it as a float64 array."""
    arr = np.asarray(x, dtype=DTYPE)
    if arr.ndim != 4:
        raise ShapeError(f"expected a rank-4 (n, c, h, w) tensor, got shape {arr.shape}")
    if min(arr.shape) < 1:
        raise ShapeError(f"all tensor dimensions must be >= 1, got {arr.shape}")
    return arr


@dataclass(frozen=True)
class ConvSpec:
    kernel: np.ndarray  # (out_c, in_c, k, k)
    bias: Optional[np.ndarray] = None
    stride: int = 1
    padding: int = 0
    dilation: int = 1

    def __post_init__(self):
        k = np.asarray(self.kernel, dtype=DTYPE)
        if k.ndim != 4 or k.shape[2] != k.shape[3] or min(k.shape) < 1:
            raise ShapeError(f"kernel must have shape (out_c, in_c, k, k), got {k.shape}")
        if self.stride < 1 or self.dilation < 1 or self.padding < 0:
            raise ValueError(
                f"invalid conv geometry: stride={self.stride}, "
                f"padding={self.padding}, dilation={self.dilation}"
            )
        b = np.zeros(k.shape[0], DTYPE) if self.bias is None else np.asarray(self.bias, DTYPE)
        if b.shape != (k.shape[0],):
            raise ShapeError(f"bias shape {b.shape} does not match out_c={k.shape[0]}")
        object.__setattr__(self, "kernel", k)
        object.__setattr__(self, "bias", b)

    @property
    def out_channels(self) -> int:
        return self.kernel.shape[0]

    @property
    def in_channels(self) -> int:
        return self.kernel.shape[1]

    @property
    def size(self) -> int:
        return self.kernel.shape[2]

    def output_size(self, n: int) -> int:
        return (n + 2 * self.padding - self.dilation * (self.size - 1) - 1) // self.stride + 1


def conv2d(x, spec: ConvSpec) -> np.ndarray:
    """Dilated 2-D cross-correlation with zero padding and per-channel bias.

    Implemented as one matrix product per kernel tap, accumulated in tap order.
    """
    x = as_tensor(x)
    n, c, h, w = x.shape
    if c != spec.in_channels:
        raise ShapeError(
            f"dimension mismatch: input shape {x.shape} has {c} channels but "
            f"kernel shape {spec.kernel.shape} expects {spec.in_channels}"
        )
    oh, ow = spec.output_size(h), spec.output_size(w)
    if oh < 1 or ow < 1:
        raise ShapeError(
            f"dimension mismatch: input shape {x.shape} too small for kernel "
            f"shape {spec.kernel.shape} with dilation {spec.dilation}, padding {spec.padding}"
        )
    p, s, d = spec.padding, spec.stride, spec.dilation
    xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p))) if p else x
    out = np.zeros((spec.out_channels, n, oh, ow), DTYPE)
    for i in range(spec.size):
        for j in range(spec.size):
            r0, c0 = i * d, j * d
            patch = xp[:, :, r0:r0 + s * (oh - 1) + 1:s, c0:c0 + s * (ow - 1) + 1:s]
            out += np.tensordot(spec.kernel[:, :, i, j], patch, axes=([1], [1]))
    out += spec.bias[:, None, None, None]
    return np.ascontiguousarray(out.transpose(1, 0, 2, 3))


def dilate_kernel(kernel, dilation: int) -> np.ndarray:
    """Insert ``dilation - 1`` zero rows/columns between kernel taps."""
    kernel = np.asarray(kernel, DTYPE)
    k = kernel.shape[-1]
    size = dilation * (k - 1) + 1
    out = np.zeros(kernel.shape[:-2] + (size, size), DTYPE)
    out[..., ::dilation, ::dilation] = kernel
    return out


def adaptive_avg_pool(x, out_h: int, out_w: int) -> np.ndarray:
    x = as_tensor(x)
    n, c, h, w = x.shape
    if not (1 <= out_h <= h and 1 <= out_w <= w):
        raise ShapeError(f"cannot adaptively pool {h}x{w} to {out_h}x{out_w}")
    out = np.empty((n, c, out_h, out_w), DTYPE)
    for i in range(out_h):
        r0, r1 = (i * h) // out_h, -((-(i + 1) * h) // out_h)
        for j in range(out_w):
            c0, c1 = (j * w) // out_w, -((-(j + 1) * w) // out_w)
            out[:, :, i, j] = x[:, :, r0:r1, c0:c1].mean(axis=(2, 3))
    return out


def _source_coords(n_in: int, n_out: int):
    scale = n_in / n_out
    src = (np.arange(n_out) + 0.5) * scale - 0.5
    src = np.clip(src, 0.0, n_in - 1)
    lo = np.floor(src).astype(int)
    hi = np.minimum(lo + 1, n_in - 1)
    return lo, hi, src - lo


def resize_bilinear(x, out_h: int, out_w: int) -> np.ndarray:
    """Bilinear resize in either direction, half-pixel (align_corners=False).

    Source coordinate of output cell ``o`` is ``(o + 0.5) * in / out - 0.5``,
    clamped to the valid range.  No antialiasing when shrinking.
    """
    x = as_tensor(x)
    if out_h < 1 or out_w < 1:
        raise ShapeError(f"invalid resize target {out_h}x{out_w}")
    h, w = x.shape[2:]
    y0, y1, fy = _source_coords(h, out_h)
    x0, x1, fx = _source_coords(w, out_w)
    top, bottom = x[:, :, y0, :], x[:, :, y1, :]
    rows = top + (bottom - top) * fy[:, None]
    left, right = rows[:, :, :, x0], rows[:, :, :, x1]
    return left + (right - left) * fx


def bilinear_upsample(x, out_h: int, out_w: int) -> np.ndarray:
    x = as_tensor(x)
    h, w = x.shape[2:]
    if out_h < h or out_w < w:
        raise ShapeError(f"bilinear_upsample cannot downsample {h}x{w} to {out_h}x{out_w}")
    return resize_bilinear(x, out_h, out_w)


def concat_channels(inputs: Sequence) -> np.ndarray:
    tensors = [as_tensor(t) for t in inputs]
    if not tensors:
        raise ShapeError("concat_channels needs at least one tensor")
    n, _, h, w = tensors[0].shape
    for t in tensors[1:]:
        if (t.shape[0], t.shape[2], t.shape[3]) != (n, h, w):
            raise ShapeError(f"cannot concat {tensors[0].shape} with {t.shape}")
    return np.concatenate(tensors, axis=1)


def split_channels(x, sizes: Sequence[int]) -> list[np.ndarray]:
    x = as_tensor(x)
    if sum(sizes) != x.shape[1]:
        raise ShapeError(f"split sizes {list(sizes)} do not sum to {x.shape[1]} channels")
    offsets = np.cumsum(sizes)[:-1]
    return [part.copy() for part in np.split(x, offsets, axis=1)]


def _broadcastable(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    if b.shape == a.shape:
        return b
    if b.shape[1] == 1 and (b.shape[0], b.shape[2], b.shape[3]) == (a.shape[0], a.shape[2], a.shape[3]):
        return b
    raise ShapeError(f"cannot broadcast {b.shape} against {a.shape}")


def elementwise(op: str, a, b: Union[None, float, np.ndarray] = None) -> np.ndarray:
    """Pointwise ``add``, ``hadamard``, ``relu``, ``sigmoid`` or ``scale``.

    Binary kinds accept an equal-shape tensor or a single-channel tensor that
    broadcasts across ``a``'s channels; ``scale`` takes a scalar.
    """
    a = as_tensor(a)
    if op == "relu":
        return np.maximum(a, 0.0)
    if op == "sigmoid":
        # split by sign to avoid overflow in exp
        out = np.empty_like(a)
        pos = a >= 0
        out[pos] = 1.0 / (1.0 + np.exp(-a[pos]))
        e = np.exp(a[~pos])
        out[~pos] = e / (1.0 + e)
        return out
    if op == "scale":
        if b is None or np.ndim(b) != 0:
            raise ShapeError("scale expects a scalar factor")
        return a * float(b)
    if op in ("add", "hadamard"):
        if b is None:
            raise ShapeError(f"{op} needs a second operand")
        if np.ndim(b) == 0:
            other = float(b)
        else:
            other = _broadcastable(a, as_tensor(b))
        return a + other if op == "add" else a * other
    raise ValueError(f"unknown elementwise op {op!r}")


def mean_over(inputs: Sequence) -> np.ndarray:
    """Branch pooling: elementwise mean of equally shaped tensors."""
    tensors = [as_tensor(t) for t in inputs]
    if not tensors:
        raise ShapeError("mean_over needs at least one tensor")
    for t in tensors[1:]:
        if t.shape != tensors[0].shape:
            raise ShapeError(f"mean_over shape mismatch: {tensors[0].shape} vs {t.shape}")
    total = np.zeros_like(tensors[0])
    for t in tensors:
        total += t
    return total / len(tensors)


def finite_diff_grad(f: Callable[[np.ndarray], float], x, eps: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of a scalar function."""
    if eps <= 0:
        raise ValueError("eps must be positive")
    x = np.array(x, dtype=DTYPE).reshape(-1)
    grad = np.empty_like(x)
    for i in range(x.size):
        xp, xm = x.copy(), x.copy()
        xp[i] += eps
        xm[i] -= eps
        fp, fm = float(f(xp)), float(f(xm))
        if not (math.isfinite(fp) and math.isfinite(fm)):
            raise FloatingPointError(f"non-finite function value at coordinate {i}")
        grad[i] = (fp - fm) / (2 * eps)
    return grad
