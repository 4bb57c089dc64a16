"""Dense 4-D tensor kernels.

Every value in the package is a ``numpy.ndarray`` of rank 4 laid out as
(batch, channels, height, width) in C order.  The kernels here are pure:
they never modify their arguments and return freshly allocated arrays.

Convolutions are stride-1 with "same" zero padding and odd kernels only.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .errors import DimensionError

AXES = ("batch", "channels", "height", "width")


def check_tensor4(x, name="input"):
    """Return ``x`` as an ndarray after checking it is a non-empty rank-4 tensor."""
    x = np.asarray(x)
    if x.ndim != 4:
        raise DimensionError(f"{name}: expected rank 4 (B, C, H, W), got rank {x.ndim}", axis="rank")
    for axis, n in zip(AXES, x.shape):
        if n < 1:
            raise DimensionError(f"{name}: {axis} must be >= 1, got {n}", axis=axis)
    return x


def _require(cond, message, axis):
    if not cond:
        raise DimensionError(message, axis=axis)


@dataclass(frozen=True)
class ConvSpec:
    in_channels: int
    out_channels: int
    kernel: tuple[int, int] = (3, 3)
    has_bias: bool = True

    def __post_init__(self):
        kh, kw = self.kernel
        if kh < 1 or kw < 1 or kh % 2 == 0 or kw % 2 == 0:
            raise ValueError(f"kernel sizes must be odd and positive, got {self.kernel}")
        if self.in_channels < 1 or self.out_channels < 1:
            raise ValueError("channel counts must be >= 1")

    @property
    def padding(self):
        return (self.kernel[0] - 1) // 2, (self.kernel[1] - 1) // 2

    def weight_shape(self):
        return (self.out_channels, self.in_channels) + tuple(self.kernel)


_DW_BLOCK = 16
_CONV_BUDGET = 1 << 22


def _finish(result, bias, out):
    """Add the bias to a cropped accumulator view, writing to ``out`` or a new array."""
    if out is None:
        out = np.empty(result.shape, dtype=result.dtype)
    elif out.shape != result.shape:
        raise DimensionError(f"out shape {out.shape} != result shape {result.shape}", axis="shape")
    if bias is None:
        out[...] = result
    else:
        np.add(result, bias.astype(result.dtype, copy=False)[None, :, None, None], out=out)
    return out


def _pad_flat(x, ph, pw):
    """Zero-pad spatially and flatten (H, W) so that each kernel tap is a
    contiguous column offset.  One extra bottom row keeps every tap slice
    in bounds."""
    b, c, h, w = x.shape
    wp = w + 2 * pw
    padded = np.zeros((b, c, h + 2 * ph + 1, wp), dtype=x.dtype)
    padded[:, :, ph:ph + h, pw:pw + w] = x
    return padded.reshape(b, c, -1), wp


def conv2d(x, weight, bias=None, spec: ConvSpec | None = None, out=None):
    """Same-padded stride-1 cross-correlation.

    ``out[b, o, y, x] = bias[o] + sum_{c,i,j} xpad[b, c, y+i, x+j] * weight[o, c, i, j]``

    ``out``, if given, is a (B, O, H, W) array or view that receives the result.
    """
    x = check_tensor4(x, "input")
    weight = check_tensor4(weight, "weight")
    o, c, kh, kw = weight.shape
    _require(kh % 2 == 1 and kw % 2 == 1, f"kernel must be odd, got {kh}x{kw}", "kernel")
    _require(x.shape[1] == c,
             f"input channels {x.shape[1]} != weight in_channels {c}", "channels")
    if spec is not None:
        _require(c == spec.in_channels, f"input channels {c} != spec.in_channels {spec.in_channels}",
                 "channels")
        _require(weight.shape == spec.weight_shape(),
                 f"weight shape {weight.shape} != {spec.weight_shape()}", "weight")
        _require((bias is not None) == spec.has_bias, "bias presence disagrees with spec", "bias")
    if bias is not None:
        bias = np.asarray(bias)
        _require(bias.shape == (o,), f"bias shape {bias.shape} != ({o},)", "bias")

    b, _, h, w = x.shape
    dtype = np.result_type(x, weight)
    ph, pw = (kh - 1) // 2, (kw - 1) // 2
    flat, wp = _pad_flat(x.astype(dtype, copy=False), ph, pw)
    length = h * wp
    acc = np.zeros((b, o, length), dtype=dtype)
    # all taps stacked as one (kh * kw * o, c) matrix; each tap's product is
    # added at its column offset.  Output rows are processed in bands so the
    # product buffer stays within _CONV_BUDGET elements.
    stacked = np.ascontiguousarray(weight.astype(dtype, copy=False).transpose(2, 3, 0, 1)
                                   ).reshape(kh * kw * o, c)
    band = max(1, _CONV_BUDGET // (kh * kw * o * wp) - (kh - 1))
    for n in range(b):
        for r0 in range(0, h, band):
            r1 = min(h, r0 + band)
            span = (r1 - r0 + kh - 1) * wp + kw - 1
            prod = (stacked @ flat[n, :, r0 * wp:r0 * wp + span]).reshape(kh * kw, o, span)
            seg, n_cols = acc[n, :, r0 * wp:r1 * wp], (r1 - r0) * wp
            for i in range(kh):
                for j in range(kw):
                    off = i * wp + j
                    seg += prod[i * kw + j, :, off:off + n_cols]
    return _finish(acc.reshape(b, o, h, wp)[:, :, :, :w], bias, out)


def conv2d_weight_grad(x, grad_out, kernel):
    """Gradient of ``sum(grad_out * conv2d(x, W))`` with respect to ``W``."""
    kh, kw = kernel
    b, c, h, w = x.shape
    o = grad_out.shape[1]
    dtype = np.result_type(x, grad_out)
    ph, pw = (kh - 1) // 2, (kw - 1) // 2
    flat, wp = _pad_flat(x.astype(dtype, copy=False), ph, pw)
    length = h * wp
    g = np.zeros((b, o, h, wp), dtype=dtype)
    g[:, :, :, :w] = grad_out
    g = g.reshape(b, o, length)
    dw = np.zeros((o, c, kh, kw), dtype=dtype)
    for i in range(kh):
        for j in range(kw):
            off = i * wp + j
            acc = np.zeros((o, c), dtype=dtype)
            for n in range(b):
                acc += g[n] @ flat[n, :, off:off + length].T
            dw[:, :, i, j] = acc
    return dw


def conv2d_input_grad(grad_out, weight):
    """Gradient of ``sum(grad_out * conv2d(x, W))`` with respect to ``x``."""
    flipped = np.ascontiguousarray(weight[:, :, ::-1, ::-1].transpose(1, 0, 2, 3))
    return conv2d(grad_out, flipped)


def depthwise_conv2d(x, weight, bias=None, out=None):
    """Per-channel same-padded convolution; ``weight`` has shape (C, 1, kh, kw).
    ``out`` works as for :func:`conv2d`."""
    x = check_tensor4(x, "input")
    weight = check_tensor4(weight, "weight")
    c, one, kh, kw = weight.shape
    _require(one == 1, f"depthwise weight must have shape (C, 1, kh, kw), got {weight.shape}",
             "channels")
    _require(x.shape[1] == c, f"input channels {x.shape[1]} != depthwise kernels {c}", "channels")
    _require(kh % 2 == 1 and kw % 2 == 1, f"kernel must be odd, got {kh}x{kw}", "kernel")
    if bias is not None:
        bias = np.asarray(bias)
        _require(bias.shape == (c,), f"bias shape {bias.shape} != ({c},)", "bias")
    dtype = np.result_type(x, weight)
    b, _, h, w = x.shape
    ph, pw = (kh - 1) // 2, (kw - 1) // 2
    flat, wp = _pad_flat(x.astype(dtype, copy=False), ph, pw)
    length = h * wp
    wt = weight.astype(dtype, copy=False)
    acc = np.zeros((b, c, length), dtype=dtype)
    tmp = np.empty((b, min(c, _DW_BLOCK), length), dtype=dtype)
    # channel blocks keep the accumulator in cache across the taps
    for c0 in range(0, c, _DW_BLOCK):
        c1 = min(c, c0 + _DW_BLOCK)
        block, t = acc[:, c0:c1], tmp[:, :c1 - c0]
        for i in range(kh):
            for j in range(kw):
                off = i * wp + j
                np.multiply(flat[:, c0:c1, off:off + length], wt[None, c0:c1, 0, i, j, None], out=t)
                block += t
    return _finish(acc.reshape(b, c, h, wp)[:, :, :, :w], bias, out)


def depthwise_weight_grad(x, grad_out, kernel):
    kh, kw = kernel
    b, c, h, w = x.shape
    ph, pw = (kh - 1) // 2, (kw - 1) // 2
    xp = np.pad(x, ((0, 0), (0, 0), (ph, ph), (pw, pw)))
    dw = np.zeros((c, 1, kh, kw), dtype=np.result_type(x, grad_out))
    for i in range(kh):
        for j in range(kw):
            dw[:, 0, i, j] = np.einsum("bchw,bchw->c", grad_out, xp[:, :, i:i + h, j:j + w])
    return dw


def depthwise_input_grad(grad_out, weight):
    return depthwise_conv2d(grad_out, np.ascontiguousarray(weight[:, :, ::-1, ::-1]))


def relu(x):
    x = np.asarray(x)
    return np.maximum(x, 0).astype(x.dtype, copy=False)


def add(a, b):
    a, b = np.asarray(a), np.asarray(b)
    if a.shape != b.shape:
        raise DimensionError(f"add: shapes {a.shape} and {b.shape} differ", axis="shape")
    return a + b


def concat_channels(a, b):
    a = check_tensor4(a, "a")
    b = check_tensor4(b, "b")
    for k in (0, 2, 3):
        _require(a.shape[k] == b.shape[k],
                 f"concat: {AXES[k]} differs ({a.shape[k]} vs {b.shape[k]})", AXES[k])
    return np.concatenate([a, b], axis=1)


def slice_channels(x, start, stop):
    x = check_tensor4(x)
    _require(0 <= start < stop <= x.shape[1],
             f"channel slice [{start}:{stop}] out of range for {x.shape[1]} channels", "channels")
    return np.ascontiguousarray(x[:, start:stop])


def pixel_shuffle(x, r):
    """(B, C*r*r, H, W) -> (B, C, H*r, W*r)."""
    x = check_tensor4(x)
    b, c, h, w = x.shape
    _require(c % (r * r) == 0, f"pixel_shuffle: channels {c} not divisible by r^2={r * r}",
             "channels")
    y = x.reshape(b, c // (r * r), r, r, h, w).transpose(0, 1, 4, 2, 5, 3)
    return np.ascontiguousarray(y.reshape(b, c // (r * r), h * r, w * r))


def space_to_depth(x, r):
    """(B, C, H*r, W*r) -> (B, C*r*r, H, W); exact inverse of :func:`pixel_shuffle`."""
    x = check_tensor4(x)
    b, c, hr, wr = x.shape
    _require(hr % r == 0, f"space_to_depth: height {hr} not divisible by {r}", "height")
    _require(wr % r == 0, f"space_to_depth: width {wr} not divisible by {r}", "width")
    h, w = hr // r, wr // r
    y = x.reshape(b, c, h, r, w, r).transpose(0, 1, 3, 5, 2, 4)
    return np.ascontiguousarray(y.reshape(b, c * r * r, h, w))


def gaussian_kernel1d(sigma):
    """Normalized 1-D Gaussian taps with radius ``ceil(3 * sigma)``."""
    if not sigma > 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    radius = int(math.ceil(3 * sigma))
    t = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-(t * t) / (2.0 * sigma * sigma))
    return k / k.sum()


def gaussian_blur(x, sigma):
    """Separable Gaussian blur with mirror padding at the borders.

    The mirror repeats the edge sample (``d c b a | a b c d``), which makes
    the operator preserve the image mean exactly.
    """
    x = check_tensor4(x)
    k = gaussian_kernel1d(sigma)
    radius = len(k) // 2
    dtype = x.dtype if np.issubdtype(x.dtype, np.floating) else np.float64
    k = k.astype(dtype)
    b, c, h, w = x.shape
    xp = np.pad(x.astype(dtype, copy=False), ((0, 0), (0, 0), (radius, radius), (0, 0)),
                mode="symmetric")
    tmp = np.zeros((b, c, h, w), dtype=dtype)
    for i, kv in enumerate(k):
        tmp += kv * xp[:, :, i:i + h, :]
    tp = np.pad(tmp, ((0, 0), (0, 0), (0, 0), (radius, radius)), mode="symmetric")
    out = np.zeros_like(tmp)
    for j, kv in enumerate(k):
        out += kv * tp[:, :, :, j:j + w]
    return out


def cubic_kernel(t, a=-0.5):
    """Keys cubic convolution kernel (Catmull-Rom for ``a = -0.5``)."""
    t = np.abs(np.asarray(t, dtype=np.float64))
    t2, t3 = t * t, t * t * t
    near = (a + 2) * t3 - (a + 3) * t2 + 1
    far = a * t3 - 5 * a * t2 + 8 * a * t - 4 * a
    return np.where(t <= 1, near, np.where(t < 2, far, 0.0))


def resized_length(n, scale):
    out = Fraction(scale).limit_denominator(10**6) * n
    m = math.floor(out + Fraction(1, 2))
    if m < 1:
        raise DimensionError(f"resize of length {n} by {scale} gives empty output", axis="scale")
    return m


def bicubic_matrix(n_in, n_out):
    """Row-stochastic (n_out, n_in) interpolation matrix, half-pixel centers,
    edge-clamped source indices."""
    o = np.arange(n_out, dtype=np.float64)
    src = (o + 0.5) * (n_in / n_out) - 0.5
    base = np.floor(src)
    frac = src - base
    mat = np.zeros((n_out, n_in), dtype=np.float64)
    rows = np.arange(n_out)
    for tap in range(-1, 3):
        wts = cubic_kernel(frac - tap)
        idx = np.clip(base.astype(np.int64) + tap, 0, n_in - 1)
        np.add.at(mat, (rows, idx), wts)
    return mat


def bicubic_resize(x, scale):
    x = check_tensor4(x)
    if not scale > 0:
        raise ValueError(f"scale must be positive, got {scale}")
    _, _, h, w = x.shape
    dtype = x.dtype if np.issubdtype(x.dtype, np.floating) else np.float64
    rh = bicubic_matrix(h, resized_length(h, scale)).astype(dtype)
    rw = bicubic_matrix(w, resized_length(w, scale)).astype(dtype)
    return np.ascontiguousarray(np.matmul(np.matmul(rh, x.astype(dtype, copy=False)), rw.T))
