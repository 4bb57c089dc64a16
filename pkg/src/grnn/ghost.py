"""Ghost feature block: a primary convolution makes M intrinsic maps and
cheap depthwise convolutions derive the remaining ghost maps from them.

Output layout is ``[y_1..y_M, ghosts for j=2 (from y_1..y_M), ghosts for
j=3, ...]`` truncated to exactly N channels.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import tensor as T
from .errors import DimensionError


@dataclass(frozen=True)
class GhostBlockConfig:
    in_channels: int
    out_channels: int
    ratio: int = 2
    primary_kernel: int = 3
    cheap_kernel: int = 3

    def __post_init__(self):
        if self.in_channels < 1 or self.out_channels < 1:
            raise ValueError("channel counts must be >= 1")
        if self.ratio < 1:
            raise ValueError(f"ratio must be >= 1, got {self.ratio}")
        for k in (self.primary_kernel, self.cheap_kernel):
            if k < 1 or k % 2 == 0:
                raise ValueError(f"kernel sizes must be odd and positive, got {k}")

    @property
    def intrinsic(self):
        """M = ceil(N / S)."""
        return math.ceil(self.out_channels / self.ratio)

    @property
    def ghosts(self):
        """Number of cheap-operation kernels, M * (S - 1)."""
        return self.intrinsic * (self.ratio - 1)


@dataclass
class GhostBlockWeights:
    primary_weight: np.ndarray
    primary_bias: np.ndarray
    cheap_weight: np.ndarray | None = None
    cheap_bias: np.ndarray | None = None

    def named(self, prefix):
        out = {f"{prefix}.primary.weight": self.primary_weight,
               f"{prefix}.primary.bias": self.primary_bias}
        if self.cheap_weight is not None:
            out[f"{prefix}.cheap.weight"] = self.cheap_weight
            out[f"{prefix}.cheap.bias"] = self.cheap_bias
        return out

    @classmethod
    def from_named(cls, named, prefix):
        return cls(named[f"{prefix}.primary.weight"], named[f"{prefix}.primary.bias"],
                   named.get(f"{prefix}.cheap.weight"), named.get(f"{prefix}.cheap.bias"))

    def check(self, cfg: GhostBlockConfig):
        m, k, kc = cfg.intrinsic, cfg.primary_kernel, cfg.cheap_kernel
        expect = {"primary_weight": (m, cfg.in_channels, k, k), "primary_bias": (m,)}
        if cfg.ratio > 1:
            expect.update(cheap_weight=(cfg.ghosts, 1, kc, kc), cheap_bias=(cfg.ghosts,))
        elif self.cheap_weight is not None:
            raise ValueError("ratio 1 block must not carry cheap-operation weights")
        for attr, shape in expect.items():
            got = getattr(self, attr)
            if got is None or tuple(np.shape(ad.value_of(got))) != shape:
                raise ValueError(f"{attr}: expected shape {shape}, got "
                                 f"{None if got is None else np.shape(ad.value_of(got))}")


def init_ghost_weights(cfg: GhostBlockConfig, rng, dtype=np.float32):
    """Kaiming-uniform (fan-in) weights, zero biases."""
    m, k, kc = cfg.intrinsic, cfg.primary_kernel, cfg.cheap_kernel
    bound = 1.0 / math.sqrt(cfg.in_channels * k * k)
    w = GhostBlockWeights(
        rng.uniform(-bound, bound, (m, cfg.in_channels, k, k)).astype(dtype),
        np.zeros(m, dtype=dtype))
    if cfg.ratio > 1:
        cb = 1.0 / kc
        w.cheap_weight = rng.uniform(-cb, cb, (cfg.ghosts, 1, kc, kc)).astype(dtype)
        w.cheap_bias = np.zeros(cfg.ghosts, dtype=dtype)
    return w


def identity_cheap_weights(cfg: GhostBlockConfig, dtype=np.float32):
    """Cheap kernels that copy their source map (center tap 1, zero bias)."""
    kc = cfg.cheap_kernel
    w = np.zeros((cfg.ghosts, 1, kc, kc), dtype=dtype)
    w[:, 0, kc // 2, kc // 2] = 1
    return w, np.zeros(cfg.ghosts, dtype=dtype)


def ghost_forward(x, w: GhostBlockWeights, cfg: GhostBlockConfig):
    """Primary conv to M maps, depthwise ghosts for j = 2..S, concat, truncate to N."""
    xv = ad.value_of(x)
    if xv.ndim != 4 or xv.shape[1] != cfg.in_channels:
        raise DimensionError(
            f"ghost block expects {cfg.in_channels} input channels, got shape {xv.shape}",
            axis="channels")
    traced = (x, w.primary_weight, w.primary_bias, w.cheap_weight, w.cheap_bias)
    if cfg.ratio > 1 and not any(isinstance(v, ad.Node) for v in traced):
        return _ghost_forward_inplace(xv, w, cfg)
    y = ad.conv2d(x, w.primary_weight, w.primary_bias)
    if cfg.ratio == 1:
        return y
    sources = y
    for _ in range(cfg.ratio - 2):
        sources = ad.concat_channels(sources, y)
    ghosts = ad.depthwise_conv2d(sources, w.cheap_weight, w.cheap_bias)
    out = ad.concat_channels(y, ghosts)
    if cfg.intrinsic * cfg.ratio != cfg.out_channels:
        out = ad.slice_channels(out, 0, cfg.out_channels)
    return out


def _ghost_forward_inplace(x, w: GhostBlockWeights, cfg: GhostBlockConfig):
    """Plain-array path: both kernels write straight into one output buffer."""
    m, s = cfg.intrinsic, cfg.ratio
    b, _, h, wd = x.shape
    dtype = np.result_type(x, w.primary_weight, w.cheap_weight)
    full = np.empty((b, m * s, h, wd), dtype=dtype)
    y = T.conv2d(x, w.primary_weight, w.primary_bias, out=full[:, :m])
    for j in range(1, s):
        ks = slice((j - 1) * m, j * m)
        T.depthwise_conv2d(y, w.cheap_weight[ks], w.cheap_bias[ks], out=full[:, j * m:(j + 1) * m])
    return full if m * s == cfg.out_channels else np.ascontiguousarray(full[:, :cfg.out_channels])


def ghost_param_count(cfg: GhostBlockConfig):
    """Return ``(ghost_params, plain_params, ghost / plain)``.

    The plain reference is one convolution producing all N maps with the
    primary kernel size.
    """
    m, n, cin = cfg.intrinsic, cfg.out_channels, cfg.in_channels
    k2, kc2 = cfg.primary_kernel ** 2, cfg.cheap_kernel ** 2
    ghost = m * cin * k2 + m + m * (cfg.ratio - 1) * (kc2 + 1)
    plain = n * cin * k2 + n
    return ghost, plain, ghost / plain


def ghost_flop_count(cfg: GhostBlockConfig, h, w):
    """Multiply-accumulate counts ``(ghost_macs, plain_macs)`` at spatial size h x w."""
    m, n, cin = cfg.intrinsic, cfg.out_channels, cfg.in_channels
    k2, kc2 = cfg.primary_kernel ** 2, cfg.cheap_kernel ** 2
    ghost = h * w * (m * cin * k2 + m * (cfg.ratio - 1) * kc2)
    plain = h * w * n * cin * k2
    return ghost, plain
