"""PSNR/SSIM, model cost accounting and the feature-redundancy analyzer.

Both image metrics work in the 8-bit domain: inputs in [0, 1] are clamped,
scaled by 255 and rounded before comparison.  PSNR pools all color
channels into one MSE; SSIM is the mean over channels of the mean local
SSIM over valid (unpadded) 11x11 Gaussian windows.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionError
from .ghost import GhostBlockConfig, ghost_flop_count, ghost_param_count

PEAK = 255.0
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1, SSIM_K2 = 0.01, 0.03


def quantize(x):
    return np.floor(np.clip(np.asarray(x, dtype=np.float64), 0.0, 1.0) * PEAK + 0.5)


def _pair(a, b):
    a, b = np.asarray(a), np.asarray(b)
    if a.shape != b.shape:
        raise DimensionError(f"images differ in shape: {a.shape} vs {b.shape}", axis="shape")
    return quantize(a), quantize(b)


def psnr(a, b):
    """Peak signal-to-noise ratio in dB; ``math.inf`` for identical images."""
    qa, qb = _pair(a, b)
    mse = np.mean((qa - qb) ** 2)
    if mse == 0:
        return math.inf
    return float(10.0 * np.log10(PEAK * PEAK / mse))


def ssim_window1d():
    t = np.arange(SSIM_WINDOW, dtype=np.float64) - SSIM_WINDOW // 2
    g = np.exp(-(t * t) / (2 * SSIM_SIGMA ** 2))
    return g / g.sum()


def _filter_valid(x, g):
    """Separable valid-mode filtering of the last two axes."""
    n = len(g)
    h, w = x.shape[-2:]
    tmp = sum(g[i] * x[..., i:i + h - n + 1, :] for i in range(n))
    return sum(g[j] * tmp[..., :, j:j + w - n + 1] for j in range(n))


def ssim(a, b):
    qa, qb = _pair(a, b)
    if qa.ndim < 2 or min(qa.shape[-2:]) < SSIM_WINDOW:
        raise DimensionError(f"SSIM needs images of at least {SSIM_WINDOW}x{SSIM_WINDOW}, "
                             f"got {qa.shape[-2:]}", axis="height")
    g = ssim_window1d()
    c1, c2 = (SSIM_K1 * PEAK) ** 2, (SSIM_K2 * PEAK) ** 2
    mu_a, mu_b = _filter_valid(qa, g), _filter_valid(qb, g)
    var_a = _filter_valid(qa * qa, g) - mu_a * mu_a
    var_b = _filter_valid(qb * qb, g) - mu_b * mu_b
    cov = _filter_valid(qa * qb, g) - mu_a * mu_b
    smap = ((2 * mu_a * mu_b + c1) * (2 * cov + c2)) / (
        (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2))
    # mean over positions first, then over channels (and batch)
    return float(smap.mean(axis=(-2, -1)).mean())


@dataclass
class MetricReport:
    psnr: list = field(default_factory=list)
    ssim: list = field(default_factory=list)
    rows: dict = field(default_factory=dict)   # sequence name -> (psnr, ssim)

    @property
    def mean_psnr(self):
        return float(np.mean(self.psnr)) if self.psnr else math.nan

    @property
    def mean_ssim(self):
        return float(np.mean(self.ssim)) if self.ssim else math.nan


def _crop(x, border):
    if border <= 0:
        return x
    return x[..., border:-border, border:-border]


def score_sequence(pred, gt, skip_first=0, crop_border=0):
    """Per-frame metrics for two aligned frame lists."""
    pred, gt = list(pred), list(gt)
    if len(pred) != len(gt):
        raise ValueError(f"frame counts differ: {len(pred)} predicted vs {len(gt)} reference")
    report = MetricReport()
    for p, g in list(zip(pred, gt))[skip_first:]:
        p, g = _crop(np.asarray(p), crop_border), _crop(np.asarray(g), crop_border)
        report.psnr.append(psnr(p, g))
        report.ssim.append(ssim(p, g))
    return report


def score_dataset(pairs, skip_first=0, crop_border=0):
    """``pairs`` maps a sequence name to ``(pred_frames, gt_frames)``.  The
    dataset average is taken over all scored frames."""
    total = MetricReport()
    for name, (pred, gt) in pairs.items():
        r = score_sequence(pred, gt, skip_first, crop_border)
        total.psnr.extend(r.psnr)
        total.ssim.extend(r.ssim)
        total.rows[name] = (r.mean_psnr, r.mean_ssim)
    return total


# -- cost accounting ---------------------------------------------------------

@dataclass
class LayerCost:
    name: str
    kind: str
    params: int
    macs: int
    plain_params: int
    plain_macs: int


@dataclass
class CostReport:
    layers: list
    height: int
    width: int

    @property
    def params(self):
        return sum(l.params for l in self.layers)

    @property
    def macs(self):
        return sum(l.macs for l in self.layers)

    @property
    def plain_params(self):
        return sum(l.plain_params for l in self.layers)

    @property
    def plain_macs(self):
        return sum(l.plain_macs for l in self.layers)

    @property
    def param_ratio(self):
        return self.params / self.plain_params

    @property
    def mac_ratio(self):
        return self.macs / self.plain_macs


def _conv_cost(name, cin, cout, k, h, w):
    p = cout * cin * k * k + cout
    m = h * w * cout * cin * k * k
    return LayerCost(name, "conv", p, m, p, m)


def _ghost_cost(name, cfg: GhostBlockConfig, h, w):
    gp, pp, _ = ghost_param_count(cfg)
    gm, pm = ghost_flop_count(cfg, h, w)
    return LayerCost(name, "ghost", gp, gm, pp, pm)


def count_params_flops(cfg, h, w):
    """Per-layer parameters and multiply-accumulates for one LR frame of
    size h x w.  Ghost layers report their plain-convolution equivalent
    alongside; plain layers are their own equivalent."""
    c, k = cfg.channels, cfg.primary_kernel
    layers = [_ghost_cost("fusion", cfg.fusion, h, w)]
    for i in range(cfg.num_res_blocks):
        for j in (1, 2):
            name = f"trunk.{i}.conv{j}"
            if cfg.ghost_trunk:
                layers.append(_ghost_cost(name, cfg.trunk_ghost, h, w))
            else:
                layers.append(_conv_cost(name, c, c, k, h, w))
    layers.append(_conv_cost("state_head", c, c, k, h, w))
    layers.append(_conv_cost("recon_head", c, 3 * cfg.scale ** 2, k, h, w))
    return CostReport(layers, h, w)


# -- feature redundancy ------------------------------------------------------

@dataclass
class SimilaritySummary:
    matrix: np.ndarray
    threshold: float
    fraction_above: float
    top_pairs: list          # [(i, j, cosine)] by decreasing |cosine|
    zero_variance: list      # channels whose similarity is defined as 0

    @property
    def pairs_above(self):
        c = self.matrix.shape[0]
        iu = np.triu_indices(c, 1)
        return int(np.sum(np.abs(self.matrix[iu]) > self.threshold))


def feature_similarity(features, threshold=0.9, top_k=10, eps=1e-12):
    """Pairwise cosine similarity of mean-centered, flattened channel maps."""
    f = np.asarray(features, dtype=np.float64)
    if f.ndim != 4 or f.shape[0] != 1:
        raise DimensionError(f"expected a (1, C, H, W) feature tensor, got {f.shape}", axis="batch")
    c = f.shape[1]
    z = f[0].reshape(c, -1)
    z = z - z.mean(axis=1, keepdims=True)
    norms = np.sqrt(np.sum(z * z, axis=1))
    scale = max(float(norms.max()), 1.0) if c else 1.0
    flat = norms <= eps * scale
    safe = np.where(flat, 1.0, norms)
    u = z / safe[:, None]
    m = u @ u.T
    m = np.clip((m + m.T) / 2, -1.0, 1.0)
    m[flat, :] = 0.0
    m[:, flat] = 0.0
    np.fill_diagonal(m, 1.0)

    iu = np.triu_indices(c, 1)
    vals = m[iu]
    frac = float(np.mean(np.abs(vals) > threshold)) if vals.size else 0.0
    order = np.argsort(-np.abs(vals), kind="stable")[:top_k]
    top = [(int(iu[0][o]), int(iu[1][o]), float(vals[o])) for o in order]
    return SimilaritySummary(m, threshold, frac, top, [int(i) for i in np.flatnonzero(flat)])
