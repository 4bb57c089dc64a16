"""Frame-recurrent super-resolution cell.

Per step the cell reads the current LR frame, the previous LR frame, the
previous SR output (folded to LR resolution with space-to-depth) and the
previous hidden state, and produces the SR frame plus the next hidden state::

    x     = [F_t, F_{t-1}, s2d(O_{t-1}), h_{t-1}]
    feat  = ghost(x)
    trunk = feat + blocks(feat)            # blocks: conv-relu-conv + skip
    h_t   = relu(conv_state(trunk))
    O_t   = shuffle(conv_recon(trunk)) + bicubic(F_t)
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import autodiff as ad
from .data import VideoSequence
from .errors import DimensionError, NonFiniteError
from .ghost import (GhostBlockConfig, GhostBlockWeights, ghost_forward, identity_cheap_weights,
                    init_ghost_weights)


@dataclass(frozen=True)
class GrnnConfig:
    scale: int = 4
    channels: int = 128
    num_res_blocks: int = 10
    color_channels: int = 3
    ghost_ratio: int = 2
    primary_kernel: int = 3
    cheap_kernel: int = 3
    ghost_trunk: bool = False

    def __post_init__(self):
        if self.scale < 1:
            raise ValueError(f"scale must be >= 1, got {self.scale}")
        if self.channels < 8:
            raise ValueError(f"channels must be >= 8, got {self.channels}")
        if self.num_res_blocks < 1:
            raise ValueError(f"num_res_blocks must be >= 1, got {self.num_res_blocks}")
        if self.color_channels != 3:
            raise ValueError("only 3-channel (RGB) frames are supported")

    @property
    def fusion_in_channels(self):
        c = self.color_channels
        return 2 * c + c * self.scale ** 2 + self.channels

    @property
    def fusion(self):
        return GhostBlockConfig(self.fusion_in_channels, self.channels, self.ghost_ratio,
                                self.primary_kernel, self.cheap_kernel)

    @property
    def trunk_ghost(self):
        return GhostBlockConfig(self.channels, self.channels, self.ghost_ratio,
                                self.primary_kernel, self.cheap_kernel)

    @classmethod
    def from_named(cls, named):
        """Recover the architecture from the tensor names and shapes of a weight set."""
        try:
            m, fin, k, _ = named["fusion.primary.weight"].shape
            channels = named["state_head.weight"].shape[0]
            recon_out = named["recon_head.weight"].shape[0]
        except KeyError as exc:
            raise ValueError(f"weight set lacks tensor {exc.args[0]!r}") from None
        ratio, kc = 1, 3
        if "fusion.cheap.weight" in named:
            g, _, kc, _ = named["fusion.cheap.weight"].shape
            ratio = 1 + g // m
        scale = math.isqrt(recon_out // 3)
        blocks = 0
        while f"trunk.{blocks}.conv1.weight" in named or f"trunk.{blocks}.conv1.primary.weight" in named:
            blocks += 1
        ghost_trunk = "trunk.0.conv1.primary.weight" in named
        cfg = cls(scale=scale, channels=channels, num_res_blocks=blocks, ghost_ratio=ratio,
                  primary_kernel=k, cheap_kernel=kc, ghost_trunk=ghost_trunk)
        if cfg.fusion_in_channels != fin or 3 * scale * scale != recon_out:
            raise ValueError("weight shapes are inconsistent with any GRNN configuration")
        return cfg


@dataclass
class Conv:
    weight: np.ndarray
    bias: np.ndarray

    def named(self, prefix):
        return {f"{prefix}.weight": self.weight, f"{prefix}.bias": self.bias}

    def __call__(self, x):
        return ad.conv2d(x, self.weight, self.bias)


@dataclass
class RecurrentState:
    hidden: np.ndarray
    prev_output: np.ndarray


@dataclass
class GrnnWeights:
    fusion: GhostBlockWeights
    trunk: list = field(default_factory=list)   # [(layer1, layer2)], Conv or GhostBlockWeights
    state_head: Conv = None
    recon_head: Conv = None

    def named(self):
        """Flat ``{name: array}`` view in a fixed canonical order."""
        out = dict(self.fusion.named("fusion"))
        for i, pair in enumerate(self.trunk):
            for j, layer in enumerate(pair, start=1):
                out.update(layer.named(f"trunk.{i}.conv{j}"))
        out.update(self.state_head.named("state_head"))
        out.update(self.recon_head.named("recon_head"))
        return out

    @classmethod
    def from_named(cls, named, cfg: GrnnConfig | None = None):
        cfg = cfg or GrnnConfig.from_named({k: np.asarray(ad.value_of(v)) for k, v in named.items()})

        def layer(prefix):
            if cfg.ghost_trunk:
                return GhostBlockWeights.from_named(named, prefix)
            return Conv(named[f"{prefix}.weight"], named[f"{prefix}.bias"])

        w = cls(
            fusion=GhostBlockWeights.from_named(named, "fusion"),
            trunk=[(layer(f"trunk.{i}.conv1"), layer(f"trunk.{i}.conv2"))
                   for i in range(cfg.num_res_blocks)],
            state_head=Conv(named["state_head.weight"], named["state_head.bias"]),
            recon_head=Conv(named["recon_head.weight"], named["recon_head.bias"]),
        )
        extra = set(named) - set(w.named())
        if extra:
            raise ValueError(f"unexpected tensors in weight set: {sorted(extra)}")
        return w

    def map(self, fn, cfg=None):
        """New weight set with ``fn(name, value)`` applied to every tensor."""
        return GrnnWeights.from_named({k: fn(k, v) for k, v in self.named().items()}, cfg)

    def check(self, cfg: GrnnConfig):
        self.fusion.check(cfg.fusion)
        if len(self.trunk) != cfg.num_res_blocks:
            raise ValueError(f"expected {cfg.num_res_blocks} residual blocks, got {len(self.trunk)}")
        c, k = cfg.channels, cfg.primary_kernel
        for pair in self.trunk:
            for layer in pair:
                if cfg.ghost_trunk:
                    layer.check(cfg.trunk_ghost)
                elif np.shape(ad.value_of(layer.weight)) != (c, c, k, k):
                    raise ValueError(f"trunk conv shape {np.shape(ad.value_of(layer.weight))}")
        if np.shape(ad.value_of(self.state_head.weight)) != (c, c, k, k):
            raise ValueError("state head shape mismatch")
        if np.shape(ad.value_of(self.recon_head.weight)) != (3 * cfg.scale ** 2, c, k, k):
            raise ValueError("reconstruction head shape mismatch")


def _kaiming_conv(rng, cout, cin, k, dtype):
    bound = 1.0 / math.sqrt(cin * k * k)
    return Conv(rng.uniform(-bound, bound, (cout, cin, k, k)).astype(dtype),
                np.zeros(cout, dtype=dtype))


def init_weights(cfg: GrnnConfig, seed=0, dtype=np.float32):
    """Kaiming-uniform fan-in convolutions with zero biases; the reconstruction
    head starts at zero so the untrained model reproduces the bicubic baseline."""
    rng = np.random.default_rng(seed)
    c, k = cfg.channels, cfg.primary_kernel
    fusion = init_ghost_weights(cfg.fusion, rng, dtype)

    def layer():
        if cfg.ghost_trunk:
            return init_ghost_weights(cfg.trunk_ghost, rng, dtype)
        return _kaiming_conv(rng, c, c, k, dtype)

    trunk = [(layer(), layer()) for _ in range(cfg.num_res_blocks)]
    state_head = _kaiming_conv(rng, c, c, k, dtype)
    rc = 3 * cfg.scale ** 2
    recon_head = Conv(np.zeros((rc, c, k, k), dtype=dtype), np.zeros(rc, dtype=dtype))
    return GrnnWeights(fusion, trunk, state_head, recon_head)


def zero_weights(cfg: GrnnConfig, dtype=np.float32):
    return init_weights(cfg, 0, dtype).map(lambda _, v: np.zeros_like(v), cfg)


def with_identity_ghosts(w: GrnnWeights, cfg: GrnnConfig):
    """Copy of ``w`` whose fusion-block cheap operations are exact copies."""
    if cfg.ghost_ratio < 2:
        raise ValueError("identity ghosts need ghost_ratio >= 2")
    cw, cb = identity_cheap_weights(cfg.fusion, np.asarray(w.fusion.primary_weight).dtype)
    fusion = replace(w.fusion, cheap_weight=cw, cheap_bias=cb)
    return replace(w, fusion=fusion)


def init_state(cfg: GrnnConfig, batch, h, w, dtype=np.float32):
    if min(batch, h, w) < 1:
        raise ValueError("state dimensions must be >= 1")
    s = cfg.scale
    return RecurrentState(np.zeros((batch, cfg.channels, h, w), dtype=dtype),
                          np.zeros((batch, cfg.color_channels, h * s, w * s), dtype=dtype))


def _finite(name, x):
    if not np.all(np.isfinite(ad.value_of(x))):
        raise NonFiniteError(name)
    return x


def _layer(layer, x, cfg):
    if isinstance(layer, GhostBlockWeights):
        return ghost_forward(x, layer, cfg.trunk_ghost)
    return layer(x)


def cell_forward(frame, prev_frame, state: RecurrentState, w: GrnnWeights, cfg: GrnnConfig,
                 taps=None):
    """One recurrent step; returns ``(O_t, new_state)``.

    ``taps``, if a dict, receives intermediate activations keyed
    ``"fusion"``, ``"trunk.<i>"``, ``"trunk"`` and ``"hidden"``.
    """
    fv = ad.value_of(frame)
    if fv.ndim != 4 or fv.shape[1] != cfg.color_channels:
        raise DimensionError(f"frame must be (B, 3, H, W), got {fv.shape}", axis="channels")
    if ad.value_of(prev_frame).shape != fv.shape:
        raise DimensionError(f"previous frame shape {ad.value_of(prev_frame).shape} != "
                             f"current frame shape {fv.shape}", axis="shape")
    b, _, h, wd = fv.shape
    s = cfg.scale
    hid_shape = ad.value_of(state.hidden).shape
    if hid_shape != (b, cfg.channels, h, wd):
        raise DimensionError(f"hidden state shape {hid_shape} != {(b, cfg.channels, h, wd)}",
                             axis="hidden")
    out_shape = ad.value_of(state.prev_output).shape
    if out_shape != (b, cfg.color_channels, h * s, wd * s):
        raise DimensionError(f"previous output shape {out_shape} != "
                             f"{(b, cfg.color_channels, h * s, wd * s)}", axis="prev_output")

    x = ad.concat_channels(frame, prev_frame)
    x = ad.concat_channels(x, ad.space_to_depth(state.prev_output, s))
    x = ad.concat_channels(x, state.hidden)
    feat = _finite("fusion", ghost_forward(x, w.fusion, cfg.fusion))
    if taps is not None:
        taps["fusion"] = ad.value_of(feat)

    y = feat
    for i, (l1, l2) in enumerate(w.trunk):
        r = _layer(l2, ad.relu(_layer(l1, y, cfg)), cfg)
        y = _finite(f"trunk.{i}", ad.add(y, r))
        if taps is not None:
            taps[f"trunk.{i}"] = ad.value_of(y)
    y = _finite("trunk", ad.add(y, feat))
    if taps is not None:
        taps["trunk"] = ad.value_of(y)

    hidden = _finite("state_head", ad.relu(w.state_head(y)))
    if taps is not None:
        taps["hidden"] = ad.value_of(hidden)
    residual = ad.pixel_shuffle(w.recon_head(y), s)
    out = _finite("recon_head", ad.add(residual, ad.bicubic_resize(frame, s)))
    return out, RecurrentState(hidden, out)


def sequence_forward(frames, w: GrnnWeights, cfg: GrnnConfig, reset_state=False, taps=None):
    """Run the cell over a sequence of LR frames.

    ``frames`` is a :class:`VideoSequence` or a list of (B, 3, H, W) tensors;
    the result has the same kind (a sequence result is clipped to [0, 1],
    lists are returned raw).  The first step sees a blank previous frame
    and zero state.  With ``reset_state`` every step is treated as the first.
    ``taps``, if a list, receives one activation dict per step.
    """
    seq = frames.frames if isinstance(frames, VideoSequence) else list(frames)
    if not seq:
        raise ValueError("sequence_forward needs at least one frame")
    first = ad.value_of(seq[0])
    b, _, h, wd = first.shape
    dtype = first.dtype
    blank = np.zeros_like(first)
    state = init_state(cfg, b, h, wd, dtype)
    prev = blank
    outputs = []
    for frame in seq:
        if reset_state:
            state, prev = init_state(cfg, b, h, wd, dtype), blank
        step_taps = {} if taps is not None else None
        out, state = cell_forward(frame, prev, state, w, cfg, step_taps)
        if taps is not None:
            taps.append(step_taps)
        outputs.append(out)
        prev = frame
    if isinstance(frames, VideoSequence):
        return VideoSequence([np.clip(o, 0.0, 1.0) for o in outputs], role="HR")
    return outputs
