"""Video sequences, the blur-and-decimate degradation, synthetic clips and
PNG frame-directory I/O."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from . import tensor as T
from .errors import DimensionError, EmptySequenceError, FrameDecodeError, FrameSizeMismatchError

log = logging.getLogger(__name__)

DEFAULT_SIGMA = 1.6
SYNTH_KINDS = ("moving-bars", "drifting-checker", "random-texture-translate")


@dataclass
class VideoSequence:
    """Ordered frames of shape (1, C, H, W) sharing one shape."""

    frames: list
    role: str = "HR"

    def __post_init__(self):
        if self.role not in ("HR", "LR"):
            raise ValueError(f"role must be 'HR' or 'LR', got {self.role!r}")
        if not self.frames:
            raise EmptySequenceError("a video sequence needs at least one frame")
        self.frames = [T.check_tensor4(f, "frame") for f in self.frames]
        shape = self.frames[0].shape
        if shape[0] != 1:
            raise DimensionError(f"frames must have batch 1, got {shape[0]}", axis="batch")
        for i, f in enumerate(self.frames):
            if f.shape != shape:
                raise FrameSizeMismatchError(f"frame {i} has shape {f.shape}, expected {shape}")

    def __len__(self):
        return len(self.frames)

    def __getitem__(self, i):
        return self.frames[i]

    def __iter__(self):
        return iter(self.frames)

    @property
    def shape(self):
        return self.frames[0].shape

    def stack(self):
        """Frames as one (T, C, H, W) array."""
        return np.concatenate(self.frames, axis=0)


def degrade_frame(x, scale, sigma=DEFAULT_SIGMA):
    x = T.check_tensor4(x)
    h, w = x.shape[2:]
    if h % scale or w % scale:
        raise DimensionError(f"frame size {h}x{w} is not divisible by scale {scale}", axis="height"
                             if h % scale else "width")
    return np.ascontiguousarray(T.gaussian_blur(x, sigma)[:, :, ::scale, ::scale])


def degrade(hr: VideoSequence, scale=4, sigma=DEFAULT_SIGMA):
    """Gaussian blur, then keep every ``scale``-th pixel starting at offset 0."""
    return VideoSequence([degrade_frame(f, scale, sigma) for f in hr.frames], role="LR")


@dataclass(frozen=True)
class SynthSpec:
    kind: str = "moving-bars"
    frame_count: int = 8
    hr_size: int = 64
    motion: tuple = (1.0, 0.0)   # (dx, dy) pixels per frame, multiples of 0.5
    seed: int = 0
    scale: int = 4

    def __post_init__(self):
        if self.kind not in SYNTH_KINDS:
            raise ValueError(f"unknown synthetic kind {self.kind!r}; choose from {SYNTH_KINDS}")
        if self.frame_count < 1:
            raise ValueError("frame_count must be >= 1")
        if self.hr_size % (4 * self.scale):
            raise ValueError(f"hr_size {self.hr_size} must be divisible by {4 * self.scale}")
        for m in self.motion:
            if float(m) * 2 != round(float(m) * 2):
                raise ValueError(f"motion components must be multiples of 0.5, got {self.motion}")


def _bars(rng, n):
    img = np.empty((3, n, n))
    img[:] = rng.uniform(0.0, 1.0, (3, 1, 1))
    for _ in range(rng.integers(6, 12)):
        width = int(rng.integers(2, max(3, n // 8)))
        start = int(rng.integers(0, n))
        idx = (start + np.arange(width)) % n
        color = rng.uniform(0.0, 1.0, (3, 1))
        if rng.random() < 0.5:
            img[:, :, idx] = color[:, :, None]
        else:
            img[:, idx, :] = color[:, :, None]
    return img


def _checker(rng, n):
    cells = [c for c in (4, 6, 8, 12, 16) if n % (2 * c) == 0] or [n // 2]
    cell = int(rng.choice(cells))
    yy, xx = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
    mask = ((yy // cell + xx // cell) % 2).astype(bool)
    a, b = rng.uniform(0.0, 1.0, (2, 3))
    img = np.where(mask[None], b[:, None, None], a[:, None, None])
    return np.roll(img, (int(rng.integers(0, n)), int(rng.integers(0, n))), axis=(1, 2))


def _texture(rng, n):
    noise = rng.uniform(0.0, 1.0, (3, n, n))
    # periodic smoothing keeps the texture seamless under wrap-around shifts
    f = np.fft.fftfreq(n)
    sigma = 2.0
    g = np.exp(-2 * (np.pi * sigma) ** 2 * (f[:, None] ** 2 + f[None, :] ** 2))
    img = np.real(np.fft.ifft2(np.fft.fft2(noise) * g))
    lo = img.min(axis=(1, 2), keepdims=True)
    hi = img.max(axis=(1, 2), keepdims=True)
    return (img - lo) / np.maximum(hi - lo, 1e-12)


def synth_generate(spec: SynthSpec):
    """Deterministic HR clip whose frame ``t`` is frame ``t-1`` shifted by
    ``spec.motion`` with wrap-around.

    Content is drawn on a 2x supersampled periodic canvas so half-pixel
    motion stays an exact integer roll there; frames are its 2x2 box average.
    """
    rng = np.random.default_rng(spec.seed)
    n = 2 * spec.hr_size
    canvas = {"moving-bars": _bars, "drifting-checker": _checker,
              "random-texture-translate": _texture}[spec.kind](rng, n)
    dx, dy = (int(round(2 * float(m))) for m in spec.motion)
    frames = []
    for t in range(spec.frame_count):
        shifted = np.roll(canvas, (dy * t, dx * t), axis=(1, 2))
        small = shifted.reshape(3, spec.hr_size, 2, spec.hr_size, 2).mean(axis=(2, 4))
        frames.append(np.clip(small, 0.0, 1.0).astype(np.float32)[None])
    return VideoSequence(frames, role="HR")


MIXED_MOTIONS = ((1.0, 0.0), (0.0, 1.0), (1.0, 1.0), (0.5, 1.0))


def parse_motion(text):
    """``"dx,dy"`` -> (dx, dy); ``"mixed"`` -> None."""
    if text.strip().lower() == "mixed":
        return None
    parts = [float(p) for p in text.split(",")]
    if len(parts) != 2:
        raise ValueError(f"motion must be 'dx,dy' or 'mixed', got {text!r}")
    return tuple(parts)


def synth_clips(count, frames=8, size=64, kind="mixed", motion=None, seed=0, scale=4):
    """``count`` clips with consecutive seeds.  ``kind="mixed"`` cycles through
    every synthetic kind and ``motion=None`` cycles through MIXED_MOTIONS."""
    clips = []
    for i in range(count):
        k = SYNTH_KINDS[i % len(SYNTH_KINDS)] if kind == "mixed" else kind
        m = MIXED_MOTIONS[i % len(MIXED_MOTIONS)] if motion is None else motion
        clips.append(synth_generate(SynthSpec(k, frames, size, tuple(m), seed + i, scale)))
    return clips


def _decode(path):
    try:
        with Image.open(path) as im:
            arr = np.asarray(im.convert("RGB"), dtype=np.uint8)
    except (OSError, ValueError) as exc:
        raise FrameDecodeError(f"cannot decode {path}: {exc}") from exc
    return (arr.astype(np.float32) / 255.0).transpose(2, 0, 1)[None].copy()


def load_sequence_dir(path, role="HR"):
    """Load ``*.png`` frames from ``path`` in lexicographic filename order."""
    path = Path(path)
    if not path.is_dir():
        raise FileNotFoundError(f"no such frame directory: {path}")
    files = sorted(p for p in path.iterdir() if p.suffix.lower() == ".png" and p.is_file())
    if not files:
        raise EmptySequenceError(f"no PNG frames in {path}")
    frames, shape = [], None
    for f in files:
        x = _decode(f)
        if shape is None:
            shape = x.shape
        elif x.shape != shape:
            raise FrameSizeMismatchError(
                f"{f}: size {x.shape[3]}x{x.shape[2]} differs from {shape[3]}x{shape[2]}")
        frames.append(x)
    return VideoSequence(frames, role=role)


def to_uint8(x):
    """(1, 3, H, W) floats in [0, 1] -> (H, W, 3) bytes, clamped and rounded."""
    x = np.asarray(x, dtype=np.float64)
    q = np.floor(np.clip(x, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)
    return q[0].transpose(1, 2, 0)


def save_frames(seq, path):
    """Write frames as ``0001.png``, ``0002.png``, ... under ``path``."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    frames = seq.frames if isinstance(seq, VideoSequence) else list(seq)
    for i, f in enumerate(frames, start=1):
        Image.fromarray(to_uint8(f)).save(path / f"{i:04d}.png")


def load_dataset(root, role="HR"):
    """``{sequence name: VideoSequence}`` for a ``<root>/<sequence>/<frame>.png``
    tree.  A directory holding PNGs directly is treated as one sequence."""
    root = Path(root)
    if not root.is_dir():
        raise FileNotFoundError(f"no such dataset directory: {root}")
    if any(p.suffix.lower() == ".png" for p in root.iterdir()):
        return {root.name: load_sequence_dir(root, role)}
    out = {}
    for sub in sorted(p for p in root.iterdir() if p.is_dir()):
        out[sub.name] = load_sequence_dir(sub, role)
    if not out:
        raise EmptySequenceError(f"no sequences under {root}")
    return out
