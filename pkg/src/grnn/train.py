"""Supervised training with a pixel L1 loss, Adam with decoupled weight
decay and a step-decay learning-rate schedule."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .cell import GrnnConfig, GrnnWeights, sequence_forward
from .data import DEFAULT_SIGMA, VideoSequence, degrade
from .errors import NonFiniteError
from .metrics import MetricReport, score_dataset

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    epochs: int = 70
    steps_per_epoch: int = 100
    lr0: float = 1e-4
    lr_decay: float = 0.1
    lr_decay_every: int = 10
    weight_decay: float = 5e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    clip_length: int = 4
    patch_size: int = 64       # HR pixels
    batch: int = 4             # crops per step
    sigma: float = DEFAULT_SIGMA
    seed: int = 0

    def __post_init__(self):
        for name in ("epochs", "steps_per_epoch", "lr_decay_every", "clip_length",
                     "patch_size", "batch"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1, got {getattr(self, name)}")
        if not self.lr0 > 0:
            raise ValueError(f"lr0 must be positive, got {self.lr0}")

    @property
    def total_steps(self):
        return self.epochs * self.steps_per_epoch


def l1_loss(pred, target):
    """Mean absolute error over every element (scalar)."""
    return float(ad.l1_loss(pred, target).item())


def lr_at_epoch(epoch, cfg: TrainConfig):
    """``lr0 * decay ** floor(epoch / every)``."""
    if epoch < 0:
        raise ValueError("epoch must be >= 0")
    return cfg.lr0 * cfg.lr_decay ** (epoch // cfg.lr_decay_every)


@dataclass
class AdamState:
    m: dict
    v: dict
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0
    lr: float = 1e-4

    @classmethod
    def zeros_like(cls, params, **kw):
        return cls({k: np.zeros_like(p) for k, p in params.items()},
                   {k: np.zeros_like(p) for k, p in params.items()}, **kw)


def adam_step(params, grads, state: AdamState):
    """One update; returns ``(new_params, new_state)`` and leaves the inputs untouched.

    Weight decay is decoupled: ``p <- p - lr * wd * p`` precedes the
    bias-corrected Adam step.
    """
    missing = [k for k in params if k not in grads]
    if missing:
        raise KeyError(f"no gradient for parameters: {missing}")
    t = state.t + 1
    b1, b2, lr = state.beta1, state.beta2, state.lr
    c1, c2 = 1.0 - b1 ** t, 1.0 - b2 ** t
    new_p, new_m, new_v = {}, {}, {}
    for k, p in params.items():
        g = np.asarray(grads[k], dtype=p.dtype)
        m = b1 * state.m[k] + (1 - b1) * g
        v = b2 * state.v[k] + (1 - b2) * g * g
        q = p - (lr * state.weight_decay) * p if state.weight_decay else p
        step = (lr * (m / c1)) / (np.sqrt(v / c2) + state.eps)
        new_p[k] = (q - step).astype(p.dtype, copy=False)
        new_m[k], new_v[k] = m.astype(p.dtype, copy=False), v.astype(p.dtype, copy=False)
    return new_p, AdamState(new_m, new_v, t, b1, b2, state.eps, state.weight_decay, lr)


@dataclass
class TrainResult:
    weights: GrnnWeights
    log: list = field(default_factory=list)


def _sample_batch(rng, hr_clips, lr_clips, cfg: TrainConfig, scale):
    """Aligned random spatio-temporal crops, as per-time-step batched tensors."""
    p, q = cfg.patch_size, cfg.patch_size // scale
    lr_steps = [[] for _ in range(cfg.clip_length)]
    hr_steps = [[] for _ in range(cfg.clip_length)]
    for _ in range(cfg.batch):
        i = int(rng.integers(len(hr_clips)))
        hr, lr = hr_clips[i], lr_clips[i]
        t0 = int(rng.integers(len(hr) - cfg.clip_length + 1))
        h, w = hr.shape[2:]
        y = int(rng.integers((h - p) // scale + 1))
        x = int(rng.integers((w - p) // scale + 1))
        for s in range(cfg.clip_length):
            lr_steps[s].append(lr[t0 + s][:, :, y:y + q, x:x + q])
            hr_steps[s].append(hr[t0 + s][:, :, y * scale:y * scale + p, x * scale:x * scale + p])
    return ([np.concatenate(f, axis=0) for f in lr_steps],
            [np.concatenate(f, axis=0) for f in hr_steps])


def loss_and_grads(weights: GrnnWeights, cfg: GrnnConfig, lr_frames, hr_frames):
    """Full-unroll L1 loss over the clip and its parameter gradients."""
    tape = ad.Tape()
    nodes = weights.map(lambda name, v: tape.param(name, v), cfg)
    outs = sequence_forward(lr_frames, nodes, cfg)
    total = None
    for o, target in zip(outs, hr_frames):
        l = ad.l1_loss(o, target)
        total = l if total is None else ad.add(total, l)
    loss = ad.scale(total, 1.0 / len(outs))
    return float(ad.value_of(loss).item()), ad.backward(loss)


def train_loop(weights: GrnnWeights, cfg: GrnnConfig, clips, tcfg: TrainConfig, val=None,
               steps=None, on_epoch=None, on_record=None):
    """Train on a list of HR :class:`VideoSequence` clips.

    ``val`` is an optional ``{name: HR VideoSequence}`` scored after every
    epoch; ``on_epoch(epoch, weights)`` runs after each epoch (checkpoints)
    and ``on_record(record)`` after each logged step.  ``steps`` caps the
    total step count.
    """
    scale = cfg.scale
    if tcfg.patch_size % scale:
        raise ValueError(f"patch_size {tcfg.patch_size} must be divisible by scale {scale}")
    for c in clips:
        if len(c) < tcfg.clip_length:
            raise ValueError(f"clip of {len(c)} frames is shorter than clip_length "
                             f"{tcfg.clip_length}")
        if min(c.shape[2:]) < tcfg.patch_size:
            raise ValueError(f"clip frames {c.shape[2:]} smaller than patch {tcfg.patch_size}")
    lr_clips = [degrade(c, scale, tcfg.sigma) for c in clips]
    rng = np.random.default_rng(tcfg.seed)
    params = weights.named()
    state = AdamState.zeros_like(params, beta1=tcfg.beta1, beta2=tcfg.beta2, eps=tcfg.eps,
                                 weight_decay=tcfg.weight_decay, lr=tcfg.lr0)
    total = tcfg.total_steps if steps is None else min(steps, tcfg.total_steps)
    records = []
    for step in range(total):
        epoch = step // tcfg.steps_per_epoch
        state.lr = lr_at_epoch(epoch, tcfg)
        lr_frames, hr_frames = _sample_batch(rng, clips, lr_clips, tcfg, scale)
        current = GrnnWeights.from_named(params, cfg)
        loss, grads = loss_and_grads(current, cfg, lr_frames, hr_frames)
        if not math.isfinite(loss):
            raise NonFiniteError("loss", f"non-finite loss {loss} at step {step} "
                                         f"(epoch {epoch}, lr {state.lr:g})")
        params, state = adam_step(params, grads, state)
        rec = {"step": step, "epoch": epoch, "lr": state.lr, "loss": loss, "val_psnr": None}
        end_of_epoch = (step + 1) % tcfg.steps_per_epoch == 0 or step + 1 == total
        if end_of_epoch:
            trained = GrnnWeights.from_named(params, cfg)
            if val:
                rec["val_psnr"] = evaluate(trained, cfg, val, sigma=tcfg.sigma).mean_psnr
            if on_epoch is not None:
                on_epoch(epoch, trained)
        records.append(rec)
        if on_record is not None:
            on_record(rec)
        if step % 50 == 0 or end_of_epoch:
            log.info("step %d epoch %d lr %.3g loss %.5f", step, epoch, state.lr, loss)
    return TrainResult(GrnnWeights.from_named(params, cfg), records)


def _as_pairs(dataset, scale, sigma):
    pairs = {}
    for name, item in dataset.items():
        if isinstance(item, VideoSequence):
            pairs[name] = (degrade(item, scale, sigma), item)
        else:
            lr, hr = item
            if len(lr) != len(hr):
                raise ValueError(f"{name}: {len(lr)} LR frames vs {len(hr)} HR frames")
            pairs[name] = (lr, hr)
    return pairs


def evaluate(weights: GrnnWeights, cfg: GrnnConfig, dataset, sigma=DEFAULT_SIGMA,
             reset_state=False, skip_first=0, crop_border=0) -> MetricReport:
    """Super-resolve every sequence and score it against its HR frames.

    ``dataset`` maps names to HR sequences (degraded on the fly) or to
    ``(lr, hr)`` sequence pairs.
    """
    scored = {}
    for name, (lr, hr) in _as_pairs(dataset, cfg.scale, sigma).items():
        sr = sequence_forward(lr, weights, cfg, reset_state=reset_state)
        scored[name] = (sr.frames, hr.frames)
    return score_dataset(scored, skip_first, crop_border)
