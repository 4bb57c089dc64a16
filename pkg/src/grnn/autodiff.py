"""Reverse-mode differentiation over the tensor kernels.

A :class:`Tape` records :class:`Node` objects in creation order, which is a
valid topological order, so :func:`backward` just walks the tape in reverse.
Every op in this module accepts plain arrays or nodes; when no argument is a
node it returns the plain kernel result, so model code is written once and
serves both inference and training.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .errors import DimensionError


class Tape:
    def __init__(self):
        self.nodes: list[Node] = []
        self.params: dict[str, Node] = {}

    def param(self, name, value):
        """Register a trainable leaf.  Gradients are reported under ``name``."""
        if name in self.params:
            raise ValueError(f"duplicate parameter name {name!r}")
        node = self._push(np.asarray(value), (), None, "param")
        node.name = name
        self.params[name] = node
        return node

    def constant(self, value):
        return self._push(np.asarray(value), (), None, "const")

    def _push(self, value, parents, vjp, kind):
        node = Node(value, parents, vjp, kind, self, len(self.nodes))
        self.nodes.append(node)
        return node


class Node:
    __slots__ = ("value", "parents", "vjp", "kind", "tape", "index", "name")

    def __init__(self, value, parents, vjp, kind, tape, index):
        self.value = value
        self.parents = parents
        self.vjp = vjp
        self.kind = kind
        self.tape = tape
        self.index = index
        self.name = None

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        return f"Node({self.kind}, shape={self.value.shape})"


def value_of(x):
    return x.value if isinstance(x, Node) else x


def _tape_of(args):
    tape = None
    for a in args:
        if isinstance(a, Node):
            if tape is None:
                tape = a.tape
            elif a.tape is not tape:
                raise ValueError("nodes from different tapes cannot be combined")
    return tape


def _record(tape, value, parents, vjp, kind):
    """``vjp(g)`` returns one gradient (or None) per parent."""
    parents = tuple(p if isinstance(p, Node) else None for p in parents)
    return tape._push(value, parents, vjp, kind)


def detach(x):
    """Same value, but gradients stop here."""
    return value_of(x)


# -- ops ---------------------------------------------------------------------

def conv2d(x, weight, bias=None):
    tape = _tape_of((x, weight, bias))
    xv, wv = value_of(x), value_of(weight)
    bv = value_of(bias)
    out = T.conv2d(xv, wv, bv)
    if tape is None:
        return out
    kernel = wv.shape[2:]

    def vjp(g):
        gx = T.conv2d_input_grad(g, wv) if isinstance(x, Node) else None
        gw = T.conv2d_weight_grad(xv, g, kernel) if isinstance(weight, Node) else None
        gb = g.sum(axis=(0, 2, 3)) if isinstance(bias, Node) else None
        return gx, gw, gb

    return _record(tape, out, (x, weight, bias), vjp, "conv2d")


def depthwise_conv2d(x, weight, bias=None):
    tape = _tape_of((x, weight, bias))
    xv, wv = value_of(x), value_of(weight)
    out = T.depthwise_conv2d(xv, wv, value_of(bias))
    if tape is None:
        return out
    kernel = wv.shape[2:]

    def vjp(g):
        gx = T.depthwise_input_grad(g, wv) if isinstance(x, Node) else None
        gw = T.depthwise_weight_grad(xv, g, kernel) if isinstance(weight, Node) else None
        gb = g.sum(axis=(0, 2, 3)) if isinstance(bias, Node) else None
        return gx, gw, gb

    return _record(tape, out, (x, weight, bias), vjp, "depthwise_conv2d")


def relu(x):
    out = T.relu(value_of(x))
    if not isinstance(x, Node):
        return out
    # subgradient 0 at exactly 0
    mask = value_of(x) > 0
    return _record(x.tape, out, (x,), lambda g: (g * mask,), "relu")


def add(a, b):
    tape = _tape_of((a, b))
    out = T.add(value_of(a), value_of(b))
    if tape is None:
        return out
    return _record(tape, out, (a, b), lambda g: (g, g), "add")


def mul(a, b):
    """Elementwise product of equal-shaped tensors."""
    tape = _tape_of((a, b))
    av, bv = np.asarray(value_of(a)), np.asarray(value_of(b))
    if av.shape != bv.shape:
        raise DimensionError(f"mul: shapes {av.shape} and {bv.shape} differ", axis="shape")
    out = av * bv
    if tape is None:
        return out
    return _record(tape, out, (a, b), lambda g: (g * bv, g * av), "mul")


def concat_channels(a, b):
    tape = _tape_of((a, b))
    av = value_of(a)
    out = T.concat_channels(av, value_of(b))
    if tape is None:
        return out
    ca = av.shape[1]
    return _record(tape, out, (a, b), lambda g: (g[:, :ca], g[:, ca:]), "concat")


def slice_channels(x, start, stop):
    xv = value_of(x)
    out = T.slice_channels(xv, start, stop)
    if not isinstance(x, Node):
        return out

    def vjp(g):
        gx = np.zeros_like(xv, dtype=g.dtype)
        gx[:, start:stop] = g
        return (gx,)

    return _record(x.tape, out, (x,), vjp, "slice")


def pixel_shuffle(x, r):
    out = T.pixel_shuffle(value_of(x), r)
    if not isinstance(x, Node):
        return out
    return _record(x.tape, out, (x,), lambda g: (T.space_to_depth(g, r),), "pixel_shuffle")


def space_to_depth(x, r):
    out = T.space_to_depth(value_of(x), r)
    if not isinstance(x, Node):
        return out
    return _record(x.tape, out, (x,), lambda g: (T.pixel_shuffle(g, r),), "space_to_depth")


def bicubic_resize(x, scale):
    xv = value_of(x)
    out = T.bicubic_resize(xv, scale)
    if not isinstance(x, Node):
        return out
    h, w = xv.shape[2:]
    rh = T.bicubic_matrix(h, out.shape[2]).astype(out.dtype)
    rw = T.bicubic_matrix(w, out.shape[3]).astype(out.dtype)
    return _record(x.tape, out, (x,), lambda g: (rh.T @ g @ rw,), "bicubic")


def sum_all(x):
    xv = value_of(x)
    out = np.asarray(xv.sum(), dtype=xv.dtype).reshape(1, 1, 1, 1)
    if not isinstance(x, Node):
        return out
    return _record(x.tape, out, (x,), lambda g: (np.full_like(xv, g.item()),), "sum")


def l1_loss(pred, target):
    """Mean absolute error over every element, as a 1x1x1x1 tensor."""
    tape = _tape_of((pred, target))
    pv, tv = value_of(pred), value_of(target)
    if pv.shape != tv.shape:
        raise DimensionError(f"l1_loss: shapes {pv.shape} and {tv.shape} differ", axis="shape")
    diff = pv - tv
    out = np.asarray(np.abs(diff).mean(), dtype=diff.dtype).reshape(1, 1, 1, 1)
    if tape is None:
        return out
    sign = np.sign(diff)
    n = diff.size

    def vjp(g):
        gp = sign * (g.item() / n)
        return gp, -gp

    return _record(tape, out, (pred, target), vjp, "l1")


def scale(x, c):
    """Multiply by a Python scalar."""
    out = value_of(x) * c
    if not isinstance(x, Node):
        return out
    return _record(x.tape, out, (x,), lambda g: (g * c,), "scale")


# -- backward ----------------------------------------------------------------

def backward(loss):
    """Return ``{param name: dloss/dparam}`` for every parameter reachable from ``loss``.

    Parameters used several times (e.g. shared across time steps) receive
    the sum of the gradient contributions of all their uses.
    """
    if not isinstance(loss, Node):
        raise TypeError("backward() needs a Node; the loss was computed without a tape")
    if loss.value.size != 1:
        raise DimensionError(f"loss must be scalar, got shape {loss.value.shape}", axis="shape")
    tape = loss.tape
    grads: dict[int, np.ndarray] = {loss.index: np.ones_like(loss.value)}
    for node in reversed(tape.nodes[:loss.index + 1]):
        g = grads.get(node.index)
        if g is None or node.vjp is None:
            continue
        for parent, pg in zip(node.parents, node.vjp(g)):
            if parent is None or pg is None:
                continue
            if parent.index >= node.index:
                raise RuntimeError("cycle detected on tape")
            if parent.index in grads:
                grads[parent.index] = grads[parent.index] + pg
            else:
                grads[parent.index] = pg
    out = {}
    for name, node in tape.params.items():
        if node.index in grads:
            out[name] = grads[node.index].reshape(node.value.shape)
    return out


# -- finite-difference oracle ------------------------------------------------

@dataclass
class GradCheckReport:
    max_rel_error: float
    tol: float
    checked: int
    per_param: dict = field(default_factory=dict)

    @property
    def passed(self):
        return self.max_rel_error < self.tol


def grad_check(build_loss, params, h=1e-5, tol=1e-4, max_samples=64, seed=0):
    """Compare :func:`backward` against central differences.

    ``build_loss(tape, nodes)`` must build a scalar loss from ``nodes``, a
    dict of parameter nodes registered on ``tape``.  ``params`` maps names
    to float64 arrays.  Tensors larger than ``max_samples`` elements are
    checked on a seeded random sample of that many entries.
    """
    if not 1e-6 <= h <= 1e-4:
        raise ValueError("h must lie in [1e-6, 1e-4]")
    params = {k: np.array(v, dtype=np.float64) for k, v in params.items()}

    def run(values):
        tape = Tape()
        nodes = {k: tape.param(k, v) for k, v in values.items()}
        return build_loss(tape, nodes)

    analytic = backward(run(params))

    def loss_at(name, flat_idx, delta):
        values = dict(params)
        v = params[name].copy()
        v.flat[flat_idx] += delta
        values[name] = v
        return float(value_of(run(values)).item())

    rng = np.random.default_rng(seed)
    worst, checked, per_param = 0.0, 0, {}
    for name, p in params.items():
        a = analytic.get(name, np.zeros_like(p))
        idx = np.arange(p.size)
        if p.size > max_samples:
            idx = rng.choice(p.size, size=max_samples, replace=False)
        pw = 0.0
        for k in idx:
            num = (loss_at(name, k, h) - loss_at(name, k, -h)) / (2 * h)
            an = float(a.flat[k])
            rel = abs(an - num) / max(abs(an), abs(num), 1e-8)
            pw = max(pw, rel)
            checked += 1
        per_param[name] = pw
        worst = max(worst, pw)
    return GradCheckReport(worst, tol, checked, per_param)
