"""Minimal reverse-mode automatic differentiation over numpy arrays.

Provides exactly the operations the graph-network surrogate needs: affine
layers, ReLU, LayerNorm, row gather/scatter, concatenation, residual adds,
and the relative-error loss.  Values are wrapped in ``Var`` nodes that hold
a backprop closure; ``backward`` walks the tape in reverse topological
order.  Inside ``no_grad()`` every op returns a plain ndarray, so inference
pays no tape overhead.
"""

from __future__ import annotations

from contextlib import contextmanager

import numpy as np

_grad_enabled = True

LN_EPS = 1e-5


@contextmanager
def no_grad():
    global _grad_enabled
    previous = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = previous


class Var:
    """A value on the tape; ``grad`` is filled by ``backward``."""

    __slots__ = ("value", "grad", "_parents", "_backprop")

    def __init__(self, value, parents=(), backprop=None):
        self.value = np.asarray(value, dtype=float)
        self.grad = None
        self._parents = parents
        self._backprop = backprop

    @property
    def shape(self):
        return self.value.shape


def value_of(x):
    return x.value if isinstance(x, Var) else x


def _recording(*args) -> bool:
    return _grad_enabled and any(isinstance(a, Var) for a in args)


def _accumulate(node, grad):
    if isinstance(node, Var):
        node.grad = grad if node.grad is None else node.grad + grad


def backward(root: Var) -> None:
    """Backpropagate from a scalar root through the tape."""
    topo, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if not isinstance(node, Var) or (id(node) in seen and not expanded):
            continue
        if expanded:
            topo.append(node)
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if isinstance(parent, Var) and id(parent) not in seen:
                stack.append((parent, False))
    root.grad = np.ones_like(root.value)
    for node in reversed(topo):
        if node._backprop is None or node.grad is None:
            continue
        for parent, contribution in node._backprop(node.grad):
            _accumulate(parent, contribution)


def linear(x, w, b):
    """y = x @ w + b"""
    xv, wv, bv = value_of(x), value_of(w), value_of(b)
    y = xv @ wv
    y += bv
    if not _recording(x, w, b):
        return y

    def backprop(g):
        return [(x, g @ wv.T), (w, xv.T @ g), (b, g.sum(axis=0))]

    return Var(y, (x, w, b), backprop)


def linear_multi(parts, w, b):
    """y = concat(parts) @ w + b without materializing the concatenation.

    ``w`` is row-partitioned by the part widths, so the parameter layout is
    identical to a plain ``linear`` on concatenated input.
    """
    values = [value_of(p) for p in parts]
    wv, bv = value_of(w), value_of(b)
    widths = [v.shape[-1] for v in values]
    offsets = np.concatenate([[0], np.cumsum(widths)])
    y = values[0] @ wv[offsets[0]:offsets[1]]
    for k in range(1, len(values)):
        y += values[k] @ wv[offsets[k]:offsets[k + 1]]
    y += bv
    if not _recording(*parts, w, b):
        return y

    def backprop(g):
        grads = [(part, g @ wv[offsets[k]:offsets[k + 1]].T)
                 for k, part in enumerate(parts)]
        dw = np.concatenate([values[k].T @ g for k in range(len(values))], axis=0)
        grads.append((w, dw))
        grads.append((b, g.sum(axis=0)))
        return grads

    return Var(y, tuple(parts) + (w, b), backprop)


def relu(x):
    xv = value_of(x)
    y = np.maximum(xv, 0.0)
    if not _recording(x):
        return y

    def backprop(g):
        return [(x, g * (xv > 0))]

    return Var(y, (x,), backprop)


def layer_norm(x, gamma, beta):
    """Row-wise LayerNorm over the last axis."""
    xv, gv, bv = value_of(x), value_of(gamma), value_of(beta)
    width = xv.shape[-1]
    mu = xv.mean(axis=-1, keepdims=True)
    centered = xv - mu
    var = np.einsum("...i,...i->...", centered, centered)[..., None] / width
    var += LN_EPS
    inv = 1.0 / np.sqrt(var)
    xhat = centered
    xhat *= inv
    y = gv * xhat
    y += bv
    if not _recording(x, gamma, beta):
        return y

    def backprop(g):
        dxhat = g * gv
        dx = inv * (dxhat
                    - dxhat.mean(axis=-1, keepdims=True)
                    - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True))
        return [(x, dx), (gamma, (g * xhat).sum(axis=0)), (beta, g.sum(axis=0))]

    return Var(y, (x, gamma, beta), backprop)


def gather(x, index):
    """Select rows: y = x[index]."""
    xv = value_of(x)
    y = xv[index]
    if not _recording(x):
        return y

    def backprop(g):
        dx = np.zeros_like(xv)
        np.add.at(dx, index, g)
        return [(x, dx)]

    return Var(y, (x,), backprop)


def scatter_sum(x, index, size, index_sorted=False):
    """Sum rows of x into an output of ``size`` rows addressed by index.

    With ``index_sorted`` the segmented reduction runs via add.reduceat
    (much faster than np.add.at); both paths accumulate in a fixed order.
    """
    xv = value_of(x)
    y = np.zeros((size, xv.shape[1]))
    if index_sorted and len(index):
        starts = np.flatnonzero(np.diff(index, prepend=index[0] - 1))
        y[index[starts]] = np.add.reduceat(xv, starts, axis=0)
    else:
        np.add.at(y, index, xv)
    if not _recording(x):
        return y

    def backprop(g):
        return [(x, g[index])]

    return Var(y, (x,), backprop)


def concat(parts):
    """Concatenate along the feature (last) axis."""
    values = [value_of(p) for p in parts]
    y = np.concatenate(values, axis=-1)
    if not _recording(*parts):
        return y
    widths = [v.shape[-1] for v in values]
    splits = np.cumsum(widths)[:-1]

    def backprop(g):
        return list(zip(parts, np.split(g, splits, axis=-1)))

    return Var(y, tuple(parts), backprop)


def add(a, b):
    """Same-shape residual addition."""
    y = value_of(a) + value_of(b)
    if not _recording(a, b):
        return y

    def backprop(g):
        return [(a, g), (b, g)]

    return Var(y, (a, b), backprop)


def relative_l2_loss(pred, target, floor=1e-12):
    """Mean over rows of ||pred - target|| / ||target||, skipping rows whose
    target norm is below ``floor``.  Rows where pred == target contribute a
    zero subgradient."""
    pv, tv = value_of(pred), np.asarray(target, dtype=float)
    diff = pv - tv
    dist = np.linalg.norm(diff, axis=-1)
    tnorm = np.linalg.norm(tv, axis=-1)
    keep = tnorm >= floor
    count = int(keep.sum())
    if count == 0:
        raise ValueError("every target row has vanishing norm")
    loss = float((dist[keep] / tnorm[keep]).sum() / count)
    if not _recording(pred):
        return loss

    def backprop(g):
        safe = keep & (dist > 0)
        scale = np.zeros_like(dist)
        scale[safe] = g / (count * dist[safe] * tnorm[safe])
        return [(pred, scale[:, None] * diff)]

    return Var(loss, (pred,), backprop)
