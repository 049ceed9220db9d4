"""Reverse-mode automatic differentiation on numpy arrays.

A ``Tape`` records primitive operations in execution order; ``Tape.backward``
replays them in reverse, accumulating adjoints. ``DualArray`` values without a
tape behave as constants and never receive gradients, so the same code path
serves both training (taped) and plain evaluation (untaped).

Everything is float64. Two backward passes over the same tape are
bitwise-identical: node order is fixed and accumulation order is fixed.
"""

from __future__ import annotations

import numpy as np

from . import kernels as _kernels


class ShapeError(ValueError):
    pass


class Tape:
    """Append-only record of operations for one backward pass."""

    def __init__(self):
        self._nodes = []

    def _record(self, node):
        self._nodes.append(node)

    def zero_grads(self):
        for n in self._nodes:
            n.grad = None

    def reset(self):
        self.zero_grads()
        self._nodes.clear()

    def __len__(self):
        return len(self._nodes)

    def backward(self, output, seed=None):
        """Accumulate d(output)/d(node) into every recorded node's .grad."""
        if output.tape is not self:
            raise ValueError("output was not recorded on this tape")
        self.zero_grads()
        if seed is None:
            if output.value.size != 1:
                raise ValueError("backward needs a scalar output or an explicit seed")
            seed = np.ones_like(output.value)
        output.grad = np.array(seed, dtype=np.float64).reshape(output.value.shape)
        for node in reversed(self._nodes):
            if node.grad is not None and node._backward is not None:
                node._backward(node.grad)


class DualArray:
    """A float64 ndarray, optionally attached to a tape for gradients."""

    __slots__ = ("value", "tape", "grad", "_backward")

    def __init__(self, value, tape=None):
        self.value = np.asarray(value, dtype=np.float64)
        self.tape = tape
        self.grad = None
        self._backward = None
        if tape is not None:
            tape._record(self)

    @property
    def shape(self):
        return self.value.shape

    @property
    def ndim(self):
        return self.value.ndim

    @property
    def size(self):
        return self.value.size

    def item(self):
        return float(self.value)

    def detach(self):
        return DualArray(self.value.copy())

    def __repr__(self):
        return f"DualArray(shape={self.value.shape}, taped={self.tape is not None})"

    # arithmetic operators
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, p):
        return power(self, p)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return getitem(self, key)


def as_dual(x):
    return x if isinstance(x, DualArray) else DualArray(x)


def _val(x):
    return x.value if isinstance(x, DualArray) else np.asarray(x, dtype=np.float64)


def _tape_of(*xs):
    tape = None
    for x in xs:
        if isinstance(x, DualArray) and x.tape is not None:
            if tape is None:
                tape = x.tape
            elif tape is not x.tape:
                raise ValueError("operands live on different tapes")
    return tape


def _accum(x, g):
    if isinstance(x, DualArray) and x.tape is not None:
        if x.grad is None:
            x.grad = np.array(g, dtype=np.float64, copy=True).reshape(x.value.shape)
        else:
            x.grad += g.reshape(x.value.shape)


def _unbroadcast(g, shape):
    """Sum gradient g down to the given (broadcast-source) shape."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, (gs, ss) in enumerate(zip(g.shape, shape)):
        if ss == 1 and gs != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


def _check_broadcast(a, b):
    try:
        return np.broadcast_shapes(np.shape(_val(a)), np.shape(_val(b)))
    except ValueError:
        raise ShapeError(
            f"incompatible shapes {np.shape(_val(a))} and {np.shape(_val(b))}"
        ) from None


def _node(value, tape, backward):
    out = DualArray(value, tape)
    if tape is not None:
        out._backward = backward
    return out


# ---------------------------------------------------------------- binary ops


def add(a, b):
    _check_broadcast(a, b)
    va, vb = _val(a), _val(b)
    tape = _tape_of(a, b)

    def bwd(g):
        _accum(a, _unbroadcast(g, va.shape))
        _accum(b, _unbroadcast(g, vb.shape))

    return _node(va + vb, tape, bwd)


def sub(a, b):
    _check_broadcast(a, b)
    va, vb = _val(a), _val(b)
    tape = _tape_of(a, b)

    def bwd(g):
        _accum(a, _unbroadcast(g, va.shape))
        _accum(b, -_unbroadcast(g, vb.shape))

    return _node(va - vb, tape, bwd)


def mul(a, b):
    _check_broadcast(a, b)
    va, vb = _val(a), _val(b)
    tape = _tape_of(a, b)

    def bwd(g):
        _accum(a, _unbroadcast(g * vb, va.shape))
        _accum(b, _unbroadcast(g * va, vb.shape))

    return _node(va * vb, tape, bwd)


def div(a, b):
    _check_broadcast(a, b)
    va, vb = _val(a), _val(b)
    tape = _tape_of(a, b)

    def bwd(g):
        _accum(a, _unbroadcast(g / vb, va.shape))
        _accum(b, _unbroadcast(-g * va / (vb * vb), vb.shape))

    return _node(va / vb, tape, bwd)


def maximum(a, b):
    """Elementwise max; on ties the gradient routes to the first argument."""
    _check_broadcast(a, b)
    va, vb = _val(a), _val(b)
    tape = _tape_of(a, b)
    take_a = va >= vb

    def bwd(g):
        _accum(a, _unbroadcast(g * take_a, va.shape))
        _accum(b, _unbroadcast(g * ~take_a, vb.shape))

    return _node(np.maximum(va, vb), tape, bwd)


def minimum(a, b):
    _check_broadcast(a, b)
    va, vb = _val(a), _val(b)
    tape = _tape_of(a, b)
    take_a = va <= vb

    def bwd(g):
        _accum(a, _unbroadcast(g * take_a, va.shape))
        _accum(b, _unbroadcast(g * ~take_a, vb.shape))

    return _node(np.minimum(va, vb), tape, bwd)


def matmul(a, b):
    va, vb = _val(a), _val(b)
    if va.ndim != 2 or vb.ndim != 2:
        raise ShapeError(f"matmul needs 2-D operands, got {va.shape} and {vb.shape}")
    if va.shape[1] != vb.shape[0]:
        raise ShapeError(f"matmul shape mismatch: {va.shape} @ {vb.shape}")
    tape = _tape_of(a, b)

    def bwd(g):
        _accum(a, g @ vb.T)
        _accum(b, va.T @ g)

    return _node(va @ vb, tape, bwd)


# ----------------------------------------------------------------- unary ops


def neg(a):
    va = _val(a)

    def bwd(g):
        _accum(a, -g)

    return _node(-va, _tape_of(a), bwd)


def exp(a):
    va = _val(a)
    out_v = np.exp(va)

    def bwd(g):
        _accum(a, g * out_v)

    return _node(out_v, _tape_of(a), bwd)


def log(a):
    va = _val(a)
    if np.any(va <= 0.0):
        raise ValueError("log of non-positive input")

    def bwd(g):
        _accum(a, g / va)

    return _node(np.log(va), _tape_of(a), bwd)


def sin(a):
    va = _val(a)

    def bwd(g):
        _accum(a, g * np.cos(va))

    return _node(np.sin(va), _tape_of(a), bwd)


def cos(a):
    va = _val(a)

    def bwd(g):
        _accum(a, -g * np.sin(va))

    return _node(np.cos(va), _tape_of(a), bwd)


def sqrt(a):
    va = _val(a)
    if np.any(va < 0.0):
        raise ValueError("sqrt of negative input")
    out_v = np.sqrt(va)

    def bwd(g):
        _accum(a, g * 0.5 / out_v)

    return _node(out_v, _tape_of(a), bwd)


def power(a, p):
    """a**p for a constant real exponent p."""
    va = _val(a)
    p = float(p)

    def bwd(g):
        _accum(a, g * p * va ** (p - 1.0))

    return _node(va**p, _tape_of(a), bwd)


def absolute(a):
    va = _val(a)
    sign = np.sign(va)

    def bwd(g):
        _accum(a, g * sign)

    return _node(np.abs(va), _tape_of(a), bwd)


def clamp(a, lo, hi):
    """Clamp into [lo, hi]; subgradient 1 inside and at the boundaries."""
    va = _val(a)
    vlo, vhi = _val(lo), _val(hi)
    inside = (va >= vlo) & (va <= vhi)

    def bwd(g):
        _accum(a, _unbroadcast(g * inside, va.shape))

    return _node(np.clip(va, vlo, vhi), _tape_of(a), bwd)


def relu(a):
    va = _val(a)
    mask = va > 0.0

    def bwd(g):
        _accum(a, g * mask)

    return _node(va * mask, _tape_of(a), bwd)


def softplus(a):
    va = _val(a)
    out_v, sig = _kernels.softplus_pair(va)

    def bwd(g):
        _accum(a, g * sig)

    return _node(out_v, _tape_of(a), bwd)


def sigmoid(a):
    va = _val(a)
    out_v = _kernels.sigmoid_val(va).reshape(va.shape)

    def bwd(g):
        _accum(a, g * out_v * (1.0 - out_v))

    return _node(out_v, _tape_of(a), bwd)


# ---------------------------------------------------------------- reductions


def asum(a, axis=None, keepdims=False):
    va = _val(a)

    def bwd(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        _accum(a, np.broadcast_to(g, va.shape))

    return _node(va.sum(axis=axis, keepdims=keepdims), _tape_of(a), bwd)


def amean(a, axis=None, keepdims=False):
    va = _val(a)
    if axis is None:
        n = va.size
    else:
        n = va.shape[axis]

    def bwd(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        _accum(a, np.broadcast_to(g / n, va.shape))

    return _node(va.mean(axis=axis, keepdims=keepdims), _tape_of(a), bwd)


def cumsum_last(a):
    """Cumulative sum along the last axis."""
    va = _val(a)

    def bwd(g):
        _accum(a, np.flip(np.cumsum(np.flip(g, -1), axis=-1), -1))

    return _node(np.cumsum(va, axis=-1), _tape_of(a), bwd)


# ------------------------------------------------------------- restructuring


def reshape(a, shape):
    va = _val(a)

    def bwd(g):
        _accum(a, g.reshape(va.shape))

    return _node(va.reshape(shape), _tape_of(a), bwd)


def concat(parts, axis=-1):
    vals = [_val(p) for p in parts]
    tape = _tape_of(*parts)
    sizes = [v.shape[axis] for v in vals]
    splits = np.cumsum(sizes[:-1])

    def bwd(g):
        for p, gp in zip(parts, np.split(g, splits, axis=axis)):
            _accum(p, gp)

    return _node(np.concatenate(vals, axis=axis), tape, bwd)


def take_along(a, idx, axis=-1):
    """Gather along an axis by an integer index array (same rank as a).

    The backward pass scatter-adds through the permutation; the indices
    themselves are non-differentiable.
    """
    va = _val(a)
    idx = np.asarray(idx)

    def bwd(g):
        ga = np.zeros_like(va)
        grids = list(np.ogrid[tuple(slice(0, s) for s in idx.shape)])
        grids[axis % va.ndim] = idx
        np.add.at(ga, tuple(grids), g)
        _accum(a, ga)

    return _node(np.take_along_axis(va, idx, axis=axis), _tape_of(a), bwd)


def getitem(a, key):
    va = _val(a)
    advanced = isinstance(key, np.ndarray) or (
        isinstance(key, tuple) and any(isinstance(k, np.ndarray) for k in key)
    )

    def bwd(g):
        ga = np.zeros_like(va)
        if advanced:
            np.add.at(ga, key, g)
        else:
            ga[key] += g
        _accum(a, ga)

    return _node(va[key], _tape_of(a), bwd)


def where(cond, a, b):
    """Select by a constant boolean condition."""
    cond = np.asarray(_val(cond), dtype=bool)
    va, vb = _val(a), _val(b)
    _check_broadcast(a, b)

    def bwd(g):
        _accum(a, _unbroadcast(g * cond, va.shape))
        _accum(b, _unbroadcast(g * ~cond, vb.shape))

    return _node(np.where(cond, va, vb), _tape_of(a, b), bwd)


def stop_gradient(a):
    return DualArray(_val(a).copy())


# ------------------------------------------------------------- grad checking


def grad_check(f, x, h=1e-5):
    """Max relative error between analytic and central-difference gradients.

    Error per coordinate is |analytic - numeric| / max(1, |analytic|); the
    maximum over coordinates is returned. Raises if the forward value is not
    finite.
    """
    x0 = np.asarray(x, dtype=np.float64)
    tape = Tape()
    xd = DualArray(x0, tape)
    y = f(xd)
    if not np.all(np.isfinite(y.value)):
        raise FloatingPointError("non-finite forward value in grad_check")
    tape.backward(y)
    analytic = xd.grad if xd.grad is not None else np.zeros_like(x0)

    flat = x0.ravel()
    numeric = np.zeros_like(flat)
    for i in range(flat.size):
        xp = flat.copy()
        xp[i] += h
        xm = flat.copy()
        xm[i] -= h
        fp = float(f(DualArray(xp.reshape(x0.shape))).value)
        fm = float(f(DualArray(xm.reshape(x0.shape))).value)
        numeric[i] = (fp - fm) / (2.0 * h)
    a = analytic.ravel()
    return float(np.max(np.abs(a - numeric) / np.maximum(1.0, np.abs(a))))
