"""Dense tensors with reverse-mode automatic differentiation.

A dynamic tape: every operation on ``Tensor`` records its parents and a
closure computing the parent cotangents, and ``backward`` replays the
recorded graph in reverse topological order. Data lives in numpy arrays,
float64 by default (float32 is supported for cheaper training runs).

Only the operations the three model families need are implemented; each
op is vectorized numpy on the forward and a hand-derived vjp on the
backward, so the tape stays short even for full training steps.
"""

from __future__ import annotations

import contextlib

import numpy as np

from .errors import ContractError, DimensionError

DEFAULT_DTYPE = np.float64

_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Disable tape recording inside the block (evaluation fast path)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def _unbroadcast(g, shape):
    """Reduce cotangent g to `shape`, undoing numpy broadcasting."""
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, (gs, ss) in enumerate(zip(g.shape, shape)) if ss == 1 and gs != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def _check_broadcast(a, b, opname):
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise DimensionError(f"{opname}: shapes {a.shape} and {b.shape} do not broadcast") from None


class Tensor:
    """A dense real array plus optional participation in the gradient tape.

    Invariants: ``grad``, when set, has the same shape as ``data``; after
    ``backward()`` on a scalar loss, every reachable leaf with
    ``requires_grad`` has a populated ``grad`` (accumulated, not reset).
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_vjp")

    def __init__(self, data, requires_grad=False, dtype=None):
        if isinstance(data, Tensor):
            data = data.data
        arr = np.asarray(data)
        if dtype is not None:
            arr = arr.astype(dtype, copy=False)
        elif arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(DEFAULT_DTYPE)
        self.data = arr
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = ()
        self._vjp = None

    # -- construction helpers -------------------------------------------------

    @staticmethod
    def from_op(data, parents, vjp):
        """Record an op result. `vjp(g)` returns one cotangent per parent
        (None for parents that need no gradient)."""
        out = Tensor.__new__(Tensor)
        out.data = data
        out.grad = None
        parents = tuple(parents)
        if _grad_enabled and any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = parents
            out._vjp = vjp
        else:
            out.requires_grad = False
            out._parents = ()
            out._vjp = None
        return out

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def item(self):
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else self.data.item()

    def zero_grad(self):
        self.grad = None

    def detach(self):
        return Tensor(self.data, requires_grad=False)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    # -- arithmetic ------------------------------------------------------------

    def _coerce(self, other):
        if isinstance(other, Tensor):
            return other
        return Tensor(np.asarray(other, dtype=self.data.dtype))

    def __add__(self, other):
        other = self._coerce(other)
        _check_broadcast(self, other, "add")
        a, b = self, other
        return Tensor.from_op(
            a.data + b.data,
            (a, b),
            lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)),
        )

    __radd__ = __add__

    def __neg__(self):
        a = self
        return Tensor.from_op(-a.data, (a,), lambda g: (-g,))

    def __sub__(self, other):
        other = self._coerce(other)
        _check_broadcast(self, other, "sub")
        a, b = self, other
        return Tensor.from_op(
            a.data - b.data,
            (a, b),
            lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)),
        )

    def __rsub__(self, other):
        return self._coerce(other).__sub__(self)

    def __mul__(self, other):
        other = self._coerce(other)
        _check_broadcast(self, other, "mul")
        a, b = self, other
        return Tensor.from_op(
            a.data * b.data,
            (a, b),
            lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)),
        )

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = self._coerce(other)
        _check_broadcast(self, other, "div")
        a, b = self, other
        return Tensor.from_op(
            a.data / b.data,
            (a, b),
            lambda g: (
                _unbroadcast(g / b.data, a.shape),
                _unbroadcast(-g * a.data / (b.data * b.data), b.shape),
            ),
        )

    def __pow__(self, exponent):
        if not isinstance(exponent, (int, float)):
            raise ContractError("only scalar exponents are supported")
        a = self
        out = a.data**exponent
        return Tensor.from_op(out, (a,), lambda g: (g * exponent * a.data ** (exponent - 1),))

    def __matmul__(self, other):
        return matmul(self, other)

    # -- shape manipulation ------------------------------------------------

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        a = self
        old = a.shape
        return Tensor.from_op(a.data.reshape(shape), (a,), lambda g: (g.reshape(old),))

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        a = self
        if not axes:
            axes = tuple(reversed(range(a.ndim)))
        if sorted(axes) != list(range(a.ndim)):
            raise DimensionError(f"transpose: axes {axes} invalid for ndim {a.ndim}")
        inv = tuple(np.argsort(axes))
        return Tensor.from_op(
            np.ascontiguousarray(a.data.transpose(axes)), (a,), lambda g: (g.transpose(inv),)
        )

    def swapaxes(self, ax1, ax2):
        axes = list(range(self.ndim))
        axes[ax1], axes[ax2] = axes[ax2], axes[ax1]
        return self.transpose(*axes)

    def __getitem__(self, key):
        a = self
        out = a.data[key]
        if np.isscalar(out) or out.ndim == 0:
            out = np.asarray(out)

        def vjp(g):
            full = np.zeros_like(a.data)
            full[key] = g
            return (full,)

        return Tensor.from_op(np.ascontiguousarray(out), (a,), vjp)

    # -- reductions ---------------------------------------------------------

    def sum(self, axis=None, keepdims=False):
        a = self
        _check_axis(axis, a.ndim, "sum")
        out = a.data.sum(axis=axis, keepdims=keepdims)

        def vjp(g):
            g = np.asarray(g)
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            return (np.broadcast_to(g, a.shape).copy(),)

        return Tensor.from_op(np.asarray(out), (a,), vjp)

    def mean(self, axis=None, keepdims=False):
        a = self
        _check_axis(axis, a.ndim, "mean")
        count = a.size if axis is None else np.prod([a.shape[ax] for ax in _axis_tuple(axis, a.ndim)])
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / count)


def _axis_tuple(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        return (axis % ndim,)
    return tuple(ax % ndim for ax in axis)


def _check_axis(axis, ndim, opname):
    if axis is None:
        return
    axes = (axis,) if isinstance(axis, int) else tuple(axis)
    for ax in axes:
        if not -ndim <= ax < ndim:
            raise DimensionError(f"{opname}: axis {ax} out of range for ndim {ndim}")


# -- free functions ------------------------------------------------------------


def _as_tensor(x, dtype=None):
    return x if isinstance(x, Tensor) else Tensor(x, dtype=dtype)


def matmul(a, b):
    """Matrix product with leading batch-dim broadcasting (np.matmul rules)."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise DimensionError(f"matmul: operands must be >= 2-D, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul: inner dimensions disagree: {a.shape} x {b.shape}")

    def vjp(g):
        ga = _unbroadcast(np.matmul(g, b.data.swapaxes(-1, -2)), a.shape)
        gb = _unbroadcast(np.matmul(a.data.swapaxes(-1, -2), g), b.shape)
        return ga, gb

    return Tensor.from_op(np.matmul(a.data, b.data), (a, b), vjp)


def exp(x):
    x = _as_tensor(x)
    out = np.exp(x.data)
    return Tensor.from_op(out, (x,), lambda g: (g * out,))


def log(x):
    x = _as_tensor(x)
    return Tensor.from_op(np.log(x.data), (x,), lambda g: (g / x.data,))


def tanh(x):
    x = _as_tensor(x)
    out = np.tanh(x.data)
    return Tensor.from_op(out, (x,), lambda g: (g * (1.0 - out * out),))


def relu(x):
    x = _as_tensor(x)
    mask = x.data > 0
    return Tensor.from_op(np.where(mask, x.data, 0.0), (x,), lambda g: (g * mask,))


def _sigmoid(z):
    # overflow-free: e^-|z| <= 1 always
    e = np.exp(-np.abs(z))
    denom = 1.0 + e
    return np.where(z >= 0, 1.0 / denom, e / denom)


def sigmoid(x):
    x = _as_tensor(x)
    out = _sigmoid(x.data)
    return Tensor.from_op(out, (x,), lambda g: (g * out * (1.0 - out),))


def softplus(x):
    """ln(1 + e^x); for large x the equivalent x + ln(1 + e^-x) form is
    used so the exponential never overflows."""
    x = _as_tensor(x)
    z = x.data
    out = np.maximum(z, 0.0) + np.log1p(np.exp(-np.abs(z)))
    return Tensor.from_op(out, (x,), lambda g: (g * _sigmoid(z),))


def silu(x):
    x = _as_tensor(x)
    s = _sigmoid(x.data)
    out = x.data * s
    return Tensor.from_op(out, (x,), lambda g: (g * (s + out * (1.0 - s)),))


_GELU_C = float(np.sqrt(2.0 / np.pi))


def _fast_tanh(z):
    # tanh via a single exp; saturates exactly at |z| >= 20 in float64
    zc = np.clip(z, -20.0, 20.0)
    return 1.0 - 2.0 / (np.exp(2.0 * zc) + 1.0)


def gelu(x):
    """Tanh-approximation GELU (the GPT-2 variant)."""
    x = _as_tensor(x)
    z = x.data
    inner = _GELU_C * (z + 0.044715 * z**3)
    t = _fast_tanh(inner)
    out = 0.5 * z * (1.0 + t)

    def vjp(g):
        dinner = _GELU_C * (1.0 + 3 * 0.044715 * z * z)
        return (g * (0.5 * (1.0 + t) + 0.5 * z * (1.0 - t * t) * dinner),)

    return Tensor.from_op(out, (x,), vjp)


def softmax_lastdim(x):
    """Row-stable softmax over the last axis; rows sum to 1."""
    x = _as_tensor(x)
    shifted = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=-1, keepdims=True)

    def vjp(g):
        dot = (g * out).sum(axis=-1, keepdims=True)
        return (out * (g - dot),)

    return Tensor.from_op(out, (x,), vjp)


LAYERNORM_EPS = 1e-5


def layernorm(x, gamma, beta, eps=LAYERNORM_EPS):
    """Normalize the last axis to zero mean / unit variance, then affine."""
    x, gamma, beta = _as_tensor(x), _as_tensor(gamma), _as_tensor(beta)
    D = x.shape[-1]
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = xhat * gamma.data + beta.data

    def vjp(g):
        dgamma = _unbroadcast(g * xhat, gamma.shape)
        dbeta = _unbroadcast(g, beta.shape)
        gx = g * gamma.data
        dx = inv * (gx - gx.mean(axis=-1, keepdims=True) - xhat * (gx * xhat).mean(axis=-1, keepdims=True))
        return dx, dgamma, dbeta

    return Tensor.from_op(out, (x, gamma, beta), vjp)


def concat(tensors, axis=0):
    tensors = [_as_tensor(t) for t in tensors]
    nd = tensors[0].ndim
    _check_axis(axis, nd, "concat")
    sizes = [t.shape[axis] for t in tensors]
    offsets = np.cumsum(sizes)[:-1]

    def vjp(g):
        return tuple(np.ascontiguousarray(p) for p in np.split(g, offsets, axis=axis))

    return Tensor.from_op(np.concatenate([t.data for t in tensors], axis=axis), tensors, vjp)


def stack(tensors, axis=0):
    tensors = [_as_tensor(t) for t in tensors]

    def vjp(g):
        parts = np.split(g, len(tensors), axis=axis)
        return tuple(np.ascontiguousarray(np.squeeze(p, axis=axis)) for p in parts)

    return Tensor.from_op(np.stack([t.data for t in tensors], axis=axis), tensors, vjp)


def where_const(mask, x, fill):
    """x where mask else fill (mask and fill are constants, not differentiated)."""
    x = _as_tensor(x)
    return Tensor.from_op(np.where(mask, x.data, fill), (x,), lambda g: (np.where(mask, g, 0.0),))


# -- backward -------------------------------------------------------------------


def backward(loss):
    """Accumulate dloss/dleaf into .grad of every reachable requires_grad leaf.

    The loss must be scalar. Grads accumulate across calls until zeroed.
    """
    if not isinstance(loss, Tensor):
        raise ContractError("backward() expects a Tensor")
    if loss.size != 1:
        raise ContractError(f"backward() requires a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return  # constant loss: nothing reachable

    # Iterative topological order over the recorded graph.
    order = []
    state = {}  # id -> 0 visiting / 1 done
    stack_ = [(loss, False)]
    while stack_:
        node, processed = stack_.pop()
        if processed:
            state[id(node)] = 1
            order.append(node)
            continue
        if state.get(id(node)) is not None:
            continue
        state[id(node)] = 0
        stack_.append((node, True))
        for p in node._parents:
            if p.requires_grad and state.get(id(p)) is None:
                stack_.append((p, False))

    grads = {id(loss): np.ones_like(loss.data)}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None or node._vjp is None:
            if g is not None and node._vjp is None:
                # leaf: accumulate into .grad
                if node.grad is None:
                    node.grad = g.copy()
                else:
                    node.grad += g
            continue
        parent_grads = node._vjp(g)
        for p, pg in zip(node._parents, parent_grads):
            if pg is None or not p.requires_grad:
                continue
            pg = np.asarray(pg)
            if pg.shape != p.shape:
                pg = pg.reshape(p.shape)
            key = id(p)
            if p._vjp is None:
                if p.grad is None:
                    p.grad = pg.copy()
                else:
                    p.grad += pg
            elif key in grads:
                grads[key] += pg
            else:
                grads[key] = pg.copy()


def param(data, dtype=None):
    """A leaf tensor that participates in gradients."""
    return Tensor(np.asarray(data), requires_grad=True, dtype=dtype)
