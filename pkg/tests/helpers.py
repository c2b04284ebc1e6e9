"""Shared test oracles: finite differences and explicit-tiling broadcasting."""

import numpy as np

from ssmlab.autodiff import Tensor, backward


def finite_diff(fn, tensor, eps=1e-6):
    """Central-difference gradient of scalar fn() w.r.t. every element of
    `tensor` (mutated in place and restored)."""
    flat = tensor.data.reshape(-1)
    g = np.zeros_like(flat)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        fp = float(fn().data)
        flat[i] = orig - eps
        fm = float(fn().data)
        flat[i] = orig
        g[i] = (fp - fm) / (2 * eps)
    return g.reshape(tensor.data.shape)


def rel_err(a, b, floor=1e-6):
    """Worst per-element relative error with an absolute floor."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    denom = np.maximum(floor, np.maximum(np.abs(a), np.abs(b)))
    return float(np.max(np.abs(a - b) / denom))


def rel_err_norm(a, b, floor=1e-12):
    """Tensor-level relative error: worst absolute deviation over the
    largest magnitude present. Robust against finite-difference roundoff
    on near-zero entries."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    scale = max(floor, float(np.max(np.abs(a))), float(np.max(np.abs(b))))
    return float(np.max(np.abs(a - b))) / scale


def check_grads(fn, tensors, rtol=1e-5, eps=1e-6):
    """Assert reverse-mode grads of scalar fn() match central differences
    for every tensor in `tensors`. Returns the worst relative error."""
    for t in tensors:
        t.grad = None
    loss = fn()
    backward(loss)
    worst = 0.0
    for t in tensors:
        fd = finite_diff(fn, t, eps=eps)
        got = t.grad if t.grad is not None else np.zeros_like(t.data)
        err = rel_err_norm(got, fd)
        assert err < rtol, f"gradient mismatch: rel err {err:.3g} >= {rtol} (shape {t.shape})"
        worst = max(worst, err)
    return worst


def tiled_broadcast_oracle(op, a, b):
    """Elementwise op under broadcasting, done by explicit tiling, plus the
    summed-gradient bookkeeping the tape must reproduce."""
    out_shape = np.broadcast_shapes(a.shape, b.shape)
    at = np.broadcast_to(a, out_shape).copy()
    bt = np.broadcast_to(b, out_shape).copy()
    return op(at, bt)
