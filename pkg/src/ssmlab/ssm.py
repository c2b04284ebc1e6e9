"""State-space sequence kernels: time-invariant and input-selective.

Two independent execution routes exist for each family and are held to
numerical agreement by the test suite:

* time-invariant: step-by-step recurrence (``lti_recurrent``) vs. an
  FFT causal convolution with the materialized kernel
  (``lti_convolutional``);
* selective: a fused sequential recurrence (``selective_recurrent``)
  vs. an associative Hillis-Steele scan built from tape ops
  (``selective_scan``), both differentiable end to end.

All sequence arguments are ``Tensor``s shaped (B, L, C); parameter
bundles carry per-channel diagonal state of size N.
"""

from dataclasses import dataclass

import numpy as np

from . import kernels
from .autodiff import Tensor, _as_tensor, concat, exp, matmul, softplus
from .errors import ContractError, DimensionError

# -- discretization --------------------------------------------------------------


def phi1_op(z):
    """(e^z - 1)/z as a tape op, numerically stable through z = 0."""
    z = _as_tensor(z)
    out = kernels.phi1(np.ascontiguousarray(z.data))
    return Tensor.from_op(out, (z,), lambda g: (g * kernels.phi1_grad(np.ascontiguousarray(z.data)),))


def discretize_zoh(a, b_in, delta):
    """Zero-order-hold discretization of a diagonal system.

    a: diagonal of the continuous state matrix (entries broadcast against
    delta); b_in: input weights; delta: positive step sizes. Returns
    (abar, bbar) with abar = exp(delta a) and bbar = phi1(delta a) delta
    b_in, where phi1 handles the removable singularity at a -> 0.
    """
    a, b_in, delta = _as_tensor(a), _as_tensor(b_in), _as_tensor(delta)
    if np.any(delta.data <= 0):
        raise ContractError("discretize_zoh: delta must be positive")
    z = delta * a
    abar = exp(z)
    bbar = phi1_op(z) * (delta * b_in)
    return abar, bbar


def discretize_bilinear(a, b_in, delta):
    """Bilinear (Tustin) discretization of a diagonal system."""
    a, b_in, delta = _as_tensor(a), _as_tensor(b_in), _as_tensor(delta)
    if np.any(delta.data <= 0):
        raise ContractError("discretize_bilinear: delta must be positive")
    half = delta * a * 0.5
    denom = (half * -1.0 + 1.0) ** -1.0
    abar = denom * (half + 1.0)
    bbar = denom * (delta * b_in)
    return abar, bbar


# -- parameter bundles ------------------------------------------------------------


@dataclass
class LtiSsmParams:
    """Per-channel diagonal LTI system: a, b, c are (C, N); delta is (C,)
    or scalar; discretization selects zoh or bilinear."""

    a: Tensor
    b: Tensor
    c: Tensor
    delta: Tensor
    discretization: str = "zoh"

    def discretize(self):
        delta = self.delta if self.delta.ndim == 0 else self.delta.reshape(-1, 1)
        if self.discretization == "zoh":
            return discretize_zoh(self.a, self.b, delta)
        if self.discretization == "bilinear":
            return discretize_bilinear(self.a, self.b, delta)
        raise ContractError(f"unknown discretization {self.discretization!r}")


@dataclass
class SelectiveSsmParams:
    """Input-selective system: the state matrix diagonal ``a`` (C, N) is
    shared across time while b_t, c_t and the step delta_t are affine
    functions of the current input:

        b_t = x_t W1 + b1        (N,)
        c_t = x_t W2 + b2        (N,)
        delta_t = softplus(x_t W3 + b3) > 0   per channel or scalar
    """

    a: Tensor
    w1: Tensor  # (C, N)
    b1: Tensor  # (N,)
    w2: Tensor  # (C, N)
    b2: Tensor  # (N,)
    w3: Tensor  # (C, C) per-channel mode, (C, 1) scalar mode
    b3: Tensor

    def project(self, x):
        """Per-token (bt, ct, delta) from the input sequence x: (B, L, C)."""
        bt = matmul(x, self.w1) + self.b1
        ct = matmul(x, self.w2) + self.b2
        delta = softplus(matmul(x, self.w3) + self.b3)
        if delta.shape[-1] == 1 and x.shape[-1] != 1:
            delta = delta * np.ones((x.shape[-1],), dtype=x.dtype)  # broadcast scalar mode
        return bt, ct, delta


# -- scan monoid -------------------------------------------------------------------


def scan_combine(first, second):
    """Associative combine for linear-recurrence prefix elements.

    Elements are (multiplier, addend) pairs; combining (a1, b1) then
    (a2, b2) yields (a2*a1, a2*b1 + b2).
    """
    a1, b1 = first
    a2, b2 = second
    return a2 * a1, a2 * b1 + b2


def associative_scan(a, b, axis):
    """Inclusive prefix scan of h_t = a_t h_{t-1} + b_t along ``axis``.

    Hillis-Steele recursive doubling over the (multiplier, addend)
    monoid, built entirely from tape ops so it is differentiable. Returns
    the addend component, i.e. the sequence of states h_t.
    """
    a, b = _as_tensor(a), _as_tensor(b)
    L = a.shape[axis]
    offset = 1
    idx_lo = [slice(None)] * a.ndim
    idx_hi = [slice(None)] * a.ndim
    while offset < L:
        idx_hi[axis] = slice(offset, None)
        idx_lo[axis] = slice(None, L - offset)
        keep = [slice(None)] * a.ndim
        keep[axis] = slice(None, offset)
        a_hi, b_hi = a[tuple(idx_hi)], b[tuple(idx_hi)]
        a_lo, b_lo = a[tuple(idx_lo)], b[tuple(idx_lo)]
        a_new, b_new = scan_combine((a_lo, b_lo), (a_hi, b_hi))
        a = concat([a[tuple(keep)], a_new], axis=axis)
        b = concat([b[tuple(keep)], b_new], axis=axis)
        offset *= 2
    return b


# -- time-invariant path ------------------------------------------------------------


def _check_seq(params_c, x):
    if x.ndim != 3:
        raise DimensionError(f"expected (B, L, C) sequence, got shape {x.shape}")
    if x.shape[-1] != params_c.shape[0]:
        raise DimensionError(
            f"sequence channels {x.shape[-1]} != parameter channels {params_c.shape[0]}"
        )


def lti_recurrent(params, x):
    """y_t = C h_t with h_t = abar h_{t-1} + bbar x_t, h_0 = 0.

    O(L) sequential steps through the fused kernel; O(1) state beyond the
    activations saved for the backward pass.
    """
    x = _as_tensor(x)
    _check_seq(params.c, x)
    abar, bbar = params.discretize()
    return _lti_scan_op(abar, bbar, params.c, x)


def _lti_scan_op(abar, bbar, cmat, x):
    ad, bd, cd, xd = (np.ascontiguousarray(t.data) for t in (abar, bbar, cmat, x))
    y, h = kernels.lti_scan_fwd(ad, bd, cd, xd)

    def vjp(g):
        return kernels.lti_scan_bwd(ad, bd, cd, xd, h, np.ascontiguousarray(g))

    return Tensor.from_op(y, (abar, bbar, cmat, x), vjp)


def lti_kernel(params, L):
    """Materialized convolution kernel K_i = C abar^i bbar for i < L, shape (C, L)."""
    if L < 1:
        raise ContractError("kernel length must be >= 1")
    abar, bbar = params.discretize()
    ad, bd, cd = (np.ascontiguousarray(t.data) for t in (abar, bbar, params.c))
    K = kernels.lti_kernel_fwd(ad, bd, cd, L)

    def vjp(g):
        return kernels.lti_kernel_bwd(ad, bd, cd, L, np.ascontiguousarray(g))

    return Tensor.from_op(K, (abar, bbar, params.c), vjp)


def fft_causal_conv(k, x):
    """Causal convolution y[t] = sum_{i<=t} k[i] x[t-i] per channel via FFT.

    k: (C, L) kernel Tensor; x: (B, L, C). The transform is zero-padded
    to at least 2L so no circular wrap-around can occur.
    """
    k, x = _as_tensor(k), _as_tensor(x)
    B, L, C = x.shape
    if k.shape != (C, L):
        raise DimensionError(f"kernel shape {k.shape} does not match sequence ({C}, {L})")
    nfft = 1 << int(np.ceil(np.log2(max(2 * L, 2))))
    kf = np.fft.rfft(k.data, n=nfft, axis=-1)  # (C, F)
    xf = np.fft.rfft(x.data, n=nfft, axis=1)  # (B, F, C)
    yf = xf * kf.T[None, :, :]
    y = np.fft.irfft(yf, n=nfft, axis=1)[:, :L, :].astype(x.dtype, copy=False)

    def vjp(g):
        gf = np.fft.rfft(g, n=nfft, axis=1)
        # cross-correlations: dk[i] = sum_t g[t] x[t-i]; dx[s] = sum_j g[s+j] k[j]
        dk = np.fft.irfft(gf * np.conj(xf), n=nfft, axis=1)[:, :L, :]
        dx = np.fft.irfft(gf * np.conj(kf.T[None, :, :]), n=nfft, axis=1)[:, :L, :]
        return (
            np.ascontiguousarray(dk.transpose(2, 1, 0).sum(axis=-1)).astype(k.dtype, copy=False),
            dx.astype(x.dtype, copy=False),
        )

    return Tensor.from_op(np.ascontiguousarray(y), (k, x), vjp)


def lti_convolutional(params, x):
    """Same map as lti_recurrent, executed as an FFT causal convolution."""
    x = _as_tensor(x)
    _check_seq(params.c, x)
    K = lti_kernel(params, x.shape[1])
    return fft_causal_conv(K, x)


# -- selective path -----------------------------------------------------------------


def selective_recurrent(params, x):
    """Input-selective recurrence, evaluated step by step (fused kernel).

    Per step: project (b_t, c_t, delta_t) from x_t, discretize with ZOH,
    update h_t = abar_t h_{t-1} + bbar_t x_t from h_0 = 0, output
    y_t = c_t . h_t.
    """
    x = _as_tensor(x)
    _check_seq(params.a, x)
    bt, ct, delta = params.project(x)
    return selective_scan_fused(params.a, delta, bt, ct, x)


def selective_scan_fused(a, delta, bt, ct, x):
    """Fused sequential evaluation of the selective recurrence.

    The exp over delta*a is evaluated vectorized in numpy and handed to
    the kernel; the hand-derived backward reuses the saved exp and state
    trajectory so the hot path stays single-pass.
    """
    a, delta, bt, ct, x = (_as_tensor(t) for t in (a, delta, bt, ct, x))
    ad = np.ascontiguousarray(a.data)
    dd = np.ascontiguousarray(delta.data)
    btd = np.ascontiguousarray(bt.data)
    ctd = np.ascontiguousarray(ct.data)
    xd = np.ascontiguousarray(x.data)
    abar = np.multiply(dd[..., None], ad)
    np.exp(abar, out=abar)
    y, h = kernels.selective_scan_fwd(ad, dd, btd, ctd, xd, abar)

    def vjp(g):
        return kernels.selective_scan_bwd(ad, dd, btd, ctd, xd, abar, h, np.ascontiguousarray(g))

    return Tensor.from_op(y, (a, delta, bt, ct, x), vjp)


def selective_scan(params, x):
    """Same map as selective_recurrent, via the associative parallel scan.

    Discretization is expressed with tape ops, the recurrence with
    Hillis-Steele recursive doubling over the scan monoid, so gradients
    flow through a code path independent of the fused kernels.
    """
    x = _as_tensor(x)
    _check_seq(params.a, x)
    bt, ct, delta = params.project(x)
    # (B, L, C, N) scan elements
    B, L, C = x.shape
    N = params.a.shape[1]
    dN = delta.reshape(B, L, C, 1)
    z = dN * params.a
    abar = exp(z)
    bu = phi1_op(z) * dN * bt.reshape(B, L, 1, N) * x.reshape(B, L, C, 1)
    h = associative_scan(abar, bu, axis=1)
    y = (h * ct.reshape(B, L, 1, N)).sum(axis=3)
    return y
