"""Pure-numpy implementations of the hot recurrence kernels.

These are the fallback twins of the numba kernels in ``scan_numba``; both
modules expose identical signatures and must produce identical results.
Array layouts: batch-major sequences ``x[b, t, c]`` with per-channel state
``h[b, t, c, n]``.
"""

import numpy as np

# Series switch point for (e^z - 1)/z; below this the direct quotient
# catastrophically cancels. The derivative cancels up to ~z^2, so its
# series window is wider.
PHI_EPS = 1e-6
PHI_GRAD_EPS = 1e-3


def phi1(z):
    """(e^z - 1)/z with a series fallback near z = 0."""
    z = np.asarray(z)
    small = np.abs(z) < PHI_EPS
    safe = np.where(small, 1.0, z)
    return np.where(small, 1.0 + z / 2.0 + z * z / 6.0, np.expm1(z) / safe)


def phi1_grad(z):
    """d/dz of (e^z - 1)/z, series 1/2 + z/3 + z^2/8 + z^3/30 near z = 0."""
    z = np.asarray(z)
    small = np.abs(z) < PHI_GRAD_EPS
    safe = np.where(small, 1.0, z)
    direct = (np.expm1(z) * (z - 1.0) + z) / (safe * safe)
    return np.where(small, 0.5 + z / 3.0 + z * z / 8.0 + z * z * z / 30.0, direct)


def _phi_from_abar(z, abar):
    """phi1 evaluated from the already-available e^z (matches the fused
    scalar kernels bit for bit)."""
    small = np.abs(z) < PHI_EPS
    safe = np.where(small, 1.0, z)
    return np.where(small, 1.0 + z / 2.0 + z * z / 6.0, (abar - 1.0) / safe)


def _phi_grad_from_abar(z, abar):
    small = np.abs(z) < PHI_GRAD_EPS
    safe = np.where(small, 1.0, z)
    direct = (abar * (z - 1.0) + 1.0) / (safe * safe)
    return np.where(small, 0.5 + z / 3.0 + z * z / 8.0 + z * z * z / 30.0, direct)


def selective_scan_fwd(a, delta, bt, ct, x, abar):
    """Input-dependent diagonal recurrence, sequential over time.

    a: (C, N) diagonal state matrix; delta: (B, L, C) positive steps;
    bt, ct: (B, L, N); x: (B, L, C); abar: exp(delta * a), (B, L, C, N),
    precomputed by the caller. Returns (y, h) with y[b,t,c] = sum_n
    ct[b,t,n] * h[b,t,c,n].
    """
    B, L, C = x.shape
    N = a.shape[1]
    z = delta[..., None] * a
    p = _phi_from_abar(z, abar)
    bu = p * (delta * x)[..., None] * bt[:, :, None, :]
    h = np.empty((B, L, C, N), dtype=x.dtype)
    y = np.empty((B, L, C), dtype=x.dtype)
    hv = np.zeros((B, C, N), dtype=x.dtype)
    for t in range(L):
        hv = abar[:, t] * hv + bu[:, t]
        h[:, t] = hv
        y[:, t] = np.einsum("bcn,bn->bc", hv, ct[:, t])
    return y, h


def selective_scan_bwd(a, delta, bt, ct, x, abar, h, gy):
    """Reverse-mode pass for selective_scan_fwd.

    Returns (da, ddelta, dbt, dct, dx). The adjoint of the state obeys the
    same recurrence run backwards: gh_t = gy_t * ct + abar_{t+1} * gh_{t+1}.
    """
    B, L, C = x.shape
    N = a.shape[1]
    z = delta[..., None] * a
    p = _phi_from_abar(z, abar)
    pp = _phi_grad_from_abar(z, abar)
    da = np.zeros_like(a)
    ddelta = np.empty_like(delta)
    dbt = np.empty_like(bt)
    dct = np.empty_like(ct)
    dx = np.empty_like(x)
    carry = np.zeros((B, C, N), dtype=x.dtype)
    for t in range(L - 1, -1, -1):
        gh = gy[:, t, :, None] * ct[:, t, None, :] + carry
        hm1 = h[:, t - 1] if t > 0 else np.zeros((B, C, N), dtype=x.dtype)
        dt = delta[:, t, :, None]
        btx = bt[:, t, None, :] * x[:, t, :, None]
        dct[:, t] = np.einsum("bcn,bc->bn", h[:, t], gy[:, t])
        da += np.sum(gh * dt * (abar[:, t] * hm1 + pp[:, t] * dt * btx), axis=0)
        ddelta[:, t] = np.einsum(
            "bcn,bcn->bc",
            gh,
            a * abar[:, t] * hm1 + (a * pp[:, t] * dt + p[:, t]) * btx,
        )
        gpd = gh * p[:, t] * dt
        dbt[:, t] = np.einsum("bcn,bc->bn", gpd, x[:, t])
        dx[:, t] = np.einsum("bcn,bn->bc", gpd, bt[:, t])
        carry = abar[:, t] * gh
    return da, ddelta, dbt, dct, dx


def lti_scan_fwd(abar, bbar, cmat, x):
    """Time-invariant diagonal recurrence.

    abar, bbar, cmat: (C, N) discretized per-channel parameters;
    x: (B, L, C). Returns (y, h).
    """
    B, L, C = x.shape
    N = abar.shape[1]
    h = np.empty((B, L, C, N), dtype=x.dtype)
    y = np.empty((B, L, C), dtype=x.dtype)
    hv = np.zeros((B, C, N), dtype=x.dtype)
    for t in range(L):
        hv = abar * hv + bbar * x[:, t, :, None]
        h[:, t] = hv
        y[:, t] = np.einsum("bcn,cn->bc", hv, cmat)
    return y, h


def lti_scan_bwd(abar, bbar, cmat, x, h, gy):
    """Reverse-mode pass for lti_scan_fwd; returns (dabar, dbbar, dc, dx)."""
    B, L, C = x.shape
    N = abar.shape[1]
    dabar = np.zeros_like(abar)
    dbbar = np.zeros_like(bbar)
    dc = np.zeros_like(cmat)
    dx = np.empty_like(x)
    carry = np.zeros((B, C, N), dtype=x.dtype)
    for t in range(L - 1, -1, -1):
        gh = gy[:, t, :, None] * cmat + carry
        hm1 = h[:, t - 1] if t > 0 else np.zeros((B, C, N), dtype=x.dtype)
        dc += np.einsum("bcn,bc->cn", h[:, t], gy[:, t])
        dabar += np.einsum("bcn,bcn->cn", gh, hm1)
        dbbar += np.einsum("bcn,bc->cn", gh, x[:, t])
        dx[:, t] = np.einsum("bcn,cn->bc", gh, bbar)
        carry = abar * gh
    return dabar, dbbar, dc, dx


def lti_kernel_fwd(abar, bbar, cmat, L):
    """Convolution kernel K[c, i] = sum_n cmat * abar^i * bbar, i < L."""
    C, N = abar.shape
    K = np.empty((C, L), dtype=abar.dtype)
    p = np.ones_like(abar)
    cb = cmat * bbar
    for i in range(L):
        K[:, i] = np.sum(cb * p, axis=1)
        p = p * abar
    return K


def lti_kernel_bwd(abar, bbar, cmat, L, gk):
    """Reverse-mode pass for lti_kernel_fwd; returns (dabar, dbbar, dc)."""
    dabar = np.zeros_like(abar)
    dbbar = np.zeros_like(bbar)
    dc = np.zeros_like(cmat)
    p = np.ones_like(abar)      # abar^i
    pm1 = np.zeros_like(abar)   # abar^(i-1), zero contribution at i = 0
    cb = cmat * bbar
    for i in range(L):
        g = gk[:, i][:, None]
        dc += g * p * bbar
        dbbar += g * p * cmat
        if i > 0:
            dabar += g * cb * i * pm1
        pm1 = p
        p = p * abar
    return dabar, dbbar, dc


def dwconv_fwd(w, bias, x):
    """Depthwise causal convolution: y[b,t,c] = bias[c] + sum_j w[c,j] x[b,t-j,c]."""
    B, L, C = x.shape
    W = w.shape[1]
    y = np.broadcast_to(bias, (B, L, C)).copy()
    for j in range(W):
        if j == 0:
            y += w[:, 0] * x
        elif j < L:
            y[:, j:] += w[:, j] * x[:, :-j]
    return y


def dwconv_bwd(w, x, gy):
    """Reverse-mode pass for dwconv_fwd; returns (dw, dbias, dx)."""
    B, L, C = x.shape
    W = w.shape[1]
    dw = np.zeros_like(w)
    dbias = gy.sum(axis=(0, 1))
    dx = np.zeros_like(x)
    for j in range(W):
        if j == 0:
            dw[:, 0] = np.einsum("blc,blc->c", gy, x)
            dx += w[:, 0] * gy
        elif j < L:
            dw[:, j] = np.einsum("blc,blc->c", gy[:, j:], x[:, :-j])
            dx[:, :-j] += w[:, j] * gy[:, j:]
    return dw, dbias, dx
