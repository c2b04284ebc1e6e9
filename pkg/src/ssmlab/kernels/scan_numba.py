"""Numba-jitted twins of the kernels in ``scan_numpy``.

Loop bodies stream the (B, L, C, N) tensors in memory order; the costly
exp() over delta*a is done by the caller in numpy (SIMD) and passed in as
``abar``, so these loops stay transcendental-free on the hot path except
for the removable-singularity branches.
"""

import numpy as np
from numba import njit

PHI_EPS = 1e-6
PHI_GRAD_EPS = 1e-3


@njit(cache=True, inline="always")
def _phi1_scalar(z, e):
    # e = exp(z), already computed
    if z > PHI_EPS or z < -PHI_EPS:
        return (e - 1.0) / z
    return 1.0 + z * 0.5 + z * z / 6.0


@njit(cache=True, inline="always")
def _phi1_grad_scalar(z, e):
    if z > PHI_GRAD_EPS or z < -PHI_GRAD_EPS:
        return (e * (z - 1.0) + 1.0) / (z * z)
    return 0.5 + z / 3.0 + z * z * 0.125 + z * z * z / 30.0


@njit(cache=True)
def phi1(z):
    out = np.empty_like(z)
    f = z.reshape(-1)
    o = out.reshape(-1)
    for i in range(f.size):
        zi = f[i]
        if zi > PHI_EPS or zi < -PHI_EPS:
            o[i] = np.expm1(zi) / zi
        else:
            o[i] = 1.0 + zi * 0.5 + zi * zi / 6.0
    return out


@njit(cache=True)
def phi1_grad(z):
    out = np.empty_like(z)
    f = z.reshape(-1)
    o = out.reshape(-1)
    for i in range(f.size):
        zi = f[i]
        if zi > PHI_GRAD_EPS or zi < -PHI_GRAD_EPS:
            o[i] = (np.expm1(zi) * (zi - 1.0) + zi) / (zi * zi)
        else:
            o[i] = 0.5 + zi / 3.0 + zi * zi * 0.125 + zi * zi * zi / 30.0
    return out


@njit(cache=True)
def selective_scan_fwd(a, delta, bt, ct, x, abar):
    B, L, C = x.shape
    N = a.shape[1]
    y = np.empty((B, L, C), dtype=x.dtype)
    h = np.empty((B, L, C, N), dtype=x.dtype)
    for b in range(B):
        for t in range(L):
            for c in range(C):
                d = delta[b, t, c]
                xv = x[b, t, c]
                acc = 0.0
                if t == 0:
                    for n in range(N):
                        z = d * a[c, n]
                        e = abar[b, t, c, n]
                        hv = _phi1_scalar(z, e) * d * bt[b, t, n] * xv
                        h[b, t, c, n] = hv
                        acc += ct[b, t, n] * hv
                else:
                    for n in range(N):
                        z = d * a[c, n]
                        e = abar[b, t, c, n]
                        hv = e * h[b, t - 1, c, n] + _phi1_scalar(z, e) * d * bt[b, t, n] * xv
                        h[b, t, c, n] = hv
                        acc += ct[b, t, n] * hv
                y[b, t, c] = acc
    return y, h


@njit(cache=True)
def selective_scan_bwd(a, delta, bt, ct, x, abar, h, gy):
    B, L, C = x.shape
    N = a.shape[1]
    da = np.zeros_like(a)
    ddelta = np.empty_like(delta)
    dbt = np.zeros_like(bt)
    dct = np.zeros_like(ct)
    dx = np.empty_like(x)
    for b in range(B):
        carry = np.zeros((C, N), dtype=x.dtype)
        for t in range(L - 1, -1, -1):
            for c in range(C):
                g = gy[b, t, c]
                d = delta[b, t, c]
                xv = x[b, t, c]
                dd = 0.0
                dxv = 0.0
                for n in range(N):
                    gh = g * ct[b, t, n] + carry[c, n]
                    e = abar[b, t, c, n]
                    z = d * a[c, n]
                    p = _phi1_scalar(z, e)
                    pp = _phi1_grad_scalar(z, e)
                    hm1 = h[b, t - 1, c, n] if t > 0 else 0.0
                    btn = bt[b, t, n]
                    dct[b, t, n] += g * h[b, t, c, n]
                    da[c, n] += gh * d * (e * hm1 + pp * d * btn * xv)
                    dd += gh * (a[c, n] * e * hm1 + (a[c, n] * pp * d + p) * btn * xv)
                    gpd = gh * p * d
                    dbt[b, t, n] += gpd * xv
                    dxv += gpd * btn
                    carry[c, n] = e * gh
                ddelta[b, t, c] = dd
                dx[b, t, c] = dxv
    return da, ddelta, dbt, dct, dx


@njit(cache=True)
def lti_scan_fwd(abar, bbar, cmat, x):
    B, L, C = x.shape
    N = abar.shape[1]
    y = np.empty((B, L, C), dtype=x.dtype)
    h = np.empty((B, L, C, N), dtype=x.dtype)
    for b in range(B):
        for t in range(L):
            for c in range(C):
                xv = x[b, t, c]
                acc = 0.0
                if t == 0:
                    for n in range(N):
                        hv = bbar[c, n] * xv
                        h[b, t, c, n] = hv
                        acc += cmat[c, n] * hv
                else:
                    for n in range(N):
                        hv = abar[c, n] * h[b, t - 1, c, n] + bbar[c, n] * xv
                        h[b, t, c, n] = hv
                        acc += cmat[c, n] * hv
                y[b, t, c] = acc
    return y, h


@njit(cache=True)
def lti_scan_bwd(abar, bbar, cmat, x, h, gy):
    B, L, C = x.shape
    N = abar.shape[1]
    dabar = np.zeros_like(abar)
    dbbar = np.zeros_like(bbar)
    dc = np.zeros_like(cmat)
    dx = np.empty_like(x)
    for b in range(B):
        carry = np.zeros((C, N), dtype=x.dtype)
        for t in range(L - 1, -1, -1):
            for c in range(C):
                g = gy[b, t, c]
                xv = x[b, t, c]
                dxv = 0.0
                for n in range(N):
                    gh = g * cmat[c, n] + carry[c, n]
                    hm1 = h[b, t - 1, c, n] if t > 0 else 0.0
                    dc[c, n] += g * h[b, t, c, n]
                    dabar[c, n] += gh * hm1
                    dbbar[c, n] += gh * xv
                    dxv += gh * bbar[c, n]
                    carry[c, n] = abar[c, n] * gh
                dx[b, t, c] = dxv
    return dabar, dbbar, dc, dx


@njit(cache=True)
def lti_kernel_fwd(abar, bbar, cmat, L):
    C, N = abar.shape
    K = np.empty((C, L), dtype=abar.dtype)
    for c in range(C):
        for n in range(N):
            p = 1.0
            cb = cmat[c, n] * bbar[c, n]
            for i in range(L):
                if n == 0:
                    K[c, i] = cb * p
                else:
                    K[c, i] += cb * p
                p *= abar[c, n]
    return K


@njit(cache=True)
def lti_kernel_bwd(abar, bbar, cmat, L, gk):
    C, N = abar.shape
    dabar = np.zeros_like(abar)
    dbbar = np.zeros_like(bbar)
    dc = np.zeros_like(cmat)
    for c in range(C):
        for n in range(N):
            p = 1.0
            pm1 = 0.0
            av = abar[c, n]
            cb = cmat[c, n] * bbar[c, n]
            for i in range(L):
                g = gk[c, i]
                dc[c, n] += g * p * bbar[c, n]
                dbbar[c, n] += g * p * cmat[c, n]
                if i > 0:
                    dabar[c, n] += g * cb * i * pm1
                pm1 = p
                p *= av
    return dabar, dbbar, dc


@njit(cache=True)
def dwconv_fwd(w, bias, x):
    B, L, C = x.shape
    W = w.shape[1]
    y = np.empty_like(x)
    for b in range(B):
        for t in range(L):
            jmax = min(W, t + 1)
            for c in range(C):
                acc = bias[c]
                for j in range(jmax):
                    acc += w[c, j] * x[b, t - j, c]
                y[b, t, c] = acc
    return y


@njit(cache=True)
def dwconv_bwd(w, x, gy):
    B, L, C = x.shape
    W = w.shape[1]
    dw = np.zeros_like(w)
    dbias = np.zeros_like(w[:, 0])
    dx = np.zeros_like(x)
    for b in range(B):
        for t in range(L):
            jmax = min(W, t + 1)
            for c in range(C):
                g = gy[b, t, c]
                dbias[c] += g
                for j in range(jmax):
                    dw[c, j] += g * x[b, t - j, c]
                    dx[b, t - j, c] += g * w[c, j]
    return dw, dbias, dx
