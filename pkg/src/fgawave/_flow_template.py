"""Template for the compiled atom propagator.

Not imported directly: ``flow`` prepends the generated ``speed_into`` and the
constants D, D2, M, USE_LOG, then loads the result from a cache directory so
numba can keep the machine code between runs.
"""

import math

import numpy as np
from numba import njit, prange

@njit(inline="always", cache=True)
def tr_inv_times(Z, W):
    if D == 1:
        return W[0, 0] / Z[0, 0]
    det = Z[0, 0] * Z[1, 1] - Z[0, 1] * Z[1, 0]
    return (Z[1, 1] * W[0, 0] - Z[0, 1] * W[1, 0] - Z[1, 0] * W[0, 1] + Z[0, 0] * W[1, 1]) / det

@njit(inline="always", cache=True)
def det_abs(Z):
    if D == 1:
        return abs(Z[0, 0])
    return abs(Z[0, 0] * Z[1, 1] - Z[0, 1] * Z[1, 0])

@njit(inline="always", cache=True)
def z_from(v, off, Z):
    # Z = (dqQ - i dpQ) + i (dqP - i dpP), F stored row major at v[off:]
    for j in range(D):
        for k in range(D):
            re = v[off + j * D2 + k] + v[off + (D + j) * D2 + D + k]
            im = v[off + j * D2 + D + k] - v[off + (D + j) * D2 + k]
            Z[j, k] = complex(re, im)

@njit(inline="always", cache=True)
def rhs(y, s, out, g, H, G, Z, W, K):
    c = speed_into(y, g, H)
    pn2 = 0.0
    for i in range(D):
        pn2 += y[D + i] * y[D + i]
    pn = math.sqrt(pn2)
    ug = 0.0
    for i in range(D):
        out[i] = s * c * y[D + i] / pn
        out[D + i] = -s * g[i] * pn
        ug += y[D + i] * g[i] / pn
    for l in range(D):
        for k in range(D):
            delta = 1.0 if l == k else 0.0
            G[l, k] = s * g[l] * y[D + k] / pn
            G[D + l, k] = s * c * (delta / pn - y[D + l] * y[D + k] / (pn * pn2))
            G[l, D + k] = -s * H[l, k] * pn
            G[D + l, D + k] = -s * y[D + l] * g[k] / pn
    base = D2
    for r in range(D2):
        for k in range(D2):
            acc = 0.0
            for l in range(D2):
                acc += y[base + r * D2 + l] * G[l, k]
            out[base + r * D2 + k] = acc
    z_from(y, base, Z)
    a = complex(y[M - 2], y[M - 1])
    if USE_LOG:
        z_from(out, base, W)
        da = s * a * ug + 0.5 * a * tr_inv_times(Z, W)
    else:
        for l in range(D):
            for k in range(D):
                delta = 1.0 if l == k else 0.0
                K[l, k] = (2.0 * y[D + l] / pn * g[k]
                           - 1j * c / pn * (y[D + l] * y[D + k] / pn2 - delta)
                           - 1j * pn * H[l, k])
        # W = dzQ @ K with dzQ = dqQ - i dpQ
        for j in range(D):
            for k in range(D):
                acc = 0j
                for l in range(D):
                    acc += complex(y[base + j * D2 + l], -y[base + (D + j) * D2 + l]) * K[l, k]
                W[j, k] = acc
        first = ug - (D - 1) * 1j * c / pn
        da = 0.5 * s * a * first + 0.5 * s * a * tr_inv_times(Z, W)
    out[M - 2] = da.real
    out[M - 1] = da.imag

@njit(inline="always", cache=True)
def check(y, p_min, Z):
    for i in range(M):
        if not np.isfinite(y[i]):
            return 2
    pn2 = 0.0
    for i in range(D):
        pn2 += y[D + i] ** 2
    if math.sqrt(pn2) < p_min:
        return 1
    z_from(y, D2, Z)
    if det_abs(Z) < 1e-8:
        return 3
    return 0

@njit(parallel=True, cache=True)
def propagate_kernel(state, sign, status, dt, nsteps, last_dt, p_min):
    n = state.shape[0]
    for i in prange(n):
        if status[i] != 0:
            continue
        y = state[i].copy()
        k1 = np.empty(M)
        k2 = np.empty(M)
        k3 = np.empty(M)
        k4 = np.empty(M)
        tmp = np.empty(M)
        g = np.empty(D)
        H = np.empty((D, D))
        G = np.empty((D2, D2))
        Z = np.empty((D, D), dtype=np.complex128)
        W = np.empty((D, D), dtype=np.complex128)
        K = np.empty((D, D), dtype=np.complex128)
        s = sign[i]
        for step in range(nsteps):
            h = dt if step < nsteps - 1 else last_dt
            rhs(y, s, k1, g, H, G, Z, W, K)
            for j in range(M):
                tmp[j] = y[j] + 0.5 * h * k1[j]
            rhs(tmp, s, k2, g, H, G, Z, W, K)
            for j in range(M):
                tmp[j] = y[j] + 0.5 * h * k2[j]
            rhs(tmp, s, k3, g, H, G, Z, W, K)
            for j in range(M):
                tmp[j] = y[j] + h * k3[j]
            rhs(tmp, s, k4, g, H, G, Z, W, K)
            for j in range(M):
                tmp[j] = y[j] + h / 6.0 * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j])
            code = check(tmp, p_min, Z)
            if code != 0:
                status[i] = code
                break
            for j in range(M):
                y[j] = tmp[j]
        state[i, :] = y
