"""Hot loops: cutoff Gaussian sums and the leapfrog wave stepper.

Every public function dispatches to a numba kernel or to a pure numpy
implementation (see :mod:`fgawave._accel`).  Spatial data is always handled
as two-dimensional; one-dimensional problems carry a singleton second axis
with zero coordinates, which leaves every Gaussian factor equal to one.
"""

from __future__ import annotations

import math

import numpy as np

from . import _accel
from ._accel import njit, prange


def _pad2(a, fill=0.0):
    a = np.asarray(a, dtype=float)
    if a.shape[-1] == 2:
        return np.ascontiguousarray(a)
    pad = np.full(a.shape[:-1] + (1,), fill)
    return np.ascontiguousarray(np.concatenate([a, pad], axis=-1))


def _axis_range(center, theta, start, step, n):
    lo = math.ceil((center - theta - start) / step - 1e-9)
    hi = math.floor((center + theta - start) / step + 1e-9)
    return max(lo, 0), min(hi, n - 1)


# ---------------------------------------------------------------------------
# windowed transform: psi(q, p) = sum_y u(y) exp((-i p.(y-q) - |y-q|^2/2) / eps) r_theta dy

@njit(parallel=True, cache=True)
def _window_numba(u, y0, dy, q, p, eps, theta, weight):
    n = q.shape[0]
    N0, N1 = u.shape
    out = np.zeros(n, dtype=np.complex128)
    th2 = theta * theta
    for i in prange(n):
        lo0 = max(int(math.ceil((q[i, 0] - theta - y0[0]) / dy[0] - 1e-9)), 0)
        hi0 = min(int(math.floor((q[i, 0] + theta - y0[0]) / dy[0] + 1e-9)), N0 - 1)
        lo1 = max(int(math.ceil((q[i, 1] - theta - y0[1]) / dy[1] - 1e-9)), 0)
        hi1 = min(int(math.floor((q[i, 1] + theta - y0[1]) / dy[1] + 1e-9)), N1 - 1)
        if hi0 < lo0 or hi1 < lo1:
            continue
        f1 = np.empty(hi1 - lo1 + 1, dtype=np.complex128)
        r1 = np.empty(hi1 - lo1 + 1)
        for m1 in range(lo1, hi1 + 1):
            z = y0[1] + m1 * dy[1] - q[i, 1]
            r1[m1 - lo1] = z * z
            f1[m1 - lo1] = np.exp(complex(-0.5 * z * z / eps, -p[i, 1] * z / eps))
        acc = 0j
        for m0 in range(lo0, hi0 + 1):
            z0 = y0[0] + m0 * dy[0] - q[i, 0]
            r0 = z0 * z0
            f0 = np.exp(complex(-0.5 * r0 / eps, -p[i, 0] * z0 / eps))
            for m1 in range(lo1, hi1 + 1):
                if r0 + r1[m1 - lo1] <= th2:
                    acc += u[m0, m1] * (f0 * f1[m1 - lo1])
        out[i] = acc * weight
    return out


def _window_numpy(u, y0, dy, q, p, eps, theta, weight):
    N0, N1 = u.shape
    out = np.zeros(len(q), dtype=complex)
    th2 = theta * theta
    # labels sharing a q reuse the same window
    keys, inverse = np.unique(q, axis=0, return_inverse=True)
    inverse = np.asarray(inverse).reshape(-1)
    for k, qk in enumerate(keys):
        idx = np.flatnonzero(inverse == k)
        lo0, hi0 = _axis_range(qk[0], theta, y0[0], dy[0], N0)
        lo1, hi1 = _axis_range(qk[1], theta, y0[1], dy[1], N1)
        if hi0 < lo0 or hi1 < lo1:
            continue
        z0 = y0[0] + np.arange(lo0, hi0 + 1) * dy[0] - qk[0]
        z1 = y0[1] + np.arange(lo1, hi1 + 1) * dy[1] - qk[1]
        inside = (z0[:, None] ** 2 + z1[None, :] ** 2) <= th2
        Z0 = np.broadcast_to(z0[:, None], inside.shape)[inside]
        Z1 = np.broadcast_to(z1[None, :], inside.shape)[inside]
        vals = u[lo0:hi0 + 1, lo1:hi1 + 1][inside] * np.exp(-0.5 * (Z0 ** 2 + Z1 ** 2) / eps)
        pk = p[idx]
        phase = np.exp(-1j * (pk[:, :1] * Z0[None, :] + pk[:, 1:2] * Z1[None, :]) / eps)
        out[idx] = (phase @ vals) * weight
    return out


def window_sum(u, y0, dy, q, p, eps: float, theta: float, backend: str | None = None) -> np.ndarray:
    """Windowed transform of grid samples ``u`` for each label (q, p).

    ``u`` has shape ``Ny`` (d = 1) or ``(Ny1, Ny2)``; ``q``, ``p`` are (n, d).
    The product of the mesh sizes is included.
    """
    u = np.asarray(u, dtype=complex)
    if u.ndim == 1:
        u = u[:, None]
    y0 = _pad2(np.atleast_1d(y0)[None, :])[0]
    dy_real = np.atleast_1d(np.asarray(dy, dtype=float))
    dy = _pad2(dy_real[None, :], 1.0)[0]
    q = _pad2(q)
    p = _pad2(p)
    weight = float(np.prod(dy_real))
    if (backend or ("numba" if _accel.use_numba() else "numpy")) == "numba":
        return _window_numba(np.ascontiguousarray(u), y0, dy, q, p, float(eps), float(theta), weight)
    return _window_numpy(u, y0, dy, q, p, float(eps), float(theta), weight)


# ---------------------------------------------------------------------------
# reconstruction: u(x) = sum_k coef_k exp((i P_k.(x-Q_k) - |x-Q_k|^2/2) / eps) r_theta

@njit(parallel=True, cache=True)
def _field_numba(coef, Q, P, x0, dx, N0, N1, eps, theta, nchunks):
    out = np.zeros((N0, N1), dtype=np.complex128)
    th2 = theta * theta
    n = Q.shape[0]
    chunk = (N0 + nchunks - 1) // nchunks
    for ch in prange(nchunks):
        r_lo = ch * chunk
        r_hi = min(N0, r_lo + chunk) - 1
        for k in range(n):
            lo0 = max(int(math.ceil((Q[k, 0] - theta - x0[0]) / dx[0] - 1e-9)), r_lo)
            hi0 = min(int(math.floor((Q[k, 0] + theta - x0[0]) / dx[0] + 1e-9)), r_hi)
            lo1 = max(int(math.ceil((Q[k, 1] - theta - x0[1]) / dx[1] - 1e-9)), 0)
            hi1 = min(int(math.floor((Q[k, 1] + theta - x0[1]) / dx[1] + 1e-9)), N1 - 1)
            if hi0 < lo0 or hi1 < lo1:
                continue
            f1 = np.empty(hi1 - lo1 + 1, dtype=np.complex128)
            r1 = np.empty(hi1 - lo1 + 1)
            for j in range(lo1, hi1 + 1):
                z = x0[1] + j * dx[1] - Q[k, 1]
                r1[j - lo1] = z * z
                f1[j - lo1] = np.exp(complex(-0.5 * z * z / eps, P[k, 1] * z / eps))
            for i in range(lo0, hi0 + 1):
                z0 = x0[0] + i * dx[0] - Q[k, 0]
                r0 = z0 * z0
                f0 = coef[k] * np.exp(complex(-0.5 * r0 / eps, P[k, 0] * z0 / eps))
                for j in range(lo1, hi1 + 1):
                    if r0 + r1[j - lo1] <= th2:
                        out[i, j] += f0 * f1[j - lo1]
    return out


def _field_numpy(coef, Q, P, x0, dx, N0, N1, eps, theta):
    out = np.zeros((N0, N1), dtype=complex)
    th2 = theta * theta
    for k in range(len(coef)):
        lo0, hi0 = _axis_range(Q[k, 0], theta, x0[0], dx[0], N0)
        lo1, hi1 = _axis_range(Q[k, 1], theta, x0[1], dx[1], N1)
        if hi0 < lo0 or hi1 < lo1:
            continue
        z0 = x0[0] + np.arange(lo0, hi0 + 1) * dx[0] - Q[k, 0]
        z1 = x0[1] + np.arange(lo1, hi1 + 1) * dx[1] - Q[k, 1]
        f0 = coef[k] * np.exp((-0.5 * z0 * z0 + 1j * P[k, 0] * z0) / eps)
        f1 = np.exp((-0.5 * z1 * z1 + 1j * P[k, 1] * z1) / eps)
        inside = (z0[:, None] ** 2 + z1[None, :] ** 2) <= th2
        block = out[lo0:hi0 + 1, lo1:hi1 + 1]
        block[inside] += (f0[:, None] * f1[None, :])[inside]
    return out


def gaussian_field(coef, Q, P, x0, dx, shape, eps: float, theta: float, backend: str | None = None) -> np.ndarray:
    """Cutoff sum of frozen Gaussians on a uniform grid of the given shape.

    Each node accumulates its contributors in increasing atom index, so the
    result does not depend on how the grid is split between threads.
    """
    shape = tuple(shape)
    d = len(shape)
    coef = np.ascontiguousarray(coef, dtype=complex)
    Q = _pad2(np.asarray(Q, dtype=float).reshape(-1, d))
    P = _pad2(np.asarray(P, dtype=float).reshape(-1, d))
    x0 = _pad2(np.atleast_1d(np.asarray(x0, dtype=float))[None, :])[0]
    dx = _pad2(np.atleast_1d(np.asarray(dx, dtype=float))[None, :], 1.0)[0]
    N0 = shape[0]
    N1 = shape[1] if d == 2 else 1
    if (backend or ("numba" if _accel.use_numba() else "numpy")) == "numba":
        nchunks = max(1, min(_accel.num_threads() * 4, N0)) if _accel.num_threads() > 1 else 1
        out = _field_numba(coef, Q, P, x0, dx, N0, N1, float(eps), float(theta), nchunks)
    else:
        out = _field_numpy(coef, Q, P, x0, dx, N0, N1, float(eps), float(theta))
    return out.reshape(shape)


# ---------------------------------------------------------------------------
# leapfrog for u_tt = c(x)^2 u_xx with homogeneous Dirichlet ends

@njit(cache=True)
def _leapfrog_numba(u_prev, u, lam2, nsteps):
    n = u.shape[0]
    a = u_prev.copy()
    b = u.copy()
    c = np.zeros_like(u)
    for _ in range(nsteps):
        for j in range(1, n - 1):
            c[j] = 2.0 * b[j] - a[j] + lam2[j] * (b[j + 1] - 2.0 * b[j] + b[j - 1])
        c[0] = 0.0
        c[n - 1] = 0.0
        a, b, c = b, c, a
    return a, b


def _leapfrog_numpy(u_prev, u, lam2, nsteps):
    a = u_prev.copy()
    b = u.copy()
    c = np.zeros_like(u)
    lam = lam2[1:-1]
    for _ in range(nsteps):
        c[1:-1] = 2.0 * b[1:-1] - a[1:-1] + lam * (b[2:] - 2.0 * b[1:-1] + b[:-2])
        c[0] = 0.0
        c[-1] = 0.0
        a, b, c = b, c, a
    return a, b


def leapfrog(u_prev, u, lam2, nsteps: int, backend: str | None = None):
    """Advance (u^{n-1}, u^n) by ``nsteps`` steps; returns the new pair."""
    u_prev = np.ascontiguousarray(u_prev, dtype=complex)
    u = np.ascontiguousarray(u, dtype=complex)
    lam2 = np.ascontiguousarray(lam2, dtype=float)
    if nsteps <= 0:
        return u_prev.copy(), u.copy()
    if (backend or ("numba" if _accel.use_numba() else "numpy")) == "numba":
        return _leapfrog_numba(u_prev, u, lam2, int(nsteps))
    return _leapfrog_numpy(u_prev, u, lam2, int(nsteps))
