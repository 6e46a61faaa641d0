"""Reference solvers and the Gaussian beam comparison method.

* :func:`fd_wave_1d` - centred second-order finite differences, Dirichlet ends.
* :func:`spectral_wave_2d` - exact Fourier propagation for constant speed on a periodic box.
* :func:`gbm_propagate` / :func:`gbm_reconstruct` - first-order Gaussian beams in 1D.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, replace

import numpy as np

from .decompose import split_branches
from .expr import evaluate
from .kernels import leapfrog
from .reconstruct import Grid, GridField
from .scene import WaveProblem


class CFLError(ValueError):
    pass


class BoundaryWarning(UserWarning):
    pass


class SmallMomentumError(ArithmeticError):
    pass


# ---------------------------------------------------------------------------
# finite differences

@dataclass
class FDResult:
    field: GridField
    time_derivative: GridField
    energy: np.ndarray          # staggered discrete energy at every checkpoint
    boundary_max: float         # largest |u| seen within the boundary band
    checkpoints: list = field(default_factory=list, repr=False)

    @property
    def energy_ratio(self) -> float:
        e = self.energy
        return float(e.max() / e[0]) if len(e) and e[0] > 0 else 1.0


def _fd_energy(u_old, u_new, c2_edge, dx, dt) -> float:
    dudt = (u_new - u_old) / dt
    g_old = np.diff(u_old) / dx
    g_new = np.diff(u_new) / dx
    return float((np.sum(np.abs(dudt) ** 2) + np.sum(c2_edge * (g_old * np.conj(g_new)).real)) * dx)


def fd_wave_1d(problem: WaveProblem, dx: float, dt: float, t_final: float, *,
               n_checkpoints: int = 16, band: int = 10, band_tol: float = 1e-6,
               keep_checkpoints: bool = False, backend: str | None = None) -> FDResult:
    """Leapfrog solution of u_tt = c^2 u_xx on ``problem.box`` with u = 0 at both ends.

    The first step uses u1 = u0 + dt u_t0 + dt^2/2 c^2 D2 u0.  The returned
    time derivative is the centred difference around t_final.
    """
    if problem.d != 1:
        raise ValueError("fd_wave_1d needs a 1D problem")
    grid = Grid.from_box(problem.box.lo, problem.box.hi, dx)
    x = grid.axes[0]
    c = np.broadcast_to(evaluate(problem.speed.value, x), x.shape).astype(float)
    cfl = float(np.max(np.abs(c)) * dt / dx)
    if cfl > 1.0:
        raise CFLError(f"CFL number {cfl:.4g} exceeds 1")
    lam2 = (c * dt / dx) ** 2
    c2_edge = 0.5 * (c[1:] ** 2 + c[:-1] ** 2)

    u0, ut0 = problem.initial_data(x[:, None])
    u0 = np.asarray(u0, dtype=complex).copy()
    ut0 = np.asarray(ut0, dtype=complex).copy()
    u0[[0, -1]] = 0.0
    ut0[[0, -1]] = 0.0
    lap = np.zeros_like(u0)
    lap[1:-1] = (u0[2:] - 2.0 * u0[1:-1] + u0[:-2]) / dx ** 2
    u1 = u0 + dt * ut0 + 0.5 * dt ** 2 * c ** 2 * lap
    u1[[0, -1]] = 0.0

    nsteps = int(round(t_final / dt))
    if abs(nsteps * dt - t_final) > 1e-9 * max(1.0, t_final):
        raise ValueError("t_final must be a multiple of dt")

    def band_max(u):
        return float(max(np.abs(u[1:band + 1]).max(), np.abs(u[-band - 1:-1]).max()))

    energy = [_fd_energy(u0, u1, c2_edge, dx, dt)]
    bmax = band_max(u0)
    ckpts = []
    prev, cur = u0, u1
    done = 1 if nsteps >= 1 else 0
    if nsteps == 0:
        prev, cur = u0, u0
    marks = np.unique(np.linspace(1, nsteps, max(1, n_checkpoints) + 1).round().astype(int)) if nsteps else []
    for m in marks:
        if m <= done:
            continue
        prev, cur = leapfrog(prev, cur, lam2, m - done, backend=backend)
        done = m
        energy.append(_fd_energy(prev, cur, c2_edge, dx, dt))
        bmax = max(bmax, band_max(cur))
        if keep_checkpoints:
            ckpts.append((done * dt, prev.copy(), cur.copy()))
    if nsteps:
        _, nxt = leapfrog(prev, cur, lam2, 1, backend=backend)
        ut = (nxt - prev) / (2.0 * dt)
    else:
        ut = ut0
    if bmax > band_tol:
        warnings.warn(f"solution reaches the boundary band with |u| = {bmax:.3g}; enlarge the box",
                      BoundaryWarning, stacklevel=2)
    return FDResult(GridField(grid, cur, "fd"), GridField(grid, ut, "fd_t"), np.array(energy), bmax, ckpts)


# ---------------------------------------------------------------------------
# spectral, constant speed

def spectral_wave_2d(problem: WaveProblem, grid: Grid, t_final: float, *, check_support: bool = True,
                     support_tol: float = 1e-8) -> GridField:
    """Exact Fourier propagation on the periodic box spanned by ``grid``.

    The period along axis j is ``shape[j] * dx[j]``.  Works for any d
    despite the name.
    """
    if not problem.speed.is_constant:
        raise ValueError("spectral reference requires a constant wave speed")
    c = float(evaluate(problem.speed.value))
    X = grid.points
    u0, ut0 = problem.initial_data(X)
    u0 = np.asarray(u0, dtype=complex)
    ut0 = np.asarray(ut0, dtype=complex)
    if check_support:
        _check_periodic_support(u0, support_tol)
    return GridField(grid, _spectral_propagate(u0, ut0, grid, c, t_final), "spectral")


def _check_periodic_support(u, tol):
    peak = float(np.abs(u).max())
    if peak == 0:
        return
    for ax in range(u.ndim):
        edge = np.take(u, [0, -1], axis=ax)
        if np.abs(edge).max() > tol * peak:
            warnings.warn("initial data does not decay at the periodic box edge", BoundaryWarning, stacklevel=3)
            return


def _spectral_propagate(u0, ut0, grid: Grid, c: float, t: float) -> np.ndarray:
    ks = [2.0 * math.pi * np.fft.fftfreq(n, d=h) for n, h in zip(grid.shape, grid.dx)]
    K = np.sqrt(sum(k ** 2 for k in np.meshgrid(*ks, indexing="ij")))
    w = c * K
    U0 = np.fft.fftn(u0)
    V0 = np.fft.fftn(ut0)
    with np.errstate(invalid="ignore", divide="ignore"):
        sinc_t = np.where(w > 0, np.sin(w * t) / np.where(w > 0, w, 1.0), t)
    return np.fft.ifftn(np.cos(w * t) * U0 + sinc_t * V0)


def spectral_step(u, ut, grid: Grid, c: float, t: float) -> tuple[np.ndarray, np.ndarray]:
    """Propagate an arbitrary (u, u_t) pair by time ``t`` (negative allowed)."""
    ks = [2.0 * math.pi * np.fft.fftfreq(n, d=h) for n, h in zip(grid.shape, grid.dx)]
    w = c * np.sqrt(sum(k ** 2 for k in np.meshgrid(*ks, indexing="ij")))
    U = np.fft.fftn(u)
    V = np.fft.fftn(ut)
    with np.errstate(invalid="ignore", divide="ignore"):
        sinc_t = np.where(w > 0, np.sin(w * t) / np.where(w > 0, w, 1.0), t)
    return (np.fft.ifftn(np.cos(w * t) * U + sinc_t * V),
            np.fft.ifftn(-w * np.sin(w * t) * U + np.cos(w * t) * V))


# ---------------------------------------------------------------------------
# Gaussian beams (1D)

@dataclass
class BeamSet:
    """Structure of arrays for 1D beams; ``weight`` is the quadrature weight δy0."""

    y: np.ndarray
    xi: np.ndarray
    S: np.ndarray
    M: np.ndarray
    A: np.ndarray
    sign: np.ndarray
    weight: float = 1.0
    t: float = 0.0
    im_M_min: np.ndarray | None = None  # running minimum of Im M per beam

    def __post_init__(self):
        self.y = np.atleast_1d(np.asarray(self.y, dtype=float))
        n = len(self.y)
        self.xi = np.broadcast_to(np.asarray(self.xi, dtype=float), (n,)).copy()
        self.S = np.broadcast_to(np.asarray(self.S, dtype=float), (n,)).copy()
        self.M = np.broadcast_to(np.asarray(self.M, dtype=complex), (n,)).copy()
        self.A = np.broadcast_to(np.asarray(self.A, dtype=complex), (n,)).copy()
        self.sign = np.broadcast_to(np.asarray(self.sign, dtype=float), (n,)).copy()
        if self.im_M_min is None:
            self.im_M_min = self.M.imag.copy()
        if self.t == 0.0 and np.any(self.M.imag <= 0):
            raise ValueError("beams need Im M > 0 initially")

    def __len__(self) -> int:
        return len(self.y)

    @classmethod
    def single(cls, y, xi, S, M, A, sign=1.0, weight=1.0) -> "BeamSet":
        return cls(np.array([y], float), xi, S, M, A, sign, weight)

    @property
    def lost_positivity(self) -> int:
        return int(np.count_nonzero(self.im_M_min <= 0))


def beams_from_problem(problem: WaveProblem, dy0: float, n: int, y0: float = 0.0,
                       drop_tol: float = 0.0) -> BeamSet:
    """Beams centred at ``y0 + j dy0`` for both branches, A(0) = A±(y_j).

    Beams whose amplitude is at most ``drop_tol`` times the largest are dropped.
    """
    if problem.d != 1:
        raise ValueError("the Gaussian beam baseline is one-dimensional")
    y = y0 + np.arange(n) * dy0
    S = np.broadcast_to(evaluate(problem.S0, y), y.shape).astype(float)
    xi = np.broadcast_to(evaluate(problem.S0_grad[0], y), y.shape).astype(float)
    Sxx = np.broadcast_to(evaluate(problem.S0_hess[0][0], y), y.shape).astype(float)
    parts = []
    for br in split_branches(problem):
        A = br.amplitude(y[:, None])
        parts.append((A, br.sign))
    amax = max(float(np.abs(A).max()) for A, _ in parts)
    ys, xis, Ss, Ms, As, sg = [], [], [], [], [], []
    for A, s in parts:
        keep = np.abs(A) > drop_tol * amax
        ys.append(y[keep]); xis.append(xi[keep]); Ss.append(S[keep])
        Ms.append(Sxx[keep] + 1j); As.append(A[keep]); sg.append(np.full(keep.sum(), float(s)))
    return BeamSet(np.concatenate(ys), np.concatenate(xis), np.concatenate(Ss), np.concatenate(Ms),
                   np.concatenate(As), np.concatenate(sg), weight=dy0)


def _beam_rhs(speed, y, xi, M, A, s):
    c, g, H = speed.evaluate(y[:, None])
    cp = g[:, 0]
    cpp = H[:, 0, 0]
    sgn = np.sign(xi)
    axi = np.abs(xi)
    dy = s * c * sgn
    dxi = -s * cp * axi
    dM = s * (-2.0 * cp * sgn * M - cpp * axi)
    dA = s * 0.5 * cp * sgn * A
    return dy, dxi, dM, dA


def gbm_propagate(beams: BeamSet, dt: float, t_final: float, speed, p_min: float = 1e-6) -> BeamSet:
    """RK4 for the beam ODEs; S is constant because c|xi| is 1-homogeneous in xi."""
    if speed.d != 1:
        raise ValueError("the Gaussian beam baseline is one-dimensional")
    y, xi, M, A = beams.y.copy(), beams.xi.copy(), beams.M.copy(), beams.A.copy()
    s = beams.sign
    im_min = beams.im_M_min.copy()
    n = max(1, math.ceil(t_final / dt - 1e-9)) if t_final > 0 else 0
    for k in range(n):
        h = dt if k < n - 1 else t_final - (n - 1) * dt
        if np.any(np.abs(xi) < p_min):
            raise SmallMomentumError("beam momentum fell below p_min")
        k1 = _beam_rhs(speed, y, xi, M, A, s)
        k2 = _beam_rhs(speed, y + 0.5 * h * k1[0], xi + 0.5 * h * k1[1], M + 0.5 * h * k1[2], A + 0.5 * h * k1[3], s)
        k3 = _beam_rhs(speed, y + 0.5 * h * k2[0], xi + 0.5 * h * k2[1], M + 0.5 * h * k2[2], A + 0.5 * h * k2[3], s)
        k4 = _beam_rhs(speed, y + h * k3[0], xi + h * k3[1], M + h * k3[2], A + h * k3[3], s)
        y = y + h / 6.0 * (k1[0] + 2 * k2[0] + 2 * k3[0] + k4[0])
        xi = xi + h / 6.0 * (k1[1] + 2 * k2[1] + 2 * k3[1] + k4[1])
        M = M + h / 6.0 * (k1[2] + 2 * k2[2] + 2 * k3[2] + k4[2])
        A = A + h / 6.0 * (k1[3] + 2 * k2[3] + 2 * k3[3] + k4[3])
        im_min = np.minimum(im_min, M.imag)
    if np.any(np.abs(xi) < p_min):
        raise SmallMomentumError("beam momentum fell below p_min")
    if np.any(im_min <= 0):
        warnings.warn(f"{int(np.count_nonzero(im_min <= 0))} beams lost Im M > 0", RuntimeWarning, stacklevel=2)
    return replace(beams, y=y, xi=xi, M=M, A=A, t=beams.t + t_final, im_M_min=im_min)


def gbm_reconstruct(beams: BeamSet, grid: Grid, epsilon: float, theta: float | None) -> np.ndarray:
    """(2 pi eps)^{-1/2} sum_j r_theta A exp(i(S + xi(x-y) + M(x-y)^2/2)/eps) δy0.

    ``theta=None`` disables the cutoff.
    """
    x = grid.axes[0]
    out = np.zeros(len(x), dtype=complex)
    pref = beams.weight / math.sqrt(2.0 * math.pi * epsilon)
    h = grid.dx[0]
    for j in range(len(beams)):
        if theta is None:
            lo, hi = 0, len(x) - 1
        else:
            lo = max(0, math.ceil((beams.y[j] - theta - grid.x0[0]) / h - 1e-9))
            hi = min(len(x) - 1, math.floor((beams.y[j] + theta - grid.x0[0]) / h + 1e-9))
            if hi < lo:
                continue
        z = x[lo:hi + 1] - beams.y[j]
        ph = beams.S[j] + beams.xi[j] * z + 0.5 * beams.M[j] * z * z
        out[lo:hi + 1] += pref * beams.A[j] * np.exp(1j * ph / epsilon)
    return out
