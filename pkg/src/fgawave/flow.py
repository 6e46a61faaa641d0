"""Hamiltonian transport of atoms with their Jacobian and complex prefactor.

Branch ``sign`` = +1/-1 moves along H = sign * c(Q) |P|.  The Jacobian
F = [[dqQ, dqP], [dpQ, dpP]] obeys dF/dt = F G with a generator G built from
(c, grad c, hess c, P); Z = dzQ + i dzP with dz = dq - i dp.
"""

from __future__ import annotations

import hashlib
import importlib.util
import math
import os
import sys
import tempfile
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import _accel
from .atoms import (
    ALIVE,
    DEAD_NONFINITE,
    DEAD_SINGULAR_Z,
    DEAD_SMALL_P,
    AtomSet,
    VariationalState,
    state_size,
)
from .scene import SpeedField

DIRECT = "direct"
LOG_DERIVATIVE = "log-derivative"
_FORMS = {DIRECT: 0, LOG_DERIVATIVE: 1}

# |det Z| below this is treated as singular; ZZ* >= 2I gives |det Z| >= 2^{d/2}
DET_Z_FLOOR = 1e-8


class DeadAtomError(ArithmeticError):
    pass


@dataclass(frozen=True)
class FlowSettings:
    dt: float
    t_final: float
    p_min: float = 1e-6
    prefactor_form: str = LOG_DERIVATIVE

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if not self.t_final >= 0:
            raise ValueError("t_final must be non-negative")
        if self.prefactor_form not in _FORMS:
            raise ValueError(f"prefactor_form must be one of {sorted(_FORMS)}")

    def schedule(self) -> tuple[int, float]:
        """(number of steps, length of the last step) landing exactly on t_final."""
        if self.t_final == 0:
            return 0, 0.0
        n = max(1, math.ceil(self.t_final / self.dt - 1e-9))
        return n, self.t_final - (n - 1) * self.dt


# ---------------------------------------------------------------------------
# right-hand sides, vectorised over leading axes

def _speed(speed: SpeedField, Q):
    return speed.evaluate(Q)


def hamiltonian_rhs(Q, P, sign, speed: SpeedField, p_min: float = 0.0):
    """(dQ/dt, dP/dt) = (sign c P/|P|, -sign grad c |P|)."""
    Q = np.asarray(Q, dtype=float)
    P = np.asarray(P, dtype=float)
    pn = np.linalg.norm(P, axis=-1)
    if np.any(pn < p_min) or np.any(pn == 0):
        raise DeadAtomError(f"|P| = {np.min(pn)} below p_min = {p_min}")
    c, g, _ = _speed(speed, Q)
    s = np.asarray(sign, dtype=float)
    return (s * c / pn)[..., None] * P, -(s * pn)[..., None] * g


def variational_generator(P, sign, c, g, H):
    """G with dF/dt = F G, F = [[dqQ, dqP], [dpQ, dpP]]."""
    P = np.asarray(P, dtype=float)
    d = P.shape[-1]
    pn = np.linalg.norm(P, axis=-1)[..., None, None]
    s = np.asarray(sign, dtype=float)[..., None, None]
    c = np.asarray(c, dtype=float)[..., None, None]
    eye = np.eye(d)
    PP = P[..., :, None] * P[..., None, :]
    G = np.empty(P.shape[:-1] + (2 * d, 2 * d))
    G[..., :d, :d] = s * g[..., :, None] * P[..., None, :] / pn
    G[..., d:, :d] = s * c * (eye / pn - PP / pn ** 3)
    G[..., :d, d:] = -s * H * pn
    G[..., d:, d:] = -s * P[..., :, None] * g[..., None, :] / pn
    return G


def variational_rhs(var: VariationalState, Q, P, sign, speed: SpeedField) -> VariationalState:
    """Time derivative of the four Jacobian blocks."""
    c, g, H = _speed(speed, np.asarray(Q, dtype=float))
    G = variational_generator(P, sign, c, g, H)
    return VariationalState.from_matrix(var.matrix @ G)


def dz_blocks_rhs(dzQ, dzP, Q, P, sign, speed: SpeedField):
    """Evolution of the complex blocks dzQ, dzP written out term by term."""
    P = np.asarray(P, dtype=float)
    d = P.shape[-1]
    c, g, H = _speed(speed, np.asarray(Q, dtype=float))
    pn = np.linalg.norm(P, axis=-1)[..., None, None]
    s = np.asarray(sign, dtype=float)[..., None, None]
    c = np.asarray(c)[..., None, None]
    gP = g[..., :, None] * P[..., None, :]
    Pg = P[..., :, None] * g[..., None, :]
    PP = P[..., :, None] * P[..., None, :]
    ddzQ = s * (dzQ @ gP) / pn + s * c * (dzP @ (np.eye(d) / pn - PP / pn ** 3))
    ddzP = -s * (dzQ @ H) * pn - s * (dzP @ Pg) / pn
    return ddzQ, ddzP


def _tr_solve(Z, W):
    return np.trace(np.linalg.solve(Z, W), axis1=-2, axis2=-1)


def prefactor_rhs(a, Q, P, var: VariationalState, sign, speed: SpeedField, form: str = LOG_DERIVATIVE):
    """da/dt in either the direct form or the log-derivative form."""
    Q = np.asarray(Q, dtype=float)
    P = np.asarray(P, dtype=float)
    c, g, H = _speed(speed, Q)
    return _prefactor_from(a, P, var.matrix, np.asarray(sign, dtype=float), c, g, H, form)


def _prefactor_from(a, P, F, s, c, g, H, form):
    d = P.shape[-1]
    pn = np.linalg.norm(P, axis=-1)
    u = P / pn[..., None]
    ug = np.sum(u * g, axis=-1)
    var = VariationalState.from_matrix(F)
    Z = var.Z
    if np.any(np.abs(np.linalg.det(Z)) < DET_Z_FLOOR):
        raise DeadAtomError("Z is numerically singular")
    if form == LOG_DERIVATIVE:
        dF = F @ variational_generator(P, s, c, g, H)
        dvar = VariationalState.from_matrix(dF)
        return s * a * ug + 0.5 * a * _tr_solve(Z, dvar.Z)
    if form == DIRECT:
        eye = np.eye(d)
        cc = np.asarray(c)[..., None, None]
        pnn = pn[..., None, None]
        K = (2 * u[..., :, None] * g[..., None, :]
             - 1j * cc / pnn * (u[..., :, None] * u[..., None, :] - eye)
             - 1j * pnn * H)
        first = ug - (d - 1) * 1j * c / pn
        return 0.5 * s * a * first + 0.5 * s * a * _tr_solve(Z, var.dzQ @ K)
    raise ValueError(form)


def _rhs_numpy(state, sign, speed: SpeedField, d: int, form: str):
    Q = state[:, :d]
    P = state[:, d:2 * d]
    F = state[:, 2 * d:2 * d + 4 * d * d].reshape(-1, 2 * d, 2 * d)
    a = state[:, -2] + 1j * state[:, -1]
    c, g, H = speed.evaluate(Q)
    pn = np.linalg.norm(P, axis=-1)
    out = np.empty_like(state)
    out[:, :d] = (sign * c / pn)[:, None] * P
    out[:, d:2 * d] = -(sign * pn)[:, None] * g
    G = variational_generator(P, sign, c, g, H)
    dF = F @ G
    out[:, 2 * d:2 * d + 4 * d * d] = dF.reshape(len(state), -1)
    u = P / pn[:, None]
    ug = np.sum(u * g, axis=-1)
    var = VariationalState.from_matrix(F)
    if form == LOG_DERIVATIVE:
        da = sign * a * ug + 0.5 * a * _tr_solve(var.Z, VariationalState.from_matrix(dF).Z)
    else:
        da = _prefactor_from(a, P, F, sign, c, g, H, DIRECT)
    out[:, -2] = da.real
    out[:, -1] = da.imag
    return out


def _check_numpy(state, d, p_min):
    """Status codes after a step (0 means still alive)."""
    status = np.zeros(len(state), dtype=np.int8)
    finite = np.all(np.isfinite(state), axis=1)
    status[~finite] = DEAD_NONFINITE
    pn = np.linalg.norm(state[:, d:2 * d], axis=-1)
    status[finite & (pn < p_min)] = DEAD_SMALL_P
    ok = status == ALIVE
    if np.any(ok):
        F = state[ok, 2 * d:2 * d + 4 * d * d].reshape(-1, 2 * d, 2 * d)
        detZ = np.abs(np.linalg.det(VariationalState.from_matrix(F).Z))
        sub = status[ok]
        sub[detZ < DET_Z_FLOOR] = DEAD_SINGULAR_Z
        status[ok] = sub
    return status


def _rk4_numpy(state, sign, speed, d, form, dt):
    k1 = _rhs_numpy(state, sign, speed, d, form)
    k2 = _rhs_numpy(state + 0.5 * dt * k1, sign, speed, d, form)
    k3 = _rhs_numpy(state + 0.5 * dt * k2, sign, speed, d, form)
    k4 = _rhs_numpy(state + dt * k3, sign, speed, d, form)
    return state + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)


def rk4_step(atoms: AtomSet, dt: float, speed: SpeedField, form: str = LOG_DERIVATIVE,
             p_min: float = 1e-6) -> AtomSet:
    """One classical RK4 step of the coupled (Q, P, F, a) system for live atoms."""
    out = atoms.copy()
    live = np.flatnonzero(out.alive)
    if len(live) == 0:
        return out
    with np.errstate(all="ignore"):
        new = _rk4_numpy(out.state[live], out.sign[live], speed, out.d, form, dt)
        status = _check_numpy(new, out.d, p_min)
    ok = status == ALIVE
    out.state[live[ok]] = new[ok]
    out.status[live[~ok]] = status[~ok]
    out.t = atoms.t + dt
    return out


# ---------------------------------------------------------------------------
# compiled path

_KERNELS: dict = {}


def _cache_dir() -> Path:
    root = os.environ.get("FGAWAVE_CACHE_DIR")
    if root:
        path = Path(root)
    else:
        base = os.environ.get("XDG_CACHE_HOME") or os.path.join(os.path.expanduser("~"), ".cache")
        path = Path(base) / "fgawave"
    try:
        path.mkdir(parents=True, exist_ok=True)
        if not os.access(path, os.W_OK):
            raise PermissionError(path)
    except OSError:
        path = Path(tempfile.gettempdir()) / f"fgawave-{os.getuid() if hasattr(os, 'getuid') else 'user'}"
        path.mkdir(parents=True, exist_ok=True)
    return path


def _kernel_source(speed: SpeedField, form: str) -> str:
    template = (Path(__file__).with_name("_flow_template.py")).read_text()
    d = speed.d
    consts = (f"D = {d}\nD2 = {2 * d}\nM = {state_size(d)}\nUSE_LOG = {_FORMS[form] == 1}\n\n\n"
              "@njit(cache=True)\n")
    return template + "\n\n" + consts + speed.source


def _build_kernel(speed: SpeedField, form: str):
    """Compiled RK4 propagator specialised to one speed field and prefactor form.

    The generated module lives in a cache directory keyed by a hash of its
    source, so numba's on-disk cache survives across processes.
    """
    key = (speed.source, speed.d, form)
    if key in _KERNELS:
        return _KERNELS[key]
    if speed.d not in (1, 2):
        raise ValueError("compiled flow supports d = 1 or 2")
    src = _kernel_source(speed, form)
    digest = hashlib.sha1(src.encode()).hexdigest()[:16]
    name = f"fgawave_kern_{digest}"
    path = _cache_dir() / f"{name}.py"
    if not path.exists() or path.read_text() != src:
        tmp = path.with_suffix(f".{os.getpid()}.tmp")
        tmp.write_text(src)
        os.replace(tmp, path)
    spec = importlib.util.spec_from_file_location(name, path)
    module = importlib.util.module_from_spec(spec)
    # numba's cache re-imports the module by name when loading
    sys.modules[name] = module
    spec.loader.exec_module(module)
    _KERNELS[key] = module.propagate_kernel
    return module.propagate_kernel


def propagate(atoms: AtomSet, settings: FlowSettings, speed: SpeedField, backend: str | None = None) -> AtomSet:
    """Advance every live atom to ``settings.t_final``.

    The last step is shortened so the run lands exactly on t_final.  Atoms
    that lose momentum, go non-finite or get a singular Z are frozen at their
    last good state and counted in ``census``.
    """
    out = atoms.copy()
    nsteps, last = settings.schedule()
    if backend is None:
        backend = "numba" if _accel.use_numba() else "numpy"
    if nsteps > 0 and len(out) > 0:
        if backend == "numba":
            kernel = _build_kernel(speed, settings.prefactor_form)
            status = out.status.copy()
            with np.errstate(all="ignore"):
                kernel(out.state, out.sign, status, settings.dt, nsteps, last, settings.p_min)
            out.status = status
        else:
            for step in range(nsteps):
                h = settings.dt if step < nsteps - 1 else last
                out = rk4_step(out, h, speed, settings.prefactor_form, settings.p_min)
    out.t = atoms.t + settings.t_final
    out.census = dict(atoms.census)
    out.census["dead"] = out.dead_census()
    out.census["alive"] = int(np.count_nonzero(out.alive))
    return out


def sqrt_det_Z(F_history: np.ndarray) -> np.ndarray:
    """(det Z)^{1/2} along a time series of Jacobians, with a continuous branch.

    The principal root is flipped whenever it points away from the previous
    value, starting from 2^{d/2} at t = 0.
    """
    F_history = np.asarray(F_history)
    Z = VariationalState.from_matrix(F_history).Z
    roots = np.sqrt(np.linalg.det(Z).astype(complex))
    out = np.empty_like(roots)
    prev = None
    for i, r in enumerate(roots):
        if prev is not None and (r.real * prev.real + r.imag * prev.imag) < 0:
            r = -r
        out[i] = r
        prev = r
    return out
