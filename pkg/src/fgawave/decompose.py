"""Initial value decomposition: branch split, phase-space mesh and weights psi."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.special import erfc

from .atoms import Atom, AtomSet
from .kernels import window_sum
from .scene import WaveProblem
from .expr import evaluate


class BranchSplitError(ValueError):
    pass


class EmptyMeshError(ValueError):
    pass


class MeshWarning(UserWarning):
    pass


class TruncationWarning(UserWarning):
    pass


def _vec(v, d, name, cast=float):
    arr = np.atleast_1d(np.asarray(v, dtype=cast))
    if arr.size == 1:
        arr = np.repeat(arr, d)
    if arr.shape != (d,):
        raise ValueError(f"{name} must have {d} entries")
    return arr


@dataclass
class MeshSpec:
    """Mesh sizes and counts of the q, p and y meshes (and optionally x).

    ``Np`` counts offsets on each side: the p window is ``-Np..Np`` steps.
    If ``y0``/``Ny`` are omitted the y mesh covers the q box inflated by theta.
    """

    d: int
    dq: np.ndarray
    dp: np.ndarray
    dy: np.ndarray
    Nq: np.ndarray
    Np: np.ndarray
    q0: np.ndarray
    theta: float
    y0: np.ndarray | None = None
    Ny: np.ndarray | None = None
    x0: np.ndarray | None = None
    dx: np.ndarray | None = None
    Nx: np.ndarray | None = None

    def __post_init__(self):
        d = self.d
        self.dq = _vec(self.dq, d, "dq")
        self.dp = _vec(self.dp, d, "dp")
        self.dy = _vec(self.dy, d, "dy")
        self.Nq = _vec(self.Nq, d, "Nq", int)
        self.Np = _vec(self.Np, d, "Np", int)
        self.q0 = _vec(self.q0, d, "q0")
        if np.any(self.dq <= 0) or np.any(self.dp <= 0) or np.any(self.dy <= 0):
            raise ValueError("mesh sizes must be positive")
        if np.any(self.Nq < 1) or np.any(self.Np < 0):
            raise ValueError("Nq must be >= 1 and Np >= 0")
        if not self.theta > 0:
            raise ValueError("theta must be positive")
        if self.y0 is None or self.Ny is None:
            pad = np.ceil(self.theta / self.dy - 1e-9)
            self.y0 = self.q0 - pad * self.dy
            q_end = self.q0 + (self.Nq - 1) * self.dq
            self.Ny = (np.ceil((q_end + self.theta - self.y0) / self.dy - 1e-9) + 1).astype(int)
        else:
            self.y0 = _vec(self.y0, d, "y0")
            self.Ny = _vec(self.Ny, d, "Ny", int)
        if self.x0 is not None:
            self.x0 = _vec(self.x0, d, "x0")
            self.dx = _vec(self.dx, d, "dx")
            self.Nx = _vec(self.Nx, d, "Nx", int)

    def check_scaling(self, epsilon: float, K: float = 4.0) -> list[str]:
        """Warn (and return messages) when dq, dp, dy exceed K sqrt(eps)."""
        msgs = []
        limit = K * math.sqrt(epsilon)
        for name in ("dq", "dp", "dy"):
            v = getattr(self, name)
            if np.any(v > limit):
                msgs.append(f"{name}={v.tolist()} exceeds {K}*sqrt(eps)={limit:.4g}")
        for m in msgs:
            warnings.warn(m, MeshWarning, stacklevel=2)
        return msgs

    def y_axes(self) -> list[np.ndarray]:
        return [self.y0[j] + np.arange(self.Ny[j]) * self.dy[j] for j in range(self.d)]

    @property
    def cell(self) -> float:
        return float(np.prod(self.dq) * np.prod(self.dp))


@dataclass(frozen=True)
class BranchData:
    """One half-wave branch of the initial data, A± e^{iS0/eps}."""

    sign: int
    problem: WaveProblem
    support_tol: float = 1e-8

    def amplitude(self, X: np.ndarray) -> np.ndarray:
        """A± = (A0 ± i B0 / (c |grad S0|)) / 2 at points X of shape (..., d)."""
        pr = self.problem
        X = np.asarray(X, dtype=float)
        coords = [X[..., j] for j in range(pr.d)]
        shape = X.shape[:-1]
        A0 = np.broadcast_to(pr.A0(*coords), shape)
        B0 = np.broadcast_to(pr.B0(*coords), shape)
        c = np.broadcast_to(evaluate(pr.speed.value, *coords), shape)
        gs = np.linalg.norm(pr.grad_S0(X), axis=-1)
        denom = c * gs
        bad = ~(denom >= 1e-6)
        scale = max(float(np.max(np.abs(A0), initial=0.0)), float(np.max(np.abs(B0), initial=0.0)), 1e-300)
        live = (np.abs(A0) > self.support_tol * scale) | (np.abs(B0) > self.support_tol * scale)
        if np.any(bad & live):
            where = X[bad & live][0]
            raise BranchSplitError(f"c|grad S0| vanishes on the data support near x={where.tolist()}")
        with np.errstate(all="ignore"):
            ratio = 1j * B0 / np.where(bad, 1.0, denom)
        # below the support threshold the split is undefined; treat the data as zero
        return np.where(bad, 0.0, 0.5 * (A0 + self.sign * ratio))

    def u0(self, X: np.ndarray) -> np.ndarray:
        """u±,0 = A± e^{iS0/eps}."""
        pr = self.problem
        X = np.asarray(X, dtype=float)
        coords = [X[..., j] for j in range(pr.d)]
        return self.amplitude(X) * np.exp(1j * evaluate(pr.S0, *coords) / pr.epsilon)


def split_branches(problem: WaveProblem, support_tol: float = 1e-8) -> tuple[BranchData, BranchData]:
    return BranchData(+1, problem, support_tol), BranchData(-1, problem, support_tol)


@dataclass
class PhaseMesh:
    q: np.ndarray          # (n, d)
    p: np.ndarray          # (n, d)
    excluded: int = 0
    spec: MeshSpec | None = field(default=None, repr=False)

    def __len__(self) -> int:
        return len(self.q)


def build_phase_mesh(problem: WaveProblem, spec: MeshSpec, p_min: float = 1e-6) -> PhaseMesh:
    """q lattice from q0, and for each q a p window centred on grad S0(q).

    Labels are ordered lexicographically by (q index, p offset).
    """
    d = problem.d
    axes = [spec.q0[j] + np.arange(spec.Nq[j]) * spec.dq[j] for j in range(d)]
    qs = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, d)
    offs = [np.arange(-spec.Np[j], spec.Np[j] + 1) * spec.dp[j] for j in range(d)]
    dps = np.stack(np.meshgrid(*offs, indexing="ij"), axis=-1).reshape(-1, d)
    centers = problem.grad_S0(qs)
    q = np.repeat(qs, len(dps), axis=0)
    p = (centers[:, None, :] + dps[None, :, :]).reshape(-1, d)
    keep = np.linalg.norm(p, axis=-1) >= p_min
    excluded = int(np.count_nonzero(~keep))
    if not np.any(keep):
        raise EmptyMeshError("every phase-space label has |p| < p_min")
    return PhaseMesh(q[keep], p[keep], excluded, spec)


def _truncation_loss(q, spec: MeshSpec, epsilon: float) -> np.ndarray:
    """Gaussian mass of the theta-ball around each q that falls outside the y box."""
    s = math.sqrt(2.0 * epsilon)
    tail = erfc(spec.theta / s)
    inside = np.ones(len(q))
    for j in range(spec.d):
        lo = spec.y0[j] - 0.5 * spec.dy[j]
        hi = spec.y0[j] + (spec.Ny[j] - 0.5) * spec.dy[j]
        lost_lo = np.clip(0.5 * (erfc((q[:, j] - lo) / s) - tail), 0.0, None)
        lost_hi = np.clip(0.5 * (erfc((hi - q[:, j]) / s) - tail), 0.0, None)
        inside *= 1.0 - lost_lo - lost_hi
    return 1.0 - inside


def sample_branch(branch: BranchData, spec: MeshSpec) -> np.ndarray:
    axes = spec.y_axes()
    Y = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)
    return branch.u0(Y)


def window_transform(branch: BranchData, q, p, spec: MeshSpec, epsilon: float,
                     samples: np.ndarray | None = None) -> np.ndarray:
    """psi(q, p) for one label or an (n, d) batch of labels, by the trapezoid rule.

    The sum runs over y nodes with |y - q| <= theta and includes prod(dy).
    """
    d = spec.d
    q = np.asarray(q, dtype=float).reshape(-1, d)
    p = np.asarray(p, dtype=float).reshape(-1, d)
    if samples is None:
        samples = sample_branch(branch, spec)
    lost = _truncation_loss(q, spec, epsilon)
    if np.any(lost > 1e-10):
        warnings.warn(f"y mesh does not cover the cutoff ball for {int(np.sum(lost > 1e-10))} labels; "
                      f"estimated Gaussian mass lost up to {lost.max():.3g}", TruncationWarning, stacklevel=2)
    psi = window_sum(samples, spec.y0, spec.dy, q, p, epsilon, spec.theta)
    return psi if len(psi) > 1 else psi[0]


def init_atoms(branches, mesh: PhaseMesh, spec: MeshSpec, epsilon: float,
               prune: float | None = 1e-12) -> AtomSet:
    """One atom per (branch, label); atoms with |psi| < prune * max|psi| are dropped."""
    sets = []
    for br in branches:
        psi = window_transform(br, mesh.q, mesh.p, spec, epsilon)
        psi = np.atleast_1d(psi)
        sets.append(AtomSet.initial(spec.d, float(br.sign), mesh.q, mesh.p, psi))
    atoms = AtomSet.concatenate(sets)
    total = len(atoms)
    pruned = 0
    if prune is not None and total:
        mags = np.abs(atoms.weight)
        keep = mags >= prune * mags.max() if mags.max() > 0 else np.zeros(total, bool)
        pruned = int(total - np.count_nonzero(keep))
        atoms = atoms.subset(np.flatnonzero(keep))
    atoms.cell = spec.cell
    atoms.census = {"labels": len(mesh), "excluded_small_p": mesh.excluded, "candidates": total,
                    "pruned": pruned, "atoms": len(atoms)}
    return atoms


__all__ = ["Atom", "AtomSet", "MeshSpec", "BranchData", "PhaseMesh", "split_branches", "build_phase_mesh",
           "window_transform", "init_atoms", "BranchSplitError", "EmptyMeshError", "TruncationWarning",
           "MeshWarning"]
