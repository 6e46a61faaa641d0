"""Summation of propagated frozen Gaussians on a uniform grid."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .atoms import AtomSet
from .kernels import gaussian_field


@dataclass(frozen=True)
class Grid:
    """Uniform tensor grid: node ``i`` on axis ``j`` is ``x0[j] + i * dx[j]``."""

    x0: tuple
    dx: tuple
    shape: tuple

    def __post_init__(self):
        object.__setattr__(self, "x0", tuple(float(v) for v in np.atleast_1d(self.x0)))
        object.__setattr__(self, "dx", tuple(float(v) for v in np.atleast_1d(self.dx)))
        object.__setattr__(self, "shape", tuple(int(v) for v in np.atleast_1d(self.shape)))
        if not len(self.x0) == len(self.dx) == len(self.shape):
            raise ValueError("x0, dx and shape must have the same length")
        if any(h <= 0 for h in self.dx) or any(n < 1 for n in self.shape):
            raise ValueError("grid spacing and sizes must be positive")

    @classmethod
    def from_box(cls, lo, hi, dx) -> "Grid":
        """Grid with nodes at ``lo, lo + dx, ...`` up to and including ``hi``."""
        lo = np.atleast_1d(np.asarray(lo, dtype=float))
        hi = np.atleast_1d(np.asarray(hi, dtype=float))
        dx = np.broadcast_to(np.asarray(dx, dtype=float), lo.shape)
        n = np.floor((hi - lo) / dx + 1e-9).astype(int) + 1
        return cls(tuple(lo), tuple(dx), tuple(n))

    @property
    def d(self) -> int:
        return len(self.shape)

    @property
    def axes(self) -> list[np.ndarray]:
        return [self.x0[j] + np.arange(self.shape[j]) * self.dx[j] for j in range(self.d)]

    @property
    def points(self) -> np.ndarray:
        """Node coordinates, shape ``shape + (d,)``."""
        return np.stack(np.meshgrid(*self.axes, indexing="ij"), axis=-1)

    @property
    def cell(self) -> float:
        return float(np.prod(self.dx))

    def subsample(self, stride: int) -> "Grid":
        return Grid(self.x0, tuple(h * stride for h in self.dx),
                    tuple((n - 1) // stride + 1 for n in self.shape))


@dataclass
class GridField:
    grid: Grid
    values: np.ndarray
    label: str = ""

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=complex).reshape(self.grid.shape)

    def write_csv(self, path) -> Path:
        """Columns x1..xd, re, im, abs; rows in C order of the grid."""
        path = Path(path)
        pts = self.grid.points.reshape(-1, self.grid.d)
        v = self.values.ravel()
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow([f"x{j + 1}" for j in range(self.grid.d)] + ["re", "im", "abs"])
            for row, val in zip(pts, v):
                w.writerow([repr(float(t)) for t in row] +
                           [repr(float(val.real)), repr(float(val.imag)), repr(float(abs(val)))])
        return path

    @classmethod
    def read_csv(cls, path, grid: Grid, label: str = "") -> "GridField":
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        vals = data[:, grid.d] + 1j * data[:, grid.d + 1]
        return cls(grid, vals, label)


def coefficients(atoms: AtomSet, epsilon: float) -> np.ndarray:
    """a psi cell / (2 pi eps)^{3d/2} for every atom (zero for dead atoms)."""
    d = atoms.d
    scale = atoms.cell / (2.0 * math.pi * epsilon) ** (1.5 * d)
    return np.where(atoms.alive, atoms.a * atoms.weight * scale, 0.0)


def evaluate_field(atoms: AtomSet, grid: Grid, epsilon: float, theta: float,
                   backend: str | None = None) -> np.ndarray:
    """Sum every alive atom's Gaussian, cut off at |x - Q| > theta, on ``grid``."""
    if grid.d != atoms.d:
        raise ValueError("grid and atoms differ in dimension")
    live = np.flatnonzero(atoms.alive)
    coef = coefficients(atoms, epsilon)[live]
    return gaussian_field(coef, atoms.Q[live], atoms.P[live], grid.x0, grid.dx, grid.shape,
                          epsilon, theta, backend=backend)


def spatial_bucket(Q: np.ndarray, grid: Grid, theta: float) -> tuple[np.ndarray, np.ndarray]:
    """Contributor lists per node in CSR form: atoms of node ``n`` are
    ``indices[indptr[n]:indptr[n + 1]]``, sorted by atom index.

    Atoms are hashed into cubes of side theta, so each node only inspects the
    3^d cubes around it.
    """
    d = grid.d
    Q = np.asarray(Q, dtype=float).reshape(-1, d)
    pts = grid.points.reshape(-1, d)
    x0 = np.asarray(grid.x0)
    buckets: dict[tuple, list[int]] = {}
    for i, key in enumerate(map(tuple, np.floor((Q - x0) / theta).astype(np.int64))):
        buckets.setdefault(key, []).append(i)
    node_keys = np.floor((pts - x0) / theta).astype(np.int64)
    offsets = [tuple(o) for o in np.stack(np.meshgrid(*[[-1, 0, 1]] * d, indexing="ij"), -1).reshape(-1, d)]
    counts = np.zeros(len(pts), dtype=np.int64)
    chunks = []
    for n, key in enumerate(map(tuple, node_keys)):
        cand = [i for o in offsets for i in buckets.get(tuple(k + dk for k, dk in zip(key, o)), ())]
        if not cand:
            continue
        cand = np.sort(np.asarray(cand, dtype=np.int64))
        hit = cand[np.sum((Q[cand] - pts[n]) ** 2, axis=1) <= theta * theta]
        counts[n] = len(hit)
        chunks.append(hit)
    indptr = np.zeros(len(pts) + 1, dtype=np.int64)
    indptr[1:] = np.cumsum(counts)
    indices = np.concatenate(chunks) if chunks else np.zeros(0, dtype=np.int64)
    return indptr, indices
