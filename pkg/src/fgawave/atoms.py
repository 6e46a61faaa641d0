"""Structure-of-arrays storage for frozen Gaussians ("atoms").

Each atom carries a packed real state vector::

    [Q (d), P (d), F (2d x 2d, row major), Re a, Im a]

where ``F = [[dqQ, dqP], [dpQ, dpP]]`` holds the Jacobian blocks of the flow
map, ``(dqQ)[j, k] = dQ_k / dq_j``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

ALIVE = 0
DEAD_SMALL_P = 1
DEAD_NONFINITE = 2
DEAD_SINGULAR_Z = 3

STATUS_NAMES = {
    ALIVE: "alive",
    DEAD_SMALL_P: "momentum below p_min",
    DEAD_NONFINITE: "non-finite state",
    DEAD_SINGULAR_Z: "singular Z",
}


def state_size(d: int) -> int:
    return 2 * d + 4 * d * d + 2


@dataclass(frozen=True)
class VariationalState:
    """Real Jacobian blocks of the flow map for one atom."""

    dqQ: np.ndarray
    dpQ: np.ndarray
    dqP: np.ndarray
    dpP: np.ndarray

    @classmethod
    def identity(cls, d: int) -> "VariationalState":
        z = np.zeros((d, d))
        return cls(np.eye(d), z.copy(), z.copy(), np.eye(d))

    @classmethod
    def from_matrix(cls, F: np.ndarray) -> "VariationalState":
        d = F.shape[-1] // 2
        return cls(F[..., :d, :d], F[..., d:, :d], F[..., :d, d:], F[..., d:, d:])

    @property
    def matrix(self) -> np.ndarray:
        top = np.concatenate([self.dqQ, self.dqP], axis=-1)
        bottom = np.concatenate([self.dpQ, self.dpP], axis=-1)
        return np.concatenate([top, bottom], axis=-2)

    @property
    def dzQ(self) -> np.ndarray:
        return self.dqQ - 1j * self.dpQ

    @property
    def dzP(self) -> np.ndarray:
        return self.dqP - 1j * self.dpP

    @property
    def Z(self) -> np.ndarray:
        return self.dzQ + 1j * self.dzP


@dataclass
class Atom:
    """A single frozen Gaussian, unpacked for inspection."""

    sign: int
    q: np.ndarray
    p: np.ndarray
    Q: np.ndarray
    P: np.ndarray
    a: complex
    var: VariationalState
    weight: complex
    status: int = ALIVE

    @property
    def alive(self) -> bool:
        return self.status == ALIVE


@dataclass
class AtomSet:
    d: int
    sign: np.ndarray        # (n,) float, +1 or -1
    q: np.ndarray           # (n, d)
    p: np.ndarray           # (n, d)
    state: np.ndarray       # (n, state_size(d))
    weight: np.ndarray      # (n,) complex, psi(q, p)
    status: np.ndarray      # (n,) int8
    t: float = 0.0
    census: dict = field(default_factory=dict)
    cell: float = 1.0       # phase-space volume per atom, prod(dq) * prod(dp)

    @classmethod
    def initial(cls, d: int, sign, q, p, weight) -> "AtomSet":
        """Atoms at t = 0: Q = q, P = p, F = I, a = 2^{d/2}."""
        q = np.asarray(q, dtype=float).reshape(-1, d)
        p = np.asarray(p, dtype=float).reshape(-1, d)
        n = len(q)
        sign = np.broadcast_to(np.asarray(sign, dtype=float), (n,)).copy()
        state = np.zeros((n, state_size(d)))
        state[:, :d] = q
        state[:, d:2 * d] = p
        state[:, 2 * d:2 * d + 4 * d * d] = np.eye(2 * d).ravel()
        state[:, -2] = 2.0 ** (d / 2)
        weight = np.broadcast_to(np.asarray(weight, dtype=complex), (n,)).copy()
        return cls(d, sign, q, p, state, weight, np.zeros(n, dtype=np.int8))

    @classmethod
    def empty(cls, d: int) -> "AtomSet":
        return cls.initial(d, np.zeros(0), np.zeros((0, d)), np.zeros((0, d)), np.zeros(0))

    def __len__(self) -> int:
        return len(self.sign)

    def copy(self) -> "AtomSet":
        return AtomSet(self.d, self.sign.copy(), self.q.copy(), self.p.copy(), self.state.copy(),
                       self.weight.copy(), self.status.copy(), self.t, dict(self.census), self.cell)

    def subset(self, idx) -> "AtomSet":
        return AtomSet(self.d, self.sign[idx], self.q[idx], self.p[idx], self.state[idx],
                       self.weight[idx], self.status[idx], self.t, dict(self.census), self.cell)

    @staticmethod
    def concatenate(sets) -> "AtomSet":
        sets = list(sets)
        d = sets[0].d
        return AtomSet(
            d,
            np.concatenate([s.sign for s in sets]),
            np.concatenate([s.q for s in sets]),
            np.concatenate([s.p for s in sets]),
            np.concatenate([s.state for s in sets]),
            np.concatenate([s.weight for s in sets]),
            np.concatenate([s.status for s in sets]),
            sets[0].t,
            cell=sets[0].cell,
        )

    @property
    def Q(self) -> np.ndarray:
        return self.state[:, :self.d]

    @property
    def P(self) -> np.ndarray:
        return self.state[:, self.d:2 * self.d]

    @property
    def F(self) -> np.ndarray:
        d = self.d
        return self.state[:, 2 * d:2 * d + 4 * d * d].reshape(-1, 2 * d, 2 * d)

    @property
    def a(self) -> np.ndarray:
        return self.state[:, -2] + 1j * self.state[:, -1]

    @property
    def var(self) -> VariationalState:
        return VariationalState.from_matrix(self.F)

    @property
    def alive(self) -> np.ndarray:
        return self.status == ALIVE

    def __getitem__(self, i: int) -> Atom:
        F = self.F[i]
        return Atom(int(self.sign[i]), self.q[i].copy(), self.p[i].copy(), self.Q[i].copy(),
                    self.P[i].copy(), complex(self.a[i]), VariationalState.from_matrix(F.copy()),
                    complex(self.weight[i]), int(self.status[i]))

    def dead_census(self) -> dict:
        out = {}
        for code, name in STATUS_NAMES.items():
            if code != ALIVE:
                out[name] = int(np.count_nonzero(self.status == code))
        return out

    def save(self, path) -> None:
        np.savez(path, d=self.d, sign=self.sign, q=self.q, p=self.p, state=self.state, weight=self.weight,
                 status=self.status, t=self.t, cell=self.cell)

    @classmethod
    def load(cls, path) -> "AtomSet":
        with np.load(path) as z:
            return cls(int(z["d"]), z["sign"], z["q"], z["p"], z["state"], z["weight"], z["status"],
                       float(z["t"]), {}, float(z["cell"]))
