"""Wave problem definition: domain, wave speed and WKB initial data."""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .expr import (
    ComplexExpr,
    DomainError,
    Expr,
    evaluate,
    gradient,
    hessian,
    max_variable,
    parse_expression,
    to_source,
)


class NonPositiveSpeed(ValueError):
    pass


@dataclass(frozen=True)
class SpeedField:
    """Wave speed c(x) with its symbolic gradient and Hessian."""

    value: Expr
    d: int
    grad: tuple = field(init=False)
    hess: tuple = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "grad", tuple(gradient(self.value, self.d)))
        object.__setattr__(self, "hess", tuple(tuple(row) for row in hessian(self.value, self.d)))

    @classmethod
    def parse(cls, src: str, d: int) -> "SpeedField":
        e = parse_expression(src)
        if max_variable(e) >= d:
            raise ValueError(f"speed {src!r} uses more than {d} coordinates")
        return cls(e, d)

    @property
    def is_constant(self) -> bool:
        return max_variable(self.value) < 0

    def evaluate(self, X: np.ndarray):
        """Vectorised (c, grad, hess) at points ``X`` of shape (..., d).

        The Hessian is filled from its upper triangle, so it is symmetric by
        construction.  Used on the Python side; the kernels use :meth:`source`.
        """
        X = np.asarray(X, dtype=float)
        coords = [X[..., i] for i in range(self.d)]
        shape = X.shape[:-1]
        c = np.broadcast_to(evaluate(self.value, *coords), shape).astype(float)
        g = np.empty(shape + (self.d,))
        H = np.empty(shape + (self.d, self.d))
        for i in range(self.d):
            g[..., i] = evaluate(self.grad[i], *coords)
            for j in range(i, self.d):
                H[..., i, j] = evaluate(self.hess[i][j], *coords)
                H[..., j, i] = H[..., i, j]
        return c, g, H

    @cached_property
    def source(self) -> str:
        """Python source of ``speed_into(x, g, H) -> c`` for one point.

        Valid both as plain Python and under numba; domain checks on ``abs``
        kinks are not performed in this path.
        """
        d = self.d
        lines = ["def speed_into(x, g, H):"]
        for i in range(d):
            lines.append(f"    x{i + 1} = x[{i}]")
        for i in range(d):
            lines.append(f"    g[{i}] = {to_source(self.grad[i])}")
        for i in range(d):
            for j in range(i, d):
                lines.append(f"    H[{i}, {j}] = {to_source(self.hess[i][j])}")
                if j != i:
                    lines.append(f"    H[{j}, {i}] = H[{i}, {j}]")
        lines.append(f"    return {to_source(self.value)} + 0.0")
        return "\n".join(lines) + "\n"

    def python_function(self):
        namespace = {"np": np}
        exec(self.source, namespace)
        return namespace["speed_into"]


def eval_speed(s: SpeedField, x) -> tuple[float, np.ndarray, np.ndarray]:
    """c, grad c and the Hessian of c at a single point ``x``."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if x.shape != (s.d,) or not np.all(np.isfinite(x)):
        raise ValueError(f"expected a finite point in R^{s.d}, got {x!r}")
    c, g, H = s.evaluate(x)
    c = float(c)
    if not c > 0:
        raise NonPositiveSpeed(f"wave speed c={c} at x={x.tolist()} is not positive")
    return c, g, H


@dataclass(frozen=True)
class Box:
    lo: tuple
    hi: tuple

    def __post_init__(self):
        if len(self.lo) != len(self.hi) or any(h <= l for l, h in zip(self.lo, self.hi)):
            raise ValueError(f"box {self.lo} -> {self.hi} has no volume")

    @property
    def d(self) -> int:
        return len(self.lo)


@dataclass(frozen=True)
class WaveProblem:
    """u_tt = c^2 Δu with u(0) = A0 e^{iS0/ε} and u_t(0) = B0/ε e^{iS0/ε}."""

    d: int
    epsilon: float
    box: Box
    speed: SpeedField
    A0: ComplexExpr
    B0: ComplexExpr
    S0: Expr

    def __post_init__(self):
        if self.d not in (1, 2):
            raise ValueError("only d = 1 or 2 is supported")
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        if self.box.d != self.d or self.speed.d != self.d:
            raise ValueError("box/speed dimension does not match d")
        for name, e in (("S0", self.S0), ("A0.re", self.A0.re), ("A0.im", self.A0.im),
                        ("B0.re", self.B0.re), ("B0.im", self.B0.im)):
            if max_variable(e) >= self.d:
                raise ValueError(f"{name} uses more than {self.d} coordinates")

    @classmethod
    def from_strings(cls, *, d, epsilon, lo, hi, speed, S0, A0, B0=("0", "0")):
        """Build a problem from expression text; ``A0``/``B0`` are (re, im) pairs."""
        return cls(
            d=d,
            epsilon=float(epsilon),
            box=Box(tuple(float(v) for v in lo), tuple(float(v) for v in hi)),
            speed=SpeedField.parse(speed, d),
            A0=ComplexExpr.parse(*A0),
            B0=ComplexExpr.parse(*B0),
            S0=parse_expression(S0),
        )

    def with_epsilon(self, epsilon: float) -> "WaveProblem":
        return WaveProblem(self.d, float(epsilon), self.box, self.speed, self.A0, self.B0, self.S0)

    def scaled(self, lam: complex) -> "WaveProblem":
        """Same problem with A0 and B0 multiplied by ``lam``."""
        return WaveProblem(self.d, self.epsilon, self.box, self.speed,
                           self.A0.scaled(lam), self.B0.scaled(lam), self.S0)

    @cached_property
    def S0_grad(self) -> tuple:
        return tuple(gradient(self.S0, self.d))

    @cached_property
    def S0_hess(self) -> tuple:
        return tuple(tuple(r) for r in hessian(self.S0, self.d))

    def grad_S0(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        coords = [X[..., i] for i in range(self.d)]
        return np.stack([np.broadcast_to(evaluate(g, *coords), X.shape[:-1]) for g in self.S0_grad], axis=-1)

    def initial_data(self, X: np.ndarray):
        """(u0, u_t0) sampled at points ``X`` of shape (..., d)."""
        X = np.asarray(X, dtype=float)
        coords = [X[..., i] for i in range(self.d)]
        phase = np.exp(1j * evaluate(self.S0, *coords) / self.epsilon)
        A = np.broadcast_to(self.A0(*coords), X.shape[:-1])
        B = np.broadcast_to(self.B0(*coords), X.shape[:-1])
        return A * phase, B * phase / self.epsilon


__all__ = ["SpeedField", "WaveProblem", "Box", "eval_speed", "NonPositiveSpeed", "DomainError"]
