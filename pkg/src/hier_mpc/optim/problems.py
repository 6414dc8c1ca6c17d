"""Problem containers and the common result record for all solvers."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np


class Status(str, enum.Enum):
    OPTIMAL = "Optimal"
    INFEASIBLE = "Infeasible"
    UNBOUNDED = "Unbounded"
    ITERATION_LIMIT = "IterationLimit"

    def __str__(self) -> str:
        return self.value


def _vec(v, size: int, fill: float, name: str) -> np.ndarray:
    if v is None:
        return np.full(size, fill, dtype=float)
    arr = np.asarray(v, dtype=float).reshape(-1)
    if arr.size == 1 and size != 1:
        arr = np.full(size, float(arr[0]))
    if arr.size != size:
        raise ValueError(f"{name} has length {arr.size}, expected {size}")
    return arr


def _mat(M, cols: int, name: str) -> np.ndarray:
    if M is None:
        return np.zeros((0, cols))
    arr = np.asarray(M, dtype=float)
    if arr.ndim == 1:
        arr = arr.reshape(1, -1) if arr.size else np.zeros((0, cols))
    if arr.shape[1] != cols:
        raise ValueError(f"{name} has {arr.shape[1]} columns, expected {cols}")
    return arr


@dataclass
class LinearProgram:
    """min c'x  s.t.  G x <= h,  A x = b,  lb <= x <= ub."""

    c: np.ndarray
    G: np.ndarray | None = None
    h: np.ndarray | None = None
    A: np.ndarray | None = None
    b: np.ndarray | None = None
    lb: np.ndarray | None = None
    ub: np.ndarray | None = None

    def __post_init__(self):
        self.c = np.asarray(self.c, dtype=float).reshape(-1)
        n = self.c.size
        if not np.all(np.isfinite(self.c)):
            raise ValueError("cost vector must be finite")
        self.G = _mat(self.G, n, "G")
        self.h = _vec(self.h, self.G.shape[0], 0.0, "h")
        self.A = _mat(self.A, n, "A")
        self.b = _vec(self.b, self.A.shape[0], 0.0, "b")
        self.lb = _vec(self.lb, n, -np.inf, "lb")
        self.ub = _vec(self.ub, n, np.inf, "ub")

    @property
    def n(self) -> int:
        return self.c.size

    def objective(self, x) -> float:
        return float(self.c @ x)

    def max_violation(self, x) -> float:
        """Largest constraint violation of ``x`` (0 when feasible)."""
        x = np.asarray(x, dtype=float)
        parts = [0.0]
        if self.G.shape[0]:
            parts.append(np.max(self.G @ x - self.h))
        if self.A.shape[0]:
            parts.append(np.max(np.abs(self.A @ x - self.b)))
        parts.append(np.max(self.lb - x, initial=0.0))
        parts.append(np.max(x - self.ub, initial=0.0))
        return float(max(parts))


@dataclass
class QuadraticProgram:
    """min 1/2 x'Hx + q'x  s.t.  G x <= h,  A x = b,  lb <= x <= ub."""

    H: np.ndarray
    q: np.ndarray
    G: np.ndarray | None = None
    h: np.ndarray | None = None
    A: np.ndarray | None = None
    b: np.ndarray | None = None
    lb: np.ndarray | None = None
    ub: np.ndarray | None = None

    def __post_init__(self):
        self.q = np.asarray(self.q, dtype=float).reshape(-1)
        n = self.q.size
        self.H = np.asarray(self.H, dtype=float).reshape(n, n)
        if not np.allclose(self.H, self.H.T, atol=1e-12, rtol=0):
            raise ValueError("H must be symmetric")
        self.G = _mat(self.G, n, "G")
        self.h = _vec(self.h, self.G.shape[0], 0.0, "h")
        self.A = _mat(self.A, n, "A")
        self.b = _vec(self.b, self.A.shape[0], 0.0, "b")
        self.lb = _vec(self.lb, n, -np.inf, "lb")
        self.ub = _vec(self.ub, n, np.inf, "ub")

    @property
    def n(self) -> int:
        return self.q.size

    def check_convex(self, tol: float = 1e-10) -> None:
        if self.n and np.min(np.linalg.eigvalsh(self.H)) < -tol:
            raise ValueError("H is not positive semidefinite")

    def objective(self, x) -> float:
        x = np.asarray(x, dtype=float)
        return float(0.5 * x @ self.H @ x + self.q @ x)


@dataclass
class MixedIntegerLinearProgram:
    """A linear program in which the variables listed in ``binaries`` must be 0 or 1."""

    lp: LinearProgram
    binaries: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))

    def __post_init__(self):
        self.binaries = np.unique(np.asarray(self.binaries, dtype=int).reshape(-1))
        if self.binaries.size and (self.binaries.min() < 0 or self.binaries.max() >= self.lp.n):
            raise ValueError("binary index out of range")
        self.lp.lb[self.binaries] = np.maximum(self.lp.lb[self.binaries], 0.0)
        self.lp.ub[self.binaries] = np.minimum(self.lp.ub[self.binaries], 1.0)


@dataclass
class SolveStatus:
    """Outcome of a solve.

    ``x`` is the primal point (``None`` unless a point is available).  For LPs and
    QPs the multipliers follow the Lagrangian
    ``c'x + ineq'(Gx - h) + eq'(Ax - b) - lower'(x - lb) + upper'(x - ub)``
    with ``ineq, lower, upper >= 0``.
    """

    status: Status
    objective: float = float("nan")
    x: np.ndarray | None = None
    ineq_duals: np.ndarray | None = None
    eq_duals: np.ndarray | None = None
    lower_duals: np.ndarray | None = None
    upper_duals: np.ndarray | None = None
    iterations: int = 0
    nodes: int = 0
    bound: float = float("nan")
    message: str = ""

    @property
    def optimal(self) -> bool:
        return self.status is Status.OPTIMAL
