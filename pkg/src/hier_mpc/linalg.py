"""Dense linear algebra for the plant and planning models.

Matrices are plain ``numpy.ndarray`` objects (2-D, float).  Everything here is a
pure function of its inputs.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .settings import DEFAULT_SETTINGS, NumericSettings


class ControllabilityWarning(UserWarning):
    """Raised (as a warning) when a pair (A, B) loses controllability."""


class RiccatiDivergence(RuntimeError):
    pass


def as_matrix(a, name: str = "matrix") -> np.ndarray:
    """Coerce scalars / vectors / nested lists into a finite 2-D float array."""
    arr = np.array(a, dtype=float, ndmin=2)
    if arr.ndim != 2:
        raise ValueError(f"{name} must be 2-D, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} has non-finite entries")
    return arr


def _require_square(A: np.ndarray, name: str = "A") -> None:
    if A.shape[0] != A.shape[1]:
        raise ValueError(f"{name} must be square, got shape {A.shape}")


@dataclass(frozen=True)
class LtiModel:
    """Discrete-time model x+ = A x + B u, y = C x sampled every ``dt`` seconds."""

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    dt: float

    def __post_init__(self):
        A = as_matrix(self.A, "A")
        B = as_matrix(self.B, "B")
        C = as_matrix(self.C, "C")
        _require_square(A)
        if B.shape[0] != A.shape[0]:
            raise ValueError(f"B has {B.shape[0]} rows, A is {A.shape[0]}x{A.shape[0]}")
        if C.shape[1] != A.shape[0]:
            raise ValueError(f"C has {C.shape[1]} columns, expected {A.shape[0]}")
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        for name, arr in (("A", A), ("B", B), ("C", C)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def m(self) -> int:
        return self.B.shape[1]

    @property
    def p(self) -> int:
        return self.C.shape[0]

    def is_controllable(self) -> bool:
        return controllability_rank(self.A, self.B) == self.n


def mat_power(A, M: int) -> np.ndarray:
    """Return ``A**M`` by repeated squaring; ``A**0`` is the identity."""
    A = as_matrix(A, "A")
    _require_square(A)
    if M < 0:
        raise ValueError("power must be non-negative")
    result = np.eye(A.shape[0])
    base = A.copy()
    while M:
        if M & 1:
            result = result @ base
        M >>= 1
        if M:
            base = base @ base
    return result


def controllability_rank(A, B) -> int:
    A = as_matrix(A, "A")
    B = as_matrix(B, "B")
    n = A.shape[0]
    blocks = [B]
    for _ in range(n - 1):
        blocks.append(A @ blocks[-1])
    return int(np.linalg.matrix_rank(np.hstack(blocks)))


def input_rollout_matrix(A, B, steps: int) -> np.ndarray:
    """sum_{i=0}^{steps-1} A^i B, the response to a constant input held ``steps`` samples."""
    A = as_matrix(A, "A")
    B = as_matrix(B, "B")
    acc = np.zeros_like(B)
    term = B.copy()
    for _ in range(steps):
        acc = acc + term
        term = A @ term
    return acc


def planning_model(model: LtiModel, M: int) -> tuple[np.ndarray, np.ndarray]:
    """Coarse model obtained by holding the input for ``M`` fine steps.

    Returns ``(A_p, B_p)`` with ``A_p = A^M`` and ``B_p = sum_{i<M} A^i B``.  A
    :class:`ControllabilityWarning` is emitted if the coarse pair is not
    controllable (sampling can destroy controllability even when (A, B) has it).
    """
    if M < 2:
        raise ValueError("planning must be slower than tracking: M >= 2")
    A_p = mat_power(model.A, M)
    B_p = input_rollout_matrix(model.A, model.B, M)
    if controllability_rank(A_p, B_p) < model.n:
        warnings.warn(f"(A_p, B_p) is not controllable for M={M}", ControllabilityWarning, stacklevel=2)
    return A_p, B_p


def expm_series(X: np.ndarray, term_tol: float = 1e-14) -> np.ndarray:
    """Matrix exponential by scaling and squaring around a truncated Taylor series."""
    X = as_matrix(X, "X")
    _require_square(X)
    norm = np.linalg.norm(X, 1)
    squarings = max(0, int(np.ceil(np.log2(norm / 0.5)))) if norm > 0.5 else 0
    Xs = X / (2.0**squarings)
    result = np.eye(X.shape[0])
    term = np.eye(X.shape[0])
    k = 1
    while True:
        term = term @ Xs / k
        result = result + term
        if np.max(np.abs(term)) < term_tol:
            break
        k += 1
        if k > 200:
            break
    for _ in range(squarings):
        result = result @ result
    return result


def discretize_zoh(Ac, Bc, dt: float, settings: NumericSettings = DEFAULT_SETTINGS):
    """Exact zero-order-hold discretization.

    Uses ``expm([[Ac, Bc], [0, 0]] * dt)``; the upper blocks are ``(A, B)``.
    """
    Ac = as_matrix(Ac, "Ac")
    Bc = as_matrix(Bc, "Bc")
    _require_square(Ac, "Ac")
    if Bc.shape[0] != Ac.shape[0]:
        raise ValueError(f"Bc has {Bc.shape[0]} rows, Ac is {Ac.shape[0]}x{Ac.shape[0]}")
    if not dt > 0:
        raise ValueError("dt must be positive")
    n, m = Bc.shape
    aug = np.zeros((n + m, n + m))
    aug[:n, :n] = Ac
    aug[:n, n:] = Bc
    E = expm_series(aug * dt, settings.expm_term_tol)
    return E[:n, :n], E[:n, n:]


def spectral_radius(A) -> float:
    """Largest eigenvalue magnitude of a square matrix."""
    A = as_matrix(A, "A")
    _require_square(A)
    if A.size == 0:
        return 0.0
    return float(np.max(np.abs(np.linalg.eigvals(A))))


def riccati_fixed_point(A, B, Q, R, settings: NumericSettings = DEFAULT_SETTINGS) -> np.ndarray:
    """Iterate the discrete Riccati map from P = Q until successive iterates agree."""
    A = as_matrix(A, "A")
    B = as_matrix(B, "B")
    Q = as_matrix(Q, "Q")
    R = as_matrix(R, "R")
    P = Q.copy()
    for _ in range(settings.riccati_max_iter):
        BtP = B.T @ P
        gain = np.linalg.solve(R + BtP @ B, BtP @ A)
        P_next = Q + A.T @ P @ A - (A.T @ P @ B) @ gain
        P_next = 0.5 * (P_next + P_next.T)
        if np.max(np.abs(P_next - P)) < settings.riccati_tol:
            return P_next
        P = P_next
    raise RiccatiDivergence(f"Riccati iteration did not converge in {settings.riccati_max_iter} steps")


def lqr_gain(A, B, Qk, Rk, settings: NumericSettings = DEFAULT_SETTINGS) -> np.ndarray:
    """Infinite-horizon discrete LQR gain with the convention ``u = K x``.

    Parameters
    ----------
    A, B : array_like
        Controllable discrete-time pair.
    Qk : array_like
        Positive semidefinite state weight.
    Rk : array_like
        Positive definite input weight.

    Returns
    -------
    numpy.ndarray
        ``K`` of shape (m, n); ``A + B K`` is Schur stable.
    """
    A = as_matrix(A, "A")
    B = as_matrix(B, "B")
    Qk = as_matrix(Qk, "Qk")
    Rk = as_matrix(Rk, "Rk")
    if np.min(np.linalg.eigvalsh(0.5 * (Rk + Rk.T))) <= 0:
        raise ValueError("Rk must be positive definite")
    if np.min(np.linalg.eigvalsh(0.5 * (Qk + Qk.T))) < -1e-12:
        raise ValueError("Qk must be positive semidefinite")
    P = riccati_fixed_point(A, B, Qk, Rk, settings)
    return -np.linalg.solve(Rk + B.T @ P @ B, B.T @ P @ A)
