"""Polytope and zonotope calculus for constraint tightening and error tubes.

Polytopes are kept in halfspace form ``{x : F x <= g}``; disturbance sets,
error tubes and invariant sets are zonotopes ``{c + G xi : |xi|_inf <= 1}``.
Every operation needed by the planner and tracker reduces to support
functions, which are closed-form for zonotopes and one LP for polytopes.
"""

from __future__ import annotations

import itertools
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .linalg import as_matrix, spectral_radius
from .optim import LinearProgram, Status, solve_lp
from .settings import DEFAULT_SETTINGS, NumericSettings


class EmptySetError(ValueError):
    pass


class MrpiError(RuntimeError):
    """The error dynamics are not contractive enough to reach the requested alpha."""


def _readonly(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


class HPolytope:
    """Convex polyhedron ``{x : F x <= g}``.

    Rows of ``F`` must be nonzero.  Emptiness is decided by an LP the first
    time :attr:`is_empty` is read and cached afterwards.
    """

    def __init__(self, F, g):
        F = as_matrix(F, "F")
        g = np.asarray(g, dtype=float).reshape(-1)
        if F.shape[0] < 1:
            raise ValueError("a polytope needs at least one halfspace")
        if g.size != F.shape[0]:
            raise ValueError(f"F has {F.shape[0]} rows but g has {g.size} entries")
        if np.any(np.all(F == 0, axis=1)):
            raise ValueError("halfspace normals must be nonzero")
        if np.any(np.isnan(g)) or np.any(g == np.inf):
            raise ValueError("offsets must be finite or -inf")
        self.F = _readonly(F)
        self.g = _readonly(g)
        self._empty: bool | None = None

    @classmethod
    def box(cls, lo, hi) -> "HPolytope":
        lo = np.asarray(lo, dtype=float).reshape(-1)
        hi = np.asarray(hi, dtype=float).reshape(-1)
        n = lo.size
        eye = np.eye(n)
        return cls(np.vstack([eye, -eye]), np.concatenate([hi, -lo]))

    @property
    def dim(self) -> int:
        return self.F.shape[1]

    @property
    def n_faces(self) -> int:
        return self.F.shape[0]

    def contains(self, x, tol: float = DEFAULT_SETTINGS.membership_tol) -> bool:
        x = np.asarray(x, dtype=float).reshape(-1)
        return bool(np.all(self.F @ x <= self.g + tol))

    def violation(self, x) -> float:
        """Largest ``F x - g`` entry (<= 0 inside the set)."""
        return float(np.max(self.F @ np.asarray(x, dtype=float) - self.g))

    @property
    def is_empty(self) -> bool:
        if self._empty is None:
            if np.any(np.isneginf(self.g)):
                self._empty = True
            else:
                res = solve_lp(LinearProgram(np.zeros(self.dim), self.F, self.g))
                self._empty = res.status is Status.INFEASIBLE
        return self._empty

    def support(self, a) -> float:
        return support_polytope(self, a)

    def intersect(self, other: "HPolytope") -> "HPolytope":
        return HPolytope(np.vstack([self.F, other.F]), np.concatenate([self.g, other.g]))

    def to_dict(self) -> dict:
        return {"F": self.F.tolist(), "g": self.g.tolist()}

    def __eq__(self, other) -> bool:
        return isinstance(other, HPolytope) and np.array_equal(self.F, other.F) and np.array_equal(self.g, other.g)

    def __repr__(self) -> str:
        return f"HPolytope(dim={self.dim}, faces={self.n_faces})"


class Zonotope:
    """Centrally symmetric set ``{center + G xi : |xi|_inf <= 1}``.

    ``generators`` is an (n, p) array whose columns are the generators; an
    empty generator list is the singleton ``{center}``.
    """

    def __init__(self, center, generators=None):
        c = np.asarray(center, dtype=float).reshape(-1)
        if generators is None:
            G = np.zeros((c.size, 0))
        else:
            G = np.asarray(generators, dtype=float)
            if G.ndim == 1:
                G = G.reshape(c.size, -1)
            if G.shape[0] != c.size:
                raise ValueError(f"generators have {G.shape[0]} rows, center has {c.size}")
        if not (np.all(np.isfinite(c)) and np.all(np.isfinite(G))):
            raise ValueError("zonotope data must be finite")
        self.center = _readonly(c)
        self.G = _readonly(G)

    @classmethod
    def box(cls, half_widths, center=None) -> "Zonotope":
        h = np.asarray(half_widths, dtype=float).reshape(-1)
        if np.any(h < 0):
            raise ValueError("half widths must be non-negative")
        c = np.zeros(h.size) if center is None else np.asarray(center, dtype=float)
        keep = h > 0
        return cls(c, np.diag(h)[:, keep])

    @classmethod
    def point(cls, x) -> "Zonotope":
        return cls(x)

    @property
    def dim(self) -> int:
        return self.center.size

    @property
    def n_gens(self) -> int:
        return self.G.shape[1]

    def support(self, a) -> float:
        return support_zonotope(self, a)

    def support_rows(self, D) -> np.ndarray:
        """Support values for every row of ``D`` at once."""
        D = np.asarray(D, dtype=float)
        return D @ self.center + np.abs(D @ self.G).sum(axis=1)

    def half_widths(self) -> np.ndarray:
        """Half widths of the smallest axis-aligned box around the set."""
        return np.abs(self.G).sum(axis=1)

    def __add__(self, other: "Zonotope") -> "Zonotope":
        return minkowski_sum(self, other)

    def scale(self, factor: float) -> "Zonotope":
        return Zonotope(factor * self.center, abs(factor) * self.G)

    def map(self, C) -> "Zonotope":
        return linear_map(C, self)

    def merged(self, tol: float = 1e-12) -> "Zonotope":
        """Same set with parallel generators combined and zero generators dropped."""
        return Zonotope(self.center, merge_parallel(self.G, tol))

    def contains(self, x, tol: float = DEFAULT_SETTINGS.membership_tol) -> bool:
        return zonotope_contains(self, x, tol)

    def to_dict(self) -> dict:
        return {"center": self.center.tolist(), "generators": self.G.T.tolist()}

    def __eq__(self, other) -> bool:
        return isinstance(other, Zonotope) and np.array_equal(self.center, other.center) and np.array_equal(self.G, other.G)

    def __repr__(self) -> str:
        return f"Zonotope(dim={self.dim}, gens={self.n_gens})"


@dataclass
class Obstacle:
    """Bounded polytope ``{y : E y <= f}`` in output space plus per-mode enlarged offsets.

    Points strictly inside the polytope collide; the boundary is safe.
    """

    base: HPolytope
    name: str = ""
    enlarged: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        for i in range(self.base.dim):
            e = np.zeros(self.base.dim)
            e[i] = 1.0
            if not (np.isfinite(support_polytope(self.base, e)) and np.isfinite(support_polytope(self.base, -e))):
                raise ValueError(f"obstacle {self.name!r} is unbounded along axis {i}")

    @property
    def E(self) -> np.ndarray:
        return self.base.F

    @property
    def f(self) -> np.ndarray:
        return self.base.g

    def set_enlarged(self, mode: str, offsets) -> None:
        offsets = np.asarray(offsets, dtype=float)
        if offsets.shape != self.f.shape or np.any(offsets < self.f - 1e-12):
            raise ValueError("enlarged offsets must be at least the base offsets")
        self.enlarged[mode] = _readonly(offsets.copy())

    def margin(self, y, offsets=None) -> float:
        """max_a (E_a y - f_a); >= 0 means outside or on the boundary."""
        f = self.f if offsets is None else offsets
        return float(np.max(self.E @ np.asarray(y, dtype=float) - f))

    def avoided_by(self, y, offsets=None) -> bool:
        return self.margin(y, offsets) >= 0.0


def support_zonotope(Z: Zonotope, a) -> float:
    """h_Z(a) = a'c + sum_i |a'g_i|."""
    a = np.asarray(a, dtype=float).reshape(-1)
    if a.size != Z.dim:
        raise ValueError(f"direction has length {a.size}, zonotope is {Z.dim}-D")
    return float(a @ Z.center + np.abs(a @ Z.G).sum())


def support_polytope(P: HPolytope, a, settings: NumericSettings = DEFAULT_SETTINGS) -> float:
    """max a'x over P; ``inf`` when unbounded in direction ``a``.

    Raises
    ------
    EmptySetError
        If ``P`` is empty.
    """
    a = np.asarray(a, dtype=float).reshape(-1)
    if a.size != P.dim:
        raise ValueError(f"direction has length {a.size}, polytope is {P.dim}-D")
    res = solve_lp(LinearProgram(-a, P.F, P.g), settings)
    if res.status is Status.OPTIMAL:
        return -res.objective
    if res.status is Status.UNBOUNDED:
        return math.inf
    if res.status is Status.INFEASIBLE:
        raise EmptySetError("support function of an empty polytope")
    raise RuntimeError(f"support LP failed: {res.status}")


def minkowski_sum(A: Zonotope, B: Zonotope) -> Zonotope:
    if A.dim != B.dim:
        raise ValueError("dimension mismatch in Minkowski sum")
    return Zonotope(A.center + B.center, np.hstack([A.G, B.G]))


def linear_map(C, Z: Zonotope) -> Zonotope:
    C = as_matrix(C, "C")
    if C.shape[1] != Z.dim:
        raise ValueError(f"map has {C.shape[1]} columns, zonotope is {Z.dim}-D")
    return Zonotope(C @ Z.center, C @ Z.G)


def pontryagin_diff(P: HPolytope, S: Zonotope) -> HPolytope:
    """Exact difference ``{x : x + S subset of P}`` for a halfspace polytope.

    The result may be empty; check :attr:`HPolytope.is_empty`.
    """
    if P.dim != S.dim:
        raise ValueError("dimension mismatch in Pontryagin difference")
    return HPolytope(P.F, P.g - S.support_rows(P.F))


def enlarge_obstacle(O: HPolytope, S: Zonotope) -> np.ndarray:
    """Offsets ``f'`` with ``{E y <= f'}`` containing ``O + S``."""
    if O.dim != S.dim:
        raise ValueError("dimension mismatch in obstacle enlargement")
    return O.g + S.support_rows(O.F)


def merge_parallel(G: np.ndarray, tol: float = 1e-12) -> np.ndarray:
    """Combine parallel generator columns (exact: |a'g1| + |a'g2| = |a'(g1 +- g2)|).

    Merged columns keep the order of their first member.
    """
    G = np.asarray(G, dtype=float)
    norms = np.linalg.norm(G, axis=0)
    keep = np.flatnonzero(norms > tol)
    if keep.size == 0:
        return np.zeros((G.shape[0], 0))
    G = G[:, keep]
    U = G / norms[keep]
    # orient each direction so its first clearly nonzero entry is positive
    pivot = np.argmax(np.abs(U) > 1e-9, axis=0)
    sign = np.where(U[pivot, np.arange(U.shape[1])] < 0, -1.0, 1.0)
    U, G = U * sign, G * sign
    # group on a 1e-10 grid; a missed merge only leaves an extra generator
    keys = np.round(U * 1e10).astype(np.int64)
    _, first, group = np.unique(keys, axis=1, return_index=True, return_inverse=True)
    out = np.zeros((G.shape[0], first.size))
    np.add.at(out.T, group.ravel(), G.T)
    return out[:, np.argsort(first)]


def zonotope_facets(Z: Zonotope, max_combinations: int = 200_000) -> HPolytope:
    """Exact halfspace form of a full-dimensional zonotope.

    Every facet normal is orthogonal to some n-1 linearly independent
    generators, so enumerating those subsets yields all facets.
    """
    n = Z.dim
    G = merge_parallel(Z.G)
    p = G.shape[1]
    if p < n or np.linalg.matrix_rank(G) < n:
        raise ValueError("zonotope is not full-dimensional")
    if n == 1:
        normals = np.array([[1.0]])
    else:
        if math.comb(p, n - 1) > max_combinations:
            raise ValueError(f"too many generator subsets ({math.comb(p, n - 1)}) for facet enumeration")
        found = []
        for subset in itertools.combinations(range(p), n - 1):
            sub = G[:, subset]
            # normal = last left-singular vector when the subset has rank n-1
            U, sv, _ = np.linalg.svd(sub, full_matrices=True)
            if sv.size and sv[-1] < 1e-10 * max(sv[0], 1e-300):
                continue
            a = U[:, -1]
            pivot = np.flatnonzero(np.abs(a) > 1e-9)[0]
            found.append(a if a[pivot] > 0 else -a)
        normals = np.unique(np.round(np.array(found), 12), axis=0)
    F = np.vstack([normals, -normals])
    return HPolytope(F, Z.support_rows(F))


def zonotope_contains(Z: Zonotope, x, tol: float = DEFAULT_SETTINGS.membership_tol) -> bool:
    """True iff ``x`` is within ``tol`` (infinity norm) of ``Z``.

    Solves min r s.t. |x - c - G xi|_inf <= r, |xi|_inf <= 1.
    """
    x = np.asarray(x, dtype=float).reshape(-1)
    if x.size != Z.dim:
        raise ValueError("dimension mismatch in membership test")
    d = x - Z.center
    p = Z.n_gens
    if p == 0:
        return bool(np.max(np.abs(d), initial=0.0) <= tol)
    if np.all(np.abs(d) <= tol):
        return True
    n = Z.dim
    # variables: xi (p), r
    c = np.zeros(p + 1)
    c[-1] = 1.0
    ones = np.ones((n, 1))
    G_ineq = np.vstack([np.hstack([Z.G, -ones]), np.hstack([-Z.G, -ones])])
    h_ineq = np.concatenate([d, -d])
    lb = np.concatenate([-np.ones(p), [0.0]])
    ub = np.concatenate([np.ones(p), [np.inf]])
    res = solve_lp(LinearProgram(c, G_ineq, h_ineq, lb=lb, ub=ub))
    if not res.optimal:
        raise RuntimeError(f"membership LP failed: {res.status}")
    return bool(res.objective <= tol)


def _check_schur(A_K: np.ndarray) -> None:
    rho = spectral_radius(A_K)
    if rho >= 1.0:
        warnings.warn(f"A_K is not Schur stable (spectral radius {rho:.6g})", RuntimeWarning, stacklevel=3)


def _check_centered(W: Zonotope) -> None:
    if np.any(W.center != 0):
        raise ValueError("W must be origin-centered")


def error_tube(A_K, W: Zonotope, j_max: int) -> list[Zonotope]:
    """E(0) = {0}, E(j+1) = A_K E(j) + W for j < j_max."""
    A_K = as_matrix(A_K, "A_K")
    _check_schur(A_K)
    _check_centered(W)
    tube = [Zonotope(np.zeros(W.dim))]
    gens = np.zeros((W.dim, 0))
    for _ in range(j_max):
        gens = np.hstack([A_K @ gens, W.G])
        tube.append(Zonotope(np.zeros(W.dim), gens))
    return tube


def contraction_factor(A_K, W: Zonotope, s: int, facets: HPolytope | None = None) -> float:
    """Smallest alpha with A_K^s W contained in alpha W (exact, via facets of W)."""
    A_K = as_matrix(A_K, "A_K")
    if facets is None:
        facets = zonotope_facets(W)
    AsG = np.linalg.matrix_power(A_K, s) @ W.G
    num = np.abs(facets.F @ AsG).sum(axis=1)
    return float(np.max(num / facets.g))


@dataclass(frozen=True)
class MrpiResult:
    Z: Zonotope
    s: int
    alpha: float


def mrpi_outer(
    A_K,
    W: Zonotope,
    alpha_target: float = DEFAULT_SETTINGS.mrpi_alpha_target,
    min_s: int = 1,
    max_s: int = DEFAULT_SETTINGS.mrpi_max_s,
) -> MrpiResult:
    """Outer approximation of the minimal robust positive invariant set.

    Finds the smallest ``s >= min_s`` with ``A_K^s W`` inside ``alpha W`` for
    some ``alpha <= alpha_target`` and returns
    ``Z = 1/(1 - alpha) * sum_{j<s} A_K^j W``, which satisfies
    ``A_K Z + W`` inside ``Z``.

    Raises
    ------
    MrpiError
        If no such ``s`` exists up to ``max_s``.
    """
    A_K = as_matrix(A_K, "A_K")
    if not 0 < alpha_target < 1:
        raise ValueError("alpha_target must lie in (0, 1)")
    _check_schur(A_K)
    _check_centered(W)
    facets = zonotope_facets(W)
    AsG = W.G.copy()
    acc = [W.G]
    for s in range(1, max_s + 1):
        AsG = A_K @ AsG
        if s >= min_s:
            alpha = float(np.max(np.abs(facets.F @ AsG).sum(axis=1) / facets.g))
            if alpha <= alpha_target:
                Z = Zonotope(np.zeros(W.dim), np.hstack(acc) / (1.0 - alpha))
                return MrpiResult(Z, s, alpha)
        acc.append(AsG)
    raise MrpiError(
        f"A_K^s W not inside {alpha_target} W for any s <= {max_s}; "
        f"spectral radius of A_K is {spectral_radius(A_K):.4g}"
    )


def tube_margin(A_K, W: Zonotope, s: int, alpha: float, j: int) -> Zonotope:
    """Zonotope D_j with E(j) + D_j contained in Z (equal to Z when j <= s).

    For ``j <= s`` this is
    ``sum_{m<j} (beta-1) A_K^m W + sum_{j<=m<s} beta A_K^m W`` with
    ``beta = 1/(1-alpha)``.  Beyond ``s`` the tube keeps growing, so the margin
    becomes ``(beta - gamma_j) E(s)`` where ``gamma_j`` bounds E(j) by
    ``gamma_j E(s)``.
    """
    if j < 0:
        raise ValueError("j must be non-negative")
    A_K = as_matrix(A_K, "A_K")
    beta = 1.0 / (1.0 - alpha)
    powers = [W.G]
    for _ in range(1, s):
        powers.append(A_K @ powers[-1])
    if j <= s:
        parts = [(beta - 1.0) * powers[m] for m in range(j)] + [beta * powers[m] for m in range(j, s)]
    else:
        gamma = sum(alpha**t for t in range(math.ceil(j / s)))
        parts = [(beta - gamma) * P for P in powers]
    return Zonotope(np.zeros(W.dim), np.hstack(parts) if parts else None)
