"""Lower layer: cyclic-horizon tube MPC.

At fine step k the horizon runs to the next planning instant,
``L_k = M - (k mod M)``.  The QP optimizes a nominal trajectory z, v that
starts at the measured state and

* stays in X ⊖ E(j) and U ⊖ K E(j) (E(j) is the error tube after j steps),
* keeps ``C (z_j - x_ref_j)`` inside ``C D_j`` for j < L_k,
* ends with ``z_L - x_ref_L`` inside ``D_L``,

where ``D_j`` is the margin with E(j) + D_j inside Z.  Membership in a
zonotope ``{G xi : |xi| <= 1}`` is written with auxiliary coefficients xi.
The QP data only depend on (mode, L_k); the solver object is cached per
pair and only the linear cost and the equality right-hand side change from
step to step.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .convex_sets import Zonotope, linear_map, merge_parallel, zonotope_contains
from .modes import PreparedMode
from .optim import QPEngine, QuadraticProgram, Status
from .settings import DEFAULT_SETTINGS, NumericSettings
from .vehicle_models import ModelBundle


class EmptyTighteningError(ValueError):
    pass


def cyclic_horizon(k: int, M: int) -> int:
    """L_k = M - (k mod M); equals M exactly at planning instants."""
    if k < 0:
        raise ValueError("k must be non-negative")
    if M < 2:
        raise ValueError("M must be at least 2")
    return M - (k % M)


def _require_pd(Wt: np.ndarray, name: str) -> np.ndarray:
    Wt = np.atleast_2d(np.asarray(Wt, dtype=float))
    try:
        np.linalg.cholesky(0.5 * (Wt + Wt.T))
    except np.linalg.LinAlgError:
        raise ValueError(f"{name} must be positive definite") from None
    return Wt


@dataclass
class TrackerWeights:
    Q: np.ndarray
    R: np.ndarray
    P: np.ndarray

    def __post_init__(self):
        self.Q = _require_pd(self.Q, "Q")
        self.R = _require_pd(self.R, "R")
        self.P = _require_pd(self.P, "P")


@dataclass
class TrackerProblem:
    bundle: ModelBundle
    mode: PreparedMode
    weights: TrackerWeights
    x: np.ndarray
    x_ref: np.ndarray  # rows x_ref(k .. k + L_k)
    k: int

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=float).reshape(-1)
        self.x_ref = np.atleast_2d(np.asarray(self.x_ref, dtype=float))
        L = cyclic_horizon(self.k, self.bundle.M)
        if self.x_ref.shape[0] != L + 1:
            raise ValueError(f"reference window has {self.x_ref.shape[0]} rows, expected L_k + 1 = {L + 1}")

    @property
    def L(self) -> int:
        return cyclic_horizon(self.k, self.bundle.M)


@dataclass
class TrackerResult:
    status: Status
    u: np.ndarray | None = None
    z: np.ndarray | None = None
    v: np.ndarray | None = None
    objective: float = float("nan")
    iterations: int = 0
    solve_time: float = 0.0
    message: str = ""

    @property
    def optimal(self) -> bool:
        return self.status is Status.OPTIMAL


@dataclass
class _Template:
    """Index bookkeeping and the cached solver for one (mode, L)."""

    L: int
    qp: QuadraticProgram
    solver: QPEngine | None
    z: np.ndarray  # (L+1, n)
    v: np.ndarray  # (L, m)
    xi: list[np.ndarray]
    gens: list[np.ndarray]  # generator matrix per xi block (C D_j for j < L, D_L last)
    n_dyn_eq: int
    solved_once: bool = False


def build_tracking_qp(p: TrackerProblem) -> tuple[QuadraticProgram, _Template]:
    """Assemble the tracking QP for the given state and reference window."""
    tpl = _build_template(p.bundle, p.mode, p.weights, p.L)
    q, b = _vectors(tpl, p)
    qp = QuadraticProgram(tpl.qp.H, q, tpl.qp.G, tpl.qp.h, tpl.qp.A, b, tpl.qp.lb, tpl.qp.ub)
    return qp, tpl


def _margin_generators(C: np.ndarray, mode: PreparedMode, L: int, cache: dict | None = None) -> list[np.ndarray]:
    """Merged generators of C D_0..C D_{L-1} and of D_L (memoized in ``cache``)."""
    cache = {} if cache is None else cache
    keys = [("out", j) for j in range(L)] + [("full", L)]
    for kind, j in keys:
        if (kind, j) not in cache:
            G = mode.margins[j].G
            cache[kind, j] = merge_parallel(C @ G if kind == "out" else G)
    return [cache[key] for key in keys]


def _build_template(
    bundle: ModelBundle, mode: PreparedMode, w: TrackerWeights, L: int, merged: dict | None = None
) -> _Template:
    n, m = bundle.n, bundle.m
    A, B, C = bundle.fine.A, bundle.fine.B, bundle.C
    p_out = C.shape[0]
    gens = _margin_generators(C, mode, L, merged)
    nz = (L + 1) * n
    nv = L * m
    nvar = nz + nv + sum(g.shape[1] for g in gens)
    z = np.arange(nz).reshape(L + 1, n)
    v = (nz + np.arange(nv)).reshape(L, m)
    xi = []
    off = nz + nv
    for g in gens:
        xi.append(np.arange(off, off + g.shape[1]))
        off += g.shape[1]

    H = np.zeros((nvar, nvar))
    for j in range(L):
        H[np.ix_(z[j], z[j])] = 2.0 * w.Q
        H[np.ix_(v[j], v[j])] = 2.0 * w.R
    H[np.ix_(z[L], z[L])] = 2.0 * w.P
    H = 0.5 * (H + H.T)

    G_rows, h_rows = [], []
    for j in range(L + 1):
        P = mode.X_tube[j]
        if P.is_empty:
            raise EmptyTighteningError(f"mode {mode.name}: X ⊖ E({j}) is empty")
        blk = np.zeros((P.n_faces, nvar))
        blk[:, z[j]] = P.F
        G_rows.append(blk)
        h_rows.append(P.g)
    for j in range(L):
        P = mode.U_tube[j]
        if P.is_empty:
            raise EmptyTighteningError(f"mode {mode.name}: U ⊖ KE({j}) is empty")
        blk = np.zeros((P.n_faces, nvar))
        blk[:, v[j]] = P.F
        G_rows.append(blk)
        h_rows.append(P.g)

    eq_rows = []
    # z_0 = x
    blk = np.zeros((n, nvar))
    blk[:, z[0]] = np.eye(n)
    eq_rows.append(blk)
    for j in range(L):
        blk = np.zeros((n, nvar))
        blk[:, z[j + 1]] = np.eye(n)
        blk[:, z[j]] = -A
        blk[:, v[j]] = -B
        eq_rows.append(blk)
    n_dyn = (L + 1) * n
    # C z_j - C D_j xi_j = C x_ref_j  (j < L);  z_L - D_L xi_L = x_ref_L
    for j in range(L):
        blk = np.zeros((p_out, nvar))
        blk[:, z[j]] = C
        blk[:, xi[j]] = -gens[j]
        eq_rows.append(blk)
    blk = np.zeros((n, nvar))
    blk[:, z[L]] = np.eye(n)
    blk[:, xi[L]] = -gens[L]
    eq_rows.append(blk)

    lb = np.full(nvar, -np.inf)
    ub = np.full(nvar, np.inf)
    lb[nz + nv :] = -1.0
    ub[nz + nv :] = 1.0
    Aeq = np.vstack(eq_rows)
    qp = QuadraticProgram(H, np.zeros(nvar), np.vstack(G_rows), np.concatenate(h_rows), Aeq, np.zeros(Aeq.shape[0]), lb, ub)
    return _Template(L, qp, None, z, v, xi, gens, n_dyn)


def _vectors(tpl: _Template, p: TrackerProblem) -> tuple[np.ndarray, np.ndarray]:
    w = p.weights
    L = tpl.L
    q = np.zeros(tpl.qp.n)
    for j in range(L):
        q[tpl.z[j]] = -2.0 * w.Q @ p.x_ref[j]
    q[tpl.z[L]] = -2.0 * w.P @ p.x_ref[L]
    C = p.bundle.C
    b = np.concatenate(
        [p.x, np.zeros(tpl.n_dyn_eq - p.bundle.n)]
        + [C @ p.x_ref[j] for j in range(L)]
        + [p.x_ref[L]]
    )
    return q, b


def _constant(p: TrackerProblem) -> float:
    w = p.weights
    L = p.L
    c = sum(float(p.x_ref[j] @ w.Q @ p.x_ref[j]) for j in range(L))
    return c + float(p.x_ref[L] @ w.P @ p.x_ref[L])


class Tracker:
    """Stateful wrapper that caches one QP template per (mode, L)."""

    def __init__(
        self,
        bundle: ModelBundle,
        weights: TrackerWeights,
        settings: NumericSettings = DEFAULT_SETTINGS,
        engine: str = "auto",
    ):
        self.bundle = bundle
        self.weights = weights
        self.settings = settings
        self.engine = engine
        self._templates: dict[tuple[int, int], _Template] = {}
        self._merged: dict[int, dict] = {}

    def template(self, mode: PreparedMode, L: int) -> _Template:
        key = (mode.index, L)
        if key not in self._templates:
            merged = self._merged.setdefault(mode.index, {})
            tpl = _build_template(self.bundle, mode, self.weights, L, merged)
            tpl.solver = QPEngine(tpl.qp, self.settings, self.engine)
            self._templates[key] = tpl
        return self._templates[key]

    def step(self, mode: PreparedMode, x, x_ref, k: int) -> TrackerResult:
        p = TrackerProblem(self.bundle, mode, self.weights, x, x_ref, k)
        return control_step(p, self)


def control_step(p: TrackerProblem, tracker: Tracker | None = None) -> TrackerResult:
    """Solve the tracking QP and return ``u(k) = v*(k|k)``.

    The solution is re-checked (dynamics, tightened sets and the zonotope
    coefficients) before it is accepted; a failed check downgrades the status
    to ``IterationLimit`` with a message.
    """
    tracker = tracker or Tracker(p.bundle, p.weights)
    tpl = tracker.template(p.mode, p.L)
    q, b = _vectors(tpl, p)
    start = time.perf_counter()
    tpl.solver.update(q=q, b=b)
    res = tpl.solver.solve(warm_start=tpl.solved_once)
    elapsed = time.perf_counter() - start
    if not res.optimal:
        # a warm start from an unrelated point can stall; retry cold once
        if tpl.solved_once and res.status is Status.ITERATION_LIMIT:
            res = tpl.solver.solve(warm_start=False)
            elapsed = time.perf_counter() - start
        if not res.optimal:
            return TrackerResult(res.status, iterations=res.iterations, solve_time=elapsed, message=res.message)
    tpl.solved_once = True
    sol = res.x
    z = sol[tpl.z]
    v = sol[tpl.v]
    z[0] = p.x  # equality holds to round-off; make it exact
    out = TrackerResult(
        Status.OPTIMAL,
        u=v[0].copy(),
        z=z,
        v=v,
        objective=res.objective + _constant(p),
        iterations=res.iterations,
        solve_time=elapsed,
    )
    problems = verify_tracking(p, out, [sol[idx] for idx in tpl.xi], tpl.gens, tracker.settings.qp_kkt_tol)
    if problems:
        out.status = Status.ITERATION_LIMIT
        out.message = "; ".join(problems[:3])
    return out


def verify_tracking(p: TrackerProblem, r: TrackerResult, xis, gens, tol: float) -> list[str]:
    """Independent check of the tracking constraints at a returned solution."""
    A, B, C = p.bundle.fine.A, p.bundle.fine.B, p.bundle.C
    mode = p.mode
    L = p.L
    out = []
    for j in range(L):
        if np.max(np.abs(r.z[j + 1] - A @ r.z[j] - B @ r.v[j])) > tol:
            out.append(f"nominal dynamics violated at j={j}")
    for j in range(L + 1):
        if not mode.X_tube[j].contains(r.z[j], tol):
            out.append(f"z({j}) outside X ⊖ E({j})")
    for j in range(L):
        if not mode.U_tube[j].contains(r.v[j], tol):
            out.append(f"v({j}) outside U ⊖ KE({j})")
    for j in range(L + 1):
        xi = xis[j]
        diff = (C @ (r.z[j] - p.x_ref[j])) if j < L else (r.z[L] - p.x_ref[L])
        if np.max(np.abs(xi), initial=0.0) > 1.0 + tol or np.max(np.abs(diff - gens[j] @ xi), initial=0.0) > tol:
            out.append(f"contract margin violated at j={j}")
    return out


def auxiliary_error_bound_check(x_traj, z_traj, mode: PreparedMode, tol: float = 1e-6) -> bool:
    """True iff x(k+j) - z*(k+j|k) lies in E(j) for every logged j."""
    x_traj = np.atleast_2d(x_traj)
    z_traj = np.atleast_2d(z_traj)
    for j in range(min(len(x_traj), len(z_traj))):
        if not zonotope_contains(mode.tube[j], x_traj[j] - z_traj[j], tol):
            return False
    return True


def output_margin_set(mode: PreparedMode, j: int) -> Zonotope:
    """C D_j with parallel generators merged (the set used by the output contract rows)."""
    D = linear_map(mode.C, mode.margins[j])
    return Zonotope(D.center, merge_parallel(D.G))
