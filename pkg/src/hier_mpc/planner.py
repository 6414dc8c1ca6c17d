"""Upper layer: moving-horizon MILP planner with mode selection.

The planner works on the coarse model ``x_p+ = A_p x_p + B_p u_p`` (one coarse
step spans M fine steps).  Each problem picks exactly one operating mode and a
nominal plan that

* starts within Z_i of the measured state,
* respects X_i ⊖ Z_i and U_i ⊖ K Z_i at every coarse sample and at every fine
  step in between (the fine states reached while ``u_p`` is held),
* keeps the output outside every obstacle grown by the output image of Z_i,
* ends at a steady state (all velocity-like coordinates zero) with zero input
  admissible.

Obstacle avoidance and mode choice are encoded with big-M rows and binaries;
the MILP is solved by :func:`hier_mpc.optim.solve_milp`.  Every optimal plan
is re-checked with plain set-membership code before it is returned.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .convex_sets import HPolytope, Obstacle, zonotope_contains
from .linalg import input_rollout_matrix, mat_power
from .modes import ConfigurationError, PreparedMode
from .optim import LinearProgram, MixedIntegerLinearProgram, Status, solve_milp
from .settings import DEFAULT_SETTINGS, NumericSettings
from .vehicle_models import ModelBundle

INTERSAMPLE_POLICIES = ("shared_face", "per_sample")
STAGE_REFERENCES = ("goal", "origin")


class PlanVerificationError(RuntimeError):
    """An optimal plan failed the independent constraint re-check (encoding bug)."""


@dataclass
class PlanProblem:
    bundle: ModelBundle
    modes: list[PreparedMode]
    obstacles: list[Obstacle]
    x0: np.ndarray
    goal: np.ndarray
    N: int
    X: HPolytope
    U: HPolytope
    alpha_x: float = 0.01
    alpha_u: float = 0.01
    stage_reference: str = "goal"
    big_m: float = 1e4
    intersample: str = "shared_face"
    open_loop: bool = False
    previous: "PlanResult | None" = None
    allowed_modes: tuple[int, ...] | None = None
    settings: NumericSettings = DEFAULT_SETTINGS

    def __post_init__(self):
        self.x0 = np.asarray(self.x0, dtype=float).reshape(-1)
        self.goal = np.asarray(self.goal, dtype=float).reshape(-1)
        if self.N < 1:
            raise ValueError("planning horizon N must be at least 1")
        if self.alpha_x < 0 or self.alpha_u < 0:
            raise ValueError("cost weights must be non-negative")
        if self.stage_reference not in STAGE_REFERENCES:
            raise ValueError(f"stage_reference must be one of {STAGE_REFERENCES}")
        if self.intersample not in INTERSAMPLE_POLICIES:
            raise ValueError(f"intersample policy must be one of {INTERSAMPLE_POLICIES}")

    @property
    def feedback_free(self) -> bool:
        """Open-loop replanning: the start is pinned to the previous plan."""
        return self.open_loop and self.previous is not None

    def mode_enabled(self, i: int) -> bool:
        pm = self.modes[i]
        if self.allowed_modes is not None and i not in self.allowed_modes:
            return False
        if self.feedback_free and i != self.previous.mode:
            return False
        return pm.usable and pm.terminal_input_ok


@dataclass
class PlanResult:
    status: Status
    mode: int = -1
    mode_name: str = ""
    x_p: np.ndarray | None = None
    u_p: np.ndarray | None = None
    objective: float = float("nan")
    nodes: int = 0
    solve_time: float = 0.0
    message: str = ""

    @property
    def optimal(self) -> bool:
        return self.status is Status.OPTIMAL

    def to_dict(self) -> dict:
        return {
            "status": str(self.status),
            "mode": self.mode,
            "mode_name": self.mode_name,
            "objective": None if not self.optimal else self.objective,
            "nodes": self.nodes,
            "solve_time": self.solve_time,
            "x_p": None if self.x_p is None else self.x_p.tolist(),
            "u_p": None if self.u_p is None else self.u_p.tolist(),
            "message": self.message,
        }


@dataclass
class PlanningMilp:
    """The MILP plus the index bookkeeping needed to read a solution back."""

    milp: MixedIntegerLinearProgram
    d: np.ndarray
    x: np.ndarray  # (N+1, n) variable indices
    u: np.ndarray  # (N, m)
    obstacle_binaries: dict = field(default_factory=dict)

    @property
    def n_binaries(self) -> int:
        return int(self.milp.binaries.size)


def _interval_max(coef: np.ndarray, lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
    """Row-wise max of coef @ v over the box lo <= v <= hi (inf if unbounded)."""
    coef = np.atleast_2d(coef)
    with np.errstate(invalid="ignore"):
        up = np.where(coef > 0, coef * hi, 0.0)
        dn = np.where(coef < 0, coef * lo, 0.0)
    return (up + dn).sum(axis=1)


def _interval_hull(P: HPolytope) -> tuple[np.ndarray, np.ndarray]:
    n = P.dim
    lo, hi = np.empty(n), np.empty(n)
    for k in range(n):
        e = np.zeros(n)
        e[k] = 1.0
        hi[k] = P.support(e)
        lo[k] = -P.support(-e)
    return lo, hi


class _Rows:
    """Dense row accumulator for one constraint class."""

    def __init__(self, nvar: int):
        self.nvar = nvar
        self.blocks: list[np.ndarray] = []
        self.rhs: list[np.ndarray] = []

    def add(self, terms: list[tuple[np.ndarray, np.ndarray]], rhs) -> None:
        """terms: (variable indices, coefficient matrix with one column per index)."""
        rhs = np.atleast_1d(np.asarray(rhs, dtype=float))
        block = np.zeros((rhs.size, self.nvar))
        for idx, coef in terms:
            block[:, np.asarray(idx)] += np.asarray(coef, dtype=float).reshape(rhs.size, -1)
        self.blocks.append(block)
        self.rhs.append(rhs)

    def matrix(self):
        if not self.blocks:
            return np.zeros((0, self.nvar)), np.zeros(0)
        return np.vstack(self.blocks), np.concatenate(self.rhs)


def build_planning_milp(p: PlanProblem) -> PlanningMilp:
    """Assemble the planning MILP (see module docstring for the constraint list)."""
    bundle = p.bundle
    n, m, N, M = bundle.n, bundle.m, p.N, bundle.M
    A, B, C = bundle.fine.A, bundle.fine.B, bundle.C
    nw = len(p.modes)
    enabled = [p.mode_enabled(i) for i in range(nw)]
    if not any(enabled):
        raise ConfigurationError("no operating mode is available for planning")
    backoff = p.settings.obstacle_backoff

    # intermediate-point maps: point l of an interval is Apow[l] x_p(j) + Spow[l] u_p(j)
    Apow = [mat_power(A, ell) for ell in range(M + 1)]
    Spow = [input_rollout_matrix(A, B, ell) for ell in range(M + 1)]

    # variable layout: binaries first, then continuous
    nvar = 0

    def alloc(count: int) -> np.ndarray:
        nonlocal nvar
        idx = np.arange(nvar, nvar + count)
        nvar += count
        return idx

    d = alloc(nw)
    # obstacle binaries: key (mode, obstacle, j) for shared_face, (mode, obstacle, j, l) for per_sample
    obin: dict = {}
    for i in range(nw):
        if not enabled[i]:
            continue
        for ob_i, ob in enumerate(p.obstacles):
            q = ob.base.n_faces
            for j in range(N):
                if p.intersample == "shared_face":
                    obin[(i, ob_i, j)] = alloc(q)
                else:
                    last = M + 1 if j == N - 1 else M
                    for ell in range(last):
                        obin[(i, ob_i, j, ell)] = alloc(q)
    n_bin = nvar
    xv = alloc((N + 1) * n).reshape(N + 1, n)
    uv = alloc(N * m).reshape(N, m)
    xi = {}
    for i in range(nw):
        if enabled[i] and not p.feedback_free:
            xi[i] = alloc(p.modes[i].Z.n_gens)
    t_goal = alloc(1)
    t_x = alloc(N)
    t_u = alloc(N)

    lb = np.full(nvar, -np.inf)
    ub = np.full(nvar, np.inf)
    lb[:n_bin] = 0.0
    ub[:n_bin] = 1.0
    for i in range(nw):
        if not enabled[i]:
            ub[d[i]] = 0.0
    xlo, xhi = _interval_hull(p.X)
    ulo, uhi = _interval_hull(p.U)
    lb[xv] = xlo
    ub[xv] = xhi
    lb[uv] = ulo
    ub[uv] = uhi
    lb[xv[N, list(bundle.steady_zero)]] = 0.0
    ub[xv[N, list(bundle.steady_zero)]] = 0.0
    for idx in xi.values():
        lb[idx] = -1.0
        ub[idx] = 1.0
    lb[np.concatenate([t_goal, t_x, t_u])] = 0.0

    ineq = _Rows(nvar)
    eq = _Rows(nvar)

    # mode selection
    eq.add([(d, np.ones((1, nw)))], [1.0])

    # coarse dynamics
    for j in range(N):
        eq.add([(xv[j + 1], np.eye(n)), (xv[j], -bundle.A_p), (uv[j], -bundle.B_p)], np.zeros(n))

    # initial condition
    if p.feedback_free:
        prev_x1 = p.previous.x_p[1]
        lb[xv[0]] = prev_x1
        ub[xv[0]] = prev_x1
    else:
        for i, idx in xi.items():
            G = p.modes[i].Z.G
            reach = np.maximum(np.abs(p.x0 - xlo), np.abs(p.x0 - xhi)) + np.abs(G).sum(axis=1)
            Mrow = np.where(np.isfinite(reach), reach + 1.0, p.big_m)
            # x0 - x_p(0) - G xi <= M (1 - d_i)   and   -(x0 - x_p(0) - G xi) <= M (1 - d_i)
            ineq.add([(xv[0], -np.eye(n)), (idx, -G), ([d[i]], Mrow[:, None])], Mrow - p.x0)
            ineq.add([(xv[0], np.eye(n)), (idx, G), ([d[i]], Mrow[:, None])], Mrow + p.x0)

    def state_rows(i, F, g, x_idx, u_idx, ell):
        """F (A^l x + S_l u) <= g + M (1 - d_i), skipping rows implied by the variable bounds."""
        cx = F @ Apow[ell]
        cu = F @ Spow[ell] if u_idx is not None else np.zeros((F.shape[0], m))
        top = _interval_max(cx, xlo, xhi) + (_interval_max(cu, ulo, uhi) if u_idx is not None else 0.0)
        keep = ~(top <= g)
        if not keep.any():
            return
        Mrow = np.where(np.isfinite(top), np.maximum(top - g, 0.0) + 1.0, p.big_m)[keep]
        terms = [(x_idx, cx[keep]), ([d[i]], Mrow[:, None])]
        if u_idx is not None:
            terms.append((u_idx, cu[keep]))
        ineq.add(terms, g[keep] + Mrow)

    def obstacle_rows(i, ob_i, offsets, x_idx, u_idx, ell, bins):
        """E_a C (A^l x + S_l u) >= f'_a - M_a b_a for every face a."""
        E = p.obstacles[ob_i].E
        target = offsets + backoff
        cx = -E @ C @ Apow[ell]
        cu = -E @ C @ Spow[ell] if u_idx is not None else np.zeros((E.shape[0], m))
        # largest value of f'_a - E_a y over the bounds = how much relaxation is needed
        need = target + _interval_max(cx, xlo, xhi) + (_interval_max(cu, ulo, uhi) if u_idx is not None else 0.0)
        Mrow = np.where(np.isfinite(need), np.maximum(need, 0.0) + 1.0, p.big_m)
        reach = _interval_max(-cx, xlo, xhi) + (_interval_max(-cu, ulo, uhi) if u_idx is not None else 0.0)
        # faces that no point within the bounds can satisfy must be switched off
        impossible = target > reach
        lb[bins[impossible]] = 1.0
        keep = ~impossible
        if not keep.any():
            return
        terms = [(x_idx, cx[keep]), (bins[keep], -np.diag(Mrow[keep]))]
        if u_idx is not None:
            terms.append((u_idx, cu[keep]))
        ineq.add(terms, -target[keep])

    for i in range(nw):
        if not enabled[i]:
            continue
        pm = p.modes[i]
        Fx, gx = pm.X_tight.F, pm.X_tight.g
        Fu, gu = pm.U_tight.F, pm.U_tight.g
        for j in range(N):
            for ell in range(M):
                state_rows(i, Fx, gx, xv[j], uv[j] if ell > 0 else None, ell)
            # tightened input set
            top = _interval_max(Fu, ulo, uhi)
            keep = ~(top <= gu)
            if keep.any():
                Mrow = np.where(np.isfinite(top), np.maximum(top - gu, 0.0) + 1.0, p.big_m)[keep]
                ineq.add([(uv[j], Fu[keep]), ([d[i]], Mrow[:, None])], gu[keep] + Mrow)
        state_rows(i, Fx, gx, xv[N], None, 0)

        for ob_i, ob in enumerate(p.obstacles):
            offsets = pm.enlarged[ob_i]
            q = ob.base.n_faces
            for j in range(N):
                if p.intersample == "shared_face":
                    bins = obin[(i, ob_i, j)]
                    for ell in range(M + 1):
                        if ell == M:
                            obstacle_rows(i, ob_i, offsets, xv[j + 1], None, 0, bins)
                        else:
                            obstacle_rows(i, ob_i, offsets, xv[j], uv[j] if ell > 0 else None, ell, bins)
                    ineq.add([(bins, np.ones((1, q))), ([d[i]], np.ones((1, 1)))], [float(q)])
                else:
                    last = M + 1 if j == N - 1 else M
                    for ell in range(last):
                        bins = obin[(i, ob_i, j, ell)]
                        if ell == M:
                            obstacle_rows(i, ob_i, offsets, xv[j + 1], None, 0, bins)
                        else:
                            obstacle_rows(i, ob_i, offsets, xv[j], uv[j] if ell > 0 else None, ell, bins)
                        ineq.add([(bins, np.ones((1, q))), ([d[i]], np.ones((1, 1)))], [float(q)])

    # infinity-norm epigraphs; the stage term measures x_p(j) from the goal
    # (or from the origin, the literal reading of the stage cost)
    stage_ref = p.goal if p.stage_reference == "goal" else np.zeros(n)
    ones_n = np.ones((n, 1))
    ineq.add([(xv[N], np.eye(n)), (t_goal, -ones_n)], p.goal)
    ineq.add([(xv[N], -np.eye(n)), (t_goal, -ones_n)], -p.goal)
    for j in range(N):
        ineq.add([(xv[j], np.eye(n)), ([t_x[j]], -ones_n)], stage_ref)
        ineq.add([(xv[j], -np.eye(n)), ([t_x[j]], -ones_n)], -stage_ref)
        ineq.add([(uv[j], np.eye(m)), ([t_u[j]], -np.ones((m, 1)))], np.zeros(m))
        ineq.add([(uv[j], -np.eye(m)), ([t_u[j]], -np.ones((m, 1)))], np.zeros(m))

    c = np.zeros(nvar)
    c[t_goal] = 1.0
    c[t_x] = p.alpha_x
    c[t_u] = p.alpha_u
    G, h = ineq.matrix()
    Aeq, beq = eq.matrix()
    lp = LinearProgram(c, G, h, Aeq, beq, lb, ub)
    milp = MixedIntegerLinearProgram(lp, np.arange(n_bin))
    return PlanningMilp(milp, d, xv, uv, obin)


def _solve_single(p: PlanProblem, engine: str, time_limit: float | None, cutoff: float | None = None) -> PlanResult:
    start = time.perf_counter()
    built = build_planning_milp(p)
    res = solve_milp(built.milp, p.settings, engine=engine, time_limit=time_limit, cutoff=cutoff)
    elapsed = time.perf_counter() - start
    if res.status is not Status.OPTIMAL:
        return PlanResult(res.status, nodes=res.nodes, solve_time=elapsed, message=res.message)
    x = res.x
    mode = int(np.argmax(x[built.d]))
    return PlanResult(
        Status.OPTIMAL,
        mode=mode,
        mode_name=p.modes[mode].name,
        x_p=x[built.x].copy(),
        u_p=x[built.u].copy(),
        objective=res.objective,
        nodes=res.nodes,
        solve_time=elapsed,
    )


def plan(
    p: PlanProblem,
    strategy: str = "portfolio",
    engine: str = "auto",
    time_limit: float | None = None,
    verify: bool = True,
) -> PlanResult:
    """Solve the planning problem and re-check the answer.

    Parameters
    ----------
    strategy : {"portfolio", "monolithic"}
        ``"monolithic"`` solves one MILP containing every mode.
        ``"portfolio"`` solves one single-mode MILP per enabled mode and keeps
        the best objective, lowest mode index on ties; this is the same
        optimum with smaller trees.  Later modes are searched with the best
        objective so far as a cutoff.
    """
    if strategy == "monolithic":
        result = _solve_single(p, engine, time_limit)
    elif strategy == "portfolio":
        result = None
        nodes = 0
        elapsed = 0.0
        statuses = []
        for i in range(len(p.modes)):
            if not p.mode_enabled(i):
                continue
            sub = _with_modes(p, (i,))
            cutoff = None if result is None else result.objective
            r = _solve_single(sub, engine, time_limit, cutoff)
            nodes += r.nodes
            elapsed += r.solve_time
            statuses.append((i, r))
            if r.optimal and (result is None or r.objective < result.objective - p.settings.mip_gap_abs):
                result = r
        if not statuses:
            raise ConfigurationError("no operating mode is available for planning")
        failed = [(i, r) for i, r in statuses if r.status not in (Status.OPTIMAL, Status.INFEASIBLE)]
        if failed:
            # an unfinished mode could still hold the optimum
            i, r = failed[0]
            result = PlanResult(r.status, message=f"mode {p.modes[i].name}: {r.message or r.status}")
        elif result is None:
            result = PlanResult(Status.INFEASIBLE, message="no mode admits a plan")
        result.nodes = nodes
        result.solve_time = elapsed
    else:
        raise ValueError(f"unknown strategy {strategy!r}")
    if result.optimal and verify:
        problems = verify_plan(p, result)
        if problems:
            raise PlanVerificationError("; ".join(problems[:5]))
    return result


def _with_modes(p: PlanProblem, allowed: tuple[int, ...]) -> PlanProblem:
    base = set(allowed) if p.allowed_modes is None else set(allowed) & set(p.allowed_modes)
    return PlanProblem(
        bundle=p.bundle,
        modes=p.modes,
        obstacles=p.obstacles,
        x0=p.x0,
        goal=p.goal,
        N=p.N,
        X=p.X,
        U=p.U,
        alpha_x=p.alpha_x,
        alpha_u=p.alpha_u,
        stage_reference=p.stage_reference,
        big_m=p.big_m,
        intersample=p.intersample,
        open_loop=p.open_loop,
        previous=p.previous,
        allowed_modes=tuple(sorted(base)),
        settings=p.settings,
    )


def fine_points(bundle: ModelBundle, x_p: np.ndarray, u_p: np.ndarray) -> np.ndarray:
    """States at the fine steps 0..M-1 reached from x_p while u_p is held (row per step)."""
    A, B = bundle.fine.A, bundle.fine.B
    pts = [np.asarray(x_p, dtype=float)]
    for _ in range(bundle.M):
        pts.append(A @ pts[-1] + B @ u_p)
    return np.array(pts)


def verify_plan(p: PlanProblem, r: PlanResult, tol: float | None = None) -> list[str]:
    """Check an optimal plan against the planning constraints with set-membership code.

    Returns a list of human-readable violations (empty when the plan is valid).
    """
    tol = p.settings.plan_verify_tol if tol is None else tol
    bundle = p.bundle
    pm = p.modes[r.mode]
    out = []
    xs, us = r.x_p, r.u_p
    N = p.N
    if not p.mode_enabled(r.mode):
        out.append(f"mode {pm.name} was not available")
    for j in range(N):
        nxt = bundle.A_p @ xs[j] + bundle.B_p @ us[j]
        if np.max(np.abs(nxt - xs[j + 1])) > tol * max(1.0, np.max(np.abs(nxt))):
            out.append(f"coarse dynamics violated at j={j}")
    if p.feedback_free:
        if np.max(np.abs(xs[0] - p.previous.x_p[1])) > tol:
            out.append("open-loop start differs from the previous plan")
    elif not zonotope_contains(pm.Z, p.x0 - xs[0], tol):
        out.append("initial state not within Z of the plan start")
    for j in range(N):
        pts = fine_points(bundle, xs[j], us[j])
        for ell in range(bundle.M):
            if not pm.X_tight.contains(pts[ell], tol):
                out.append(f"state constraint violated at j={j}, fine step {ell}")
        if not pm.U_tight.contains(us[j], tol):
            out.append(f"input constraint violated at j={j}")
        if not check_reference_safety(pts, pm, p.obstacles):
            out.append(f"enlarged obstacle entered in interval j={j}")
    xN = xs[N]
    if not pm.X_tight.contains(xN, tol):
        out.append("terminal state outside X ⊖ Z")
    if np.max(np.abs(xN[list(bundle.steady_zero)]), initial=0.0) > tol:
        out.append("terminal state is not a steady state")
    if not pm.terminal_input_ok:
        out.append("zero terminal input not admissible")
    if not check_reference_safety(xN[None, :], pm, p.obstacles):
        out.append("terminal state inside an enlarged obstacle")
    return out


def extract_reference(result: PlanResult, bundle: ModelBundle) -> np.ndarray:
    """Fine-rate reference for the next M steps: rows x_ref(0..M).

    x_ref(j) = A^j x_p(0) + sum_{m<j} A^m B u_p(0); the last row equals x_p(1)
    up to round-off.
    """
    if not result.optimal:
        raise ValueError("a reference can only be extracted from an optimal plan")
    return fine_points(bundle, result.x_p[0], result.u_p[0])


def check_reference_safety(x_ref: np.ndarray, mode: PreparedMode, obstacles: list[Obstacle]) -> bool:
    """True iff every sample has, for each obstacle, a face a with E_a C x >= f'_a.

    ``f'`` are the mode's enlarged offsets; equality (the boundary) counts as safe.
    """
    Y = np.atleast_2d(x_ref) @ mode.C.T
    for ob_i, ob in enumerate(obstacles):
        slack = Y @ ob.E.T - mode.enlarged[ob_i][None, :]
        if np.any(np.max(slack, axis=1) < 0.0):
            return False
    return True
