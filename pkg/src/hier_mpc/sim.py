"""Closed-loop simulation and post-hoc verification.

:func:`run_closed_loop` couples the plant, the planner (every M fine steps)
and the tracker (every fine step).  :func:`verify_log` re-checks a finished
run using only the CSV columns and the scenario file: state and input
constraints of the active mode, raw-obstacle intrusions, the contract flag at
planning instants, breaks of the feasibility chain and whether every
disturbance stayed inside its mode bound.
"""

from __future__ import annotations

import csv
import io
import json
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .convex_sets import Obstacle, Zonotope, zonotope_contains
from .linalg import LtiModel
from .modes import PreparedMode
from .optim import Status
from .planner import PlanResult, extract_reference, plan
from .scenario import DisturbanceSpec, Scenario, Setup, planning_problem, setup_scenario
from .tracker import Tracker, TrackerResult, cyclic_horizon

# run outcomes
SUCCESS = "success"
INITIAL_INFEASIBLE = "initial_infeasible"
INFEASIBLE = "infeasible"
SOLVER_FAILURE = "solver_failure"
MAX_STEPS = "max_steps"
BLOCKED = "blocked"

FALLBACK = "Fallback"


def step_plant(model: LtiModel, x, u, w) -> np.ndarray:
    """x' = A x + B u + w."""
    return model.A @ np.asarray(x, dtype=float) + model.B @ np.asarray(u, dtype=float) + np.asarray(w, dtype=float)


@dataclass
class DisturbancePolicy:
    """How w(k) is drawn.

    ``uniform_in_mode_set`` and ``vertex_worst_case`` draw coefficients of the
    active mode's W (uniform in [-1, 1] or at the vertices {-1, 1}) and scale
    them.  ``wind_gust`` draws uniformly as well and adds the gust vector
    during its on-intervals; the gust may leave W.
    """

    kind: str = "uniform_in_mode_set"
    scale: float = 1.0
    gust: object = None
    seed: int = 0

    @classmethod
    def from_spec(cls, spec: DisturbanceSpec, seed: int) -> "DisturbancePolicy":
        return cls(spec.kind, spec.scale, spec.gust, seed)

    def rng(self) -> np.random.Generator:
        return np.random.Generator(np.random.PCG64(self.seed))


def sample_disturbance(policy: DisturbancePolicy, W: Zonotope, rng: np.random.Generator, k: int = 0) -> np.ndarray:
    """Draw w(k) for the mode whose disturbance bound is ``W``."""
    p = W.n_gens
    if policy.kind == "none":
        return np.zeros(W.dim)
    if policy.kind == "vertex_worst_case":
        xi = rng.choice(np.array([-1.0, 1.0]), size=p)
    elif policy.kind in ("uniform_in_mode_set", "wind_gust"):
        xi = rng.uniform(-1.0, 1.0, size=p)
    else:
        raise ValueError(f"unknown disturbance kind {policy.kind!r}")
    w = policy.scale * (W.G @ xi)
    if policy.kind == "wind_gust" and policy.gust is not None and policy.gust.active(k):
        w = w + policy.gust.vector()
    return w


@dataclass
class StepRecord:
    k: int
    t: float
    x: np.ndarray
    u: np.ndarray
    w: np.ndarray
    mode: str
    L_k: int
    plan_status: str = ""
    qp_status: str = ""
    contract_ok: bool | None = None
    obstacle_margin: float = math.inf
    plan_time: float = 0.0
    qp_time: float = 0.0


@dataclass
class ClosedLoopLog:
    """Per-step record of one closed-loop run plus its outcome."""

    scenario: str
    seed: int
    n: int
    m: int
    dt: float
    M: int
    steps: list[StepRecord] = field(default_factory=list)
    plans: list[dict] = field(default_factory=list)
    outcome: str = ""
    message: str = ""
    diagnostics: list[str] = field(default_factory=list)

    @property
    def success(self) -> bool:
        return self.outcome == SUCCESS

    @property
    def final_state(self) -> np.ndarray:
        return self.steps[-1].x

    def columns(self) -> list[str]:
        return (
            ["k", "t"]
            + [f"x{i}" for i in range(self.n)]
            + [f"u{i}" for i in range(self.m)]
            + [f"w{i}" for i in range(self.n)]
            + ["mode", "L_k", "plan_status", "qp_status", "contract_ok", "obstacle_margin"]
        )

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(self.columns())
        for s in self.steps:
            contract = "" if s.contract_ok is None else str(int(s.contract_ok))
            writer.writerow(
                [s.k, repr(s.t)]
                + [repr(float(v)) for v in s.x]
                + [repr(float(v)) for v in s.u]
                + [repr(float(v)) for v in s.w]
                + [s.mode, s.L_k, s.plan_status, s.qp_status, contract, repr(float(s.obstacle_margin))]
            )
        return buf.getvalue()

    def write_csv(self, path) -> Path:
        path = Path(path)
        path.write_text(self.to_csv())
        return path

    def to_json(self) -> dict:
        steps = []
        for s in self.steps:
            d = asdict(s)
            for key in ("x", "u", "w"):
                d[key] = [float(v) for v in d[key]]
            d["obstacle_margin"] = _json_float(s.obstacle_margin)
            steps.append(d)
        return {
            "scenario": self.scenario,
            "seed": self.seed,
            "outcome": self.outcome,
            "message": self.message,
            "diagnostics": self.diagnostics,
            "steps": steps,
            "plans": self.plans,
        }

    def write_json(self, path) -> Path:
        path = Path(path)
        path.write_text(json.dumps(self.to_json(), indent=1) + "\n")
        return path


def _json_float(v: float):
    return v if math.isfinite(v) else None


def obstacle_margin(y: np.ndarray, obstacles: list[Obstacle]) -> float:
    """min over obstacles of max over faces of E_a y - f_a (>= 0 means no intrusion)."""
    if not obstacles:
        return math.inf
    return min(ob.margin(y) for ob in obstacles)


def _goal_reached(bundle, x, goal, tol) -> bool:
    C = bundle.C
    return bool(np.max(np.abs(C @ (x - goal))) < tol)


def _clip_to_hull(u: np.ndarray, mode: PreparedMode) -> np.ndarray:
    """Clip an input to the coordinate bounds of U (exact when U is a box)."""
    U = mode.mode.U
    out = u.copy()
    for r in range(U.n_faces):
        nz = np.flatnonzero(U.F[r])
        if nz.size == 1:
            i = nz[0]
            bound = U.g[r] / U.F[r, i]
            out[i] = min(out[i], bound) if U.F[r, i] > 0 else max(out[i], bound)
    return out


def run_closed_loop(
    scenario: Scenario,
    seed: int | None = None,
    setup: Setup | None = None,
    mode_names: list[str] | None = None,
    stall_plans: int | None = None,
) -> ClosedLoopLog:
    """Simulate the two-layer controller on the scenario's plant.

    Parameters
    ----------
    scenario : Scenario
    seed : int, optional
        Disturbance seed; defaults to ``scenario.seed``.
    setup : Setup, optional
        Prepared sets, reused across seeds to save time.
    mode_names : list of str, optional
        Restrict planning to these modes.
    stall_plans : int, optional
        End the run as ``blocked`` when this many consecutive plans leave the
        planned end point (and the position) unchanged within ``goal_tol``.

    Returns
    -------
    ClosedLoopLog
        ``outcome`` is one of ``success``, ``initial_infeasible``,
        ``infeasible``, ``solver_failure``, ``max_steps`` or ``blocked``.
    """
    sc = scenario
    seed = sc.seed if seed is None else seed
    setup = setup or setup_scenario(sc, mode_names)
    bundle = setup.bundle
    model = bundle.fine
    M = bundle.M
    policy = DisturbancePolicy.from_spec(sc.disturbance, seed)
    rng = policy.rng()
    tracker = Tracker(bundle, setup.weights, setup.settings)
    log = ClosedLoopLog(sc.name, seed, bundle.n, bundle.m, model.dt, M)
    nan_u = np.full(bundle.m, np.nan)
    nan_w = np.full(bundle.n, np.nan)

    x = sc.start.astype(float).copy()
    current: PlanResult | None = None
    x_ref = None
    mode: PreparedMode | None = None
    last_track: TrackerResult | None = None
    last_track_k = -1
    stall = 0
    prev_end = prev_y = None

    for k in range(sc.K_max + 1):
        margin = obstacle_margin(bundle.C @ x, setup.obstacles)
        mode_name = mode.name if mode is not None else ""
        if _goal_reached(bundle, x, sc.goal, sc.goal_tol):
            log.steps.append(StepRecord(k, k * model.dt, x.copy(), nan_u, nan_w, mode_name, 0, obstacle_margin=margin))
            log.outcome = SUCCESS
            break
        if k == sc.K_max:
            log.steps.append(StepRecord(k, k * model.dt, x.copy(), nan_u, nan_w, mode_name, 0, obstacle_margin=margin))
            log.outcome = MAX_STEPS
            break
        plan_status = ""
        contract = None
        plan_time = 0.0
        if k % M == 0:
            if x_ref is not None:
                contract = zonotope_contains(mode.Z, x - x_ref[M])
            problem = planning_problem(setup, x, previous=current)
            t0 = time.perf_counter()
            result = plan(problem, time_limit=sc.plan_time_limit)
            plan_time = time.perf_counter() - t0
            plan_status = str(result.status)
            log.plans.append({"k": k, **result.to_dict()})
            if not result.optimal:
                log.steps.append(
                    StepRecord(k, k * model.dt, x.copy(), nan_u, nan_w, mode_name, cyclic_horizon(k, M),
                               plan_status, "", contract, margin, plan_time)
                )
                if current is None:
                    log.outcome = INITIAL_INFEASIBLE if result.status is Status.INFEASIBLE else SOLVER_FAILURE
                else:
                    log.outcome = INFEASIBLE if result.status is Status.INFEASIBLE else SOLVER_FAILURE
                log.message = f"planning failed at k={k}: {result.message or result.status}"
                break
            current = result
            mode = setup.modes[result.mode]
            x_ref = extract_reference(result, bundle)
            end = result.x_p[-1]
            if stall_plans is not None:
                y = bundle.C @ x
                moved = (
                    prev_end is None
                    or np.max(np.abs(bundle.C @ (end - prev_end))) >= sc.goal_tol
                    or np.max(np.abs(y - prev_y)) >= sc.goal_tol
                )
                stall = 0 if moved else stall + 1
                prev_end, prev_y = end, y
                if stall >= stall_plans:
                    log.steps.append(
                        StepRecord(k, k * model.dt, x.copy(), nan_u, nan_w, mode.name, cyclic_horizon(k, M),
                                   plan_status, "", contract, margin, plan_time)
                    )
                    log.outcome = BLOCKED
                    log.message = f"no progress over {stall_plans} plans"
                    break

        L = cyclic_horizon(k, M)
        j = k % M
        tr = tracker.step(mode, x, x_ref[j:], k)
        if tr.optimal:
            u = tr.u
            qp_status = str(tr.status)
            last_track, last_track_k = tr, k
        else:
            log.diagnostics.append(f"k={k}: tracker {tr.status}: {tr.message}")
            if last_track is not None and k - last_track_k < last_track.v.shape[0]:
                # continue the last nominal input sequence with the auxiliary feedback
                jj = k - last_track_k
                u = last_track.v[jj] + setup.K @ (x - last_track.z[jj])
            else:
                u = setup.K @ (x - x_ref[j])
            u = _clip_to_hull(u, mode)
            qp_status = f"{FALLBACK}:{tr.status}"
        w = sample_disturbance(policy, mode.mode.W, rng, k)
        log.steps.append(
            StepRecord(k, k * model.dt, x.copy(), u.copy(), w, mode.name, L, plan_status, qp_status, contract,
                       margin, plan_time, tr.solve_time)
        )
        x = step_plant(model, x, u, w)
    return log


@dataclass
class VerificationReport:
    """Violation counts of a finished run (see :func:`verify_log`)."""

    steps: int = 0
    state_violations: int = 0
    input_violations: int = 0
    obstacle_intrusions: int = 0
    contract_failures: int = 0
    contract_checks: int = 0
    feasibility_breaks: int = 0
    out_of_bound_disturbances: int = 0
    fallback_steps: int = 0
    initial_plan_optimal: bool = False
    reached_goal: bool = False
    details: list[str] = field(default_factory=list)

    @property
    def guarantees_in_force(self) -> bool:
        """The closed-loop guarantees assume every disturbance was inside its bound."""
        return self.out_of_bound_disturbances == 0

    @property
    def violations(self) -> int:
        return (
            self.state_violations
            + self.input_violations
            + self.obstacle_intrusions
            + self.contract_failures
            + self.feasibility_breaks
        )

    @property
    def clean(self) -> bool:
        return self.violations == 0

    def to_dict(self) -> dict:
        d = asdict(self)
        d["guarantees_in_force"] = "in force" if self.guarantees_in_force else "not in force"
        d["violations"] = self.violations
        return d


def read_log_csv(text: str) -> list[dict]:
    rows = list(csv.DictReader(io.StringIO(text)))
    if not rows:
        raise ValueError("empty log")
    return rows


def verify_log(log_csv: str | ClosedLoopLog, scenario: Scenario, tol: float = 1e-8) -> VerificationReport:
    """Re-check a run from its CSV columns and the scenario only.

    Constraint membership is tested against the sets of the mode named in
    each row (tolerance ``tol``), obstacle intrusion uses the raw obstacles
    with their boundary counted as safe, and each w is tested against the
    disturbance bound of its row's mode.
    """
    text = log_csv.to_csv() if isinstance(log_csv, ClosedLoopLog) else log_csv
    rows = read_log_csv(text)
    bundle = scenario.bundle()
    n, m = bundle.n, bundle.m
    modes = {ms.name: ms for ms in scenario.modes}
    obstacles = [P for _, P in scenario.obstacles]
    rep = VerificationReport()
    seen_optimal_plan = False
    for idx, row in enumerate(rows):
        k = int(row["k"])
        x = np.array([float(row[f"x{i}"]) for i in range(n)])
        u = np.array([float(row[f"u{i}"]) for i in range(m)])
        w = np.array([float(row[f"w{i}"]) for i in range(n)])
        rep.steps += 1
        y = bundle.C @ x
        for P in obstacles:
            if float(np.max(P.F @ y - P.g)) < 0.0:
                rep.obstacle_intrusions += 1
                rep.details.append(f"k={k}: output inside an obstacle")
        plan_status = row["plan_status"]
        if plan_status:
            if plan_status == str(Status.OPTIMAL):
                if idx == 0:
                    rep.initial_plan_optimal = True
                seen_optimal_plan = True
            elif seen_optimal_plan and plan_status == str(Status.INFEASIBLE):
                rep.feasibility_breaks += 1
                rep.details.append(f"k={k}: planner infeasible after an optimal plan")
        qp_status = row["qp_status"]
        if seen_optimal_plan and qp_status and qp_status != str(Status.OPTIMAL):
            rep.fallback_steps += 1
            if qp_status.endswith(str(Status.INFEASIBLE)):
                rep.feasibility_breaks += 1
                rep.details.append(f"k={k}: tracker infeasible")
        if row["contract_ok"] != "":
            rep.contract_checks += 1
            if row["contract_ok"] != "1":
                rep.contract_failures += 1
                rep.details.append(f"k={k}: contract violated at a planning instant")
        name = row["mode"]
        if name:
            ms = modes[name]
            if not ms.X.contains(x, tol):
                rep.state_violations += 1
                rep.details.append(f"k={k}: state outside X of mode {name}")
            if np.all(np.isfinite(u)) and not ms.U.contains(u, tol):
                rep.input_violations += 1
                rep.details.append(f"k={k}: input outside U of mode {name}")
            if np.all(np.isfinite(w)) and not zonotope_contains(ms.W, w, tol):
                rep.out_of_bound_disturbances += 1
        elif not scenario.X.contains(x, tol):
            rep.state_violations += 1
            rep.details.append(f"k={k}: state outside X")
    last = rows[-1]
    xN = np.array([float(last[f"x{i}"]) for i in range(n)])
    rep.reached_goal = bool(np.max(np.abs(bundle.C @ (xN - scenario.goal))) < scenario.goal_tol)
    return rep
