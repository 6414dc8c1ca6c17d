"""Best-first branch and bound for 0/1 mixed-integer linear programs.

Nodes are kept in a heap keyed by (parent LP bound, creation counter), so the
exploration order is a deterministic function of the instance.  A node's LP is
solved when it is popped.  Branching picks the most fractional binary, lowest
index on ties.  Before the search, a dive from the root (repeatedly fixing
the binaries that are already integral plus the least fractional one) usually
provides an incumbent that prunes most of the tree.
"""

from __future__ import annotations

import heapq
import time

import numpy as np

from ..settings import DEFAULT_SETTINGS, NumericSettings
from .problems import LinearProgram, MixedIntegerLinearProgram, SolveStatus, Status
from .simplex import solve_lp

_FREE = -1


class _SimplexEngine:
    def __init__(self, lp: LinearProgram, settings: NumericSettings):
        self.lp = lp
        self.settings = settings

    def solve(self, lb, ub, basis=None) -> SolveStatus:
        sub = LinearProgram(self.lp.c, self.lp.G, self.lp.h, self.lp.A, self.lp.b, lb, ub)
        return solve_lp(sub, self.settings)

    def basis(self):
        return None


class _HighsEngine:
    def __init__(self, lp: LinearProgram, settings: NumericSettings):
        from .highs_backend import HighsLP

        self.model = HighsLP(lp)

    def solve(self, lb, ub, basis=None) -> SolveStatus:
        self.model.set_bounds(lb, ub)
        if basis is not None:
            self.model.set_basis(basis)
        return self.model.solve()

    def basis(self):
        return self.model.get_basis()


def _make_engine(lp: LinearProgram, engine: str, settings: NumericSettings):
    if engine == "auto":
        engine = "highs" if lp.n + lp.G.shape[0] + lp.A.shape[0] > 150 else "simplex"
    if engine == "simplex":
        return _SimplexEngine(lp, settings)
    if engine == "highs":
        return _HighsEngine(lp, settings)
    raise ValueError(f"unknown LP engine {engine!r}")


class _Search:
    def __init__(self, milp: MixedIntegerLinearProgram, settings: NumericSettings, engine: str):
        self.milp = milp
        self.lp = milp.lp
        self.s = settings
        self.bins = milp.binaries
        self.engine = _make_engine(self.lp, engine, settings)
        self.best_obj = np.inf
        self.best_x: np.ndarray | None = None
        self.lp_solves = 0

    def relax(self, fix: np.ndarray, basis=None) -> SolveStatus:
        lb = self.lp.lb.copy()
        ub = self.lp.ub.copy()
        fixed = fix != _FREE
        lb[self.bins[fixed]] = fix[fixed]
        ub[self.bins[fixed]] = fix[fixed]
        self.lp_solves += 1
        return self.engine.solve(lb, ub, basis)

    def fractionality(self, x: np.ndarray) -> np.ndarray:
        v = x[self.bins]
        return np.minimum(v - np.floor(v), np.ceil(v) - v)

    def offer(self, x: np.ndarray) -> None:
        """Re-solve with the binaries of ``x`` fixed and keep the result if it improves."""
        fix = np.round(x[self.bins]).astype(np.int8)
        res = self.relax(fix)
        if not res.optimal:
            return
        xs = res.x.copy()
        xs[self.bins] = fix
        obj = self.lp.objective(xs)
        if obj < self.best_obj - 1e-12:
            self.best_obj = obj
            self.best_x = xs

    def dive(self, fix: np.ndarray, res: SolveStatus) -> None:
        """Round the LP solution step by step to find an early incumbent.

        Each step fixes the binaries that are already integral together with
        the least fractional one.  An infeasible step is retried with that
        binary flipped, and then without the batch of integral fixings.
        """
        fix = fix.copy()
        while res.optimal and res.objective < self.best_obj - self.s.mip_gap_abs:
            frac = self.fractionality(res.x)
            frac[fix != _FREE] = 0.0
            if np.all(frac <= self.s.int_tol):
                self.offer(res.x)
                return
            v = res.x[self.bins]
            integral = (frac <= self.s.int_tol) & (fix == _FREE)
            cand = np.flatnonzero(frac > self.s.int_tol)
            j = cand[np.argmin(frac[cand])]
            batch = fix.copy()
            batch[integral] = np.round(v[integral]).astype(np.int8)
            single = fix.copy()
            guess = int(round(v[j]))
            for base, val in ((batch, guess), (batch, 1 - guess), (single, guess), (single, 1 - guess)):
                trial = base.copy()
                trial[j] = val
                res = self.relax(trial)
                if res.optimal:
                    fix = trial
                    break

def solve_milp(
    milp: MixedIntegerLinearProgram,
    settings: NumericSettings = DEFAULT_SETTINGS,
    engine: str = "auto",
    dive: bool = True,
    time_limit: float | None = None,
    cutoff: float | None = None,
) -> SolveStatus:
    """Solve a MILP whose integer variables are all binary.

    Parameters
    ----------
    milp : MixedIntegerLinearProgram
    settings : NumericSettings
        Integrality tolerance, absolute gap and node budget.
    engine : {"auto", "simplex", "highs"}
        LP engine for the node relaxations.  ``"auto"`` uses the built-in
        simplex for small instances and HiGHS above 150 rows plus columns.
    dive : bool
        Run the root diving heuristic before the search.
    time_limit : float, optional
        Wall-clock budget in seconds; exceeding it returns ``IterationLimit``.
    cutoff : float, optional
        Only solutions better than ``cutoff - mip_gap_abs`` are of interest;
        nodes that cannot reach them are pruned.  If none exists the status
        is ``Infeasible`` with the message ``"cutoff"``.

    Returns
    -------
    SolveStatus
        On ``Optimal``, ``x`` has binaries exactly 0 or 1 and ``bound`` is the
        best remaining LP bound (within ``mip_gap_abs`` of ``objective``).
    """
    s = settings
    search = _Search(milp, s, engine)
    if cutoff is not None:
        search.best_obj = float(cutoff)
    nb = search.bins.size
    start = time.perf_counter()
    root_fix = np.full(nb, _FREE, dtype=np.int8)
    root = search.relax(root_fix)
    if root.status is Status.INFEASIBLE:
        return SolveStatus(Status.INFEASIBLE, nodes=1, message="root relaxation infeasible")
    if root.status is Status.UNBOUNDED:
        return SolveStatus(Status.UNBOUNDED, nodes=1, message="root relaxation unbounded")
    if not root.optimal:
        return SolveStatus(root.status, nodes=1, message="root relaxation failed")
    if nb == 0:
        root.nodes = 1
        root.bound = root.objective
        return root
    root_basis = search.engine.basis()
    if dive:
        search.dive(root_fix, root)

    # each heap entry carries its parent's basis so that a child LP starts
    # a few pivots away from its optimum
    heap: list = [(root.objective, 0, root_fix, root, None)]
    counter = 1
    nodes = 0
    while heap:
        bound, _, fix, res, basis = heapq.heappop(heap)
        if bound >= search.best_obj - s.mip_gap_abs:
            heap.clear()
            break
        if nodes >= s.node_limit or (time_limit is not None and time.perf_counter() - start > time_limit):
            heapq.heappush(heap, (bound, -1, fix, res, basis))
            return _finish(search, Status.ITERATION_LIMIT, nodes, heap, "node budget exhausted")
        nodes += 1
        node_basis = root_basis
        if res is None:
            res = search.relax(fix, basis)
            node_basis = search.engine.basis()
            if res.status is Status.UNBOUNDED:
                return SolveStatus(Status.UNBOUNDED, nodes=nodes, message="node relaxation unbounded")
            if not res.optimal:
                continue
            if res.objective >= search.best_obj - s.mip_gap_abs:
                continue
        frac = search.fractionality(res.x)
        frac[fix != _FREE] = 0.0
        if np.max(frac) <= s.int_tol:
            search.offer(res.x)
            continue
        j = int(np.argmax(frac))  # argmax returns the lowest index on ties
        first = int(round(res.x[search.bins[j]]))
        for val in (first, 1 - first):
            child = fix.copy()
            child[j] = val
            heapq.heappush(heap, (res.objective, counter, child, None, node_basis))
            counter += 1
    status = Status.OPTIMAL if search.best_x is not None else Status.INFEASIBLE
    return _finish(search, status, nodes, heap, "")


def _finish(search: _Search, status: Status, nodes: int, heap: list, message: str) -> SolveStatus:
    open_bound = min((h[0] for h in heap), default=np.inf)
    if search.best_x is None:
        if not message:
            message = "cutoff" if np.isfinite(search.best_obj) else "all nodes pruned"
        return SolveStatus(status, nodes=nodes, bound=float(open_bound), message=message)
    return SolveStatus(
        status,
        objective=float(search.best_obj),
        x=search.best_x,
        nodes=nodes,
        bound=float(min(open_bound, search.best_obj)),
        iterations=search.lp_solves,
        message=message,
    )
