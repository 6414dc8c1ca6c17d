"""Clarabel interior-point QP engine.

Tracker QPs carry hundreds of zonotope coefficients with no cost of their
own; at the optimum many of them sit on their bounds with tiny multipliers.
That is the regime where splitting methods crawl and active-set codes cycle,
while an interior-point method converges in a few dozen iterations.
"""

from __future__ import annotations

import clarabel
import numpy as np
import scipy.sparse as sp

from .problems import QuadraticProgram, SolveStatus, Status

_SOLVED = {"Solved", "AlmostSolved"}
_INFEASIBLE = {"PrimalInfeasible", "AlmostPrimalInfeasible"}
_UNBOUNDED = {"DualInfeasible", "AlmostDualInfeasible"}
# looser stopping tolerances tried when the solver stalls; callers still
# re-check the answer against their own KKT tolerance
_FALLBACK_TOLS = (1e-8, 1e-7)


class ClarabelQP:
    """QP wrapper with the ``update`` / ``solve`` interface of the ADMM solver.

    Rows are stacked as ``[A; G; -I_lb; I_ub]`` against a zero cone followed
    by a nonnegative cone, so the cone duals map one-to-one onto the
    multiplier convention of :class:`SolveStatus`.
    """

    def __init__(self, qp: QuadraticProgram, tol: float = 1e-9):
        qp.check_convex()
        self.qp = qp
        n = qp.n
        self.me = qp.A.shape[0]
        self.mi = qp.G.shape[0]
        self._set_bound_rows()
        self.P = sp.triu(sp.csc_matrix(qp.H), format="csc")
        self.tol = tol
        self.n = n

    @staticmethod
    def _settings(tol: float):
        s = clarabel.DefaultSettings()
        s.verbose = False
        s.tol_gap_abs = tol
        s.tol_gap_rel = tol
        s.tol_feas = tol
        return s

    def _set_bound_rows(self):
        qp = self.qp
        n = qp.n
        self.lb_idx = np.flatnonzero(np.isfinite(qp.lb))
        self.ub_idx = np.flatnonzero(np.isfinite(qp.ub))
        nl, nu = self.lb_idx.size, self.ub_idx.size
        self.M = sp.vstack(
            [
                sp.csc_matrix(qp.A),
                sp.csc_matrix(qp.G),
                sp.csc_matrix((-np.ones(nl), (np.arange(nl), self.lb_idx)), shape=(nl, n)),
                sp.csc_matrix((np.ones(nu), (np.arange(nu), self.ub_idx)), shape=(nu, n)),
            ],
            format="csc",
        )
        self.cones = [clarabel.ZeroConeT(self.me), clarabel.NonnegativeConeT(self.mi + nl + nu)]

    def update(self, q=None, h=None, b=None, lb=None, ub=None) -> None:
        qp = self.qp
        if q is not None:
            qp.q = np.asarray(q, dtype=float)
        if h is not None:
            qp.h = np.asarray(h, dtype=float)
        if b is not None:
            qp.b = np.asarray(b, dtype=float)
        if lb is not None or ub is not None:
            if lb is not None:
                qp.lb = np.asarray(lb, dtype=float)
            if ub is not None:
                qp.ub = np.asarray(ub, dtype=float)
            self._set_bound_rows()

    def solve(self, warm_start: bool = False) -> SolveStatus:
        qp = self.qp
        rhs = np.concatenate([qp.b, qp.h, -qp.lb[self.lb_idx], qp.ub[self.ub_idx]])
        iters = 0
        for tol in (self.tol,) + tuple(t for t in _FALLBACK_TOLS if t > self.tol):
            sol = clarabel.DefaultSolver(self.P, qp.q, self.M, rhs, self.cones, self._settings(tol)).solve()
            status = str(sol.status)
            iters += int(sol.iterations)
            if status in _SOLVED | _INFEASIBLE | _UNBOUNDED:
                break
        if status in _SOLVED:
            x = np.array(sol.x)
            z = np.array(sol.z)
            me, mi, nl = self.me, self.mi, self.lb_idx.size
            lower = np.zeros(self.n)
            upper = np.zeros(self.n)
            lower[self.lb_idx] = z[me + mi : me + mi + nl]
            upper[self.ub_idx] = z[me + mi + nl :]
            return SolveStatus(
                Status.OPTIMAL,
                objective=qp.objective(x),
                x=x,
                ineq_duals=z[me : me + mi].copy(),
                eq_duals=z[:me].copy(),
                lower_duals=lower,
                upper_duals=upper,
                iterations=iters,
            )
        if status in _INFEASIBLE:
            return SolveStatus(Status.INFEASIBLE, iterations=iters, message=status)
        if status in _UNBOUNDED:
            return SolveStatus(Status.UNBOUNDED, iterations=iters, message=status)
        return SolveStatus(Status.ITERATION_LIMIT, iterations=iters, message=status)
