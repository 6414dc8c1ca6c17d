"""HiGHS dual simplex as an alternative LP engine.

Used for the large node relaxations inside branch and bound, where a dense
Python simplex is too slow.  The model is loaded once; nodes only change column
bounds, so HiGHS re-solves from the previous basis.
"""

from __future__ import annotations

import highspy
import numpy as np
import scipy.sparse as sp

from .problems import LinearProgram, SolveStatus, Status

_INF = highspy.kHighsInf


def _finite(v: np.ndarray) -> np.ndarray:
    out = np.array(v, dtype=float)
    out[out == np.inf] = _INF
    out[out == -np.inf] = -_INF
    return out


class HighsLP:
    """Persistent HiGHS model of a :class:`LinearProgram` whose bounds may change."""

    def __init__(self, lp: LinearProgram, presolve: bool = False):
        self.lp = lp
        self.mi = lp.G.shape[0]
        rows = sp.vstack([sp.csr_matrix(lp.G), sp.csr_matrix(lp.A)], format="csr")
        self.h = highspy.Highs()
        self.h.setOptionValue("output_flag", False)
        self.h.setOptionValue("threads", 1)
        self.h.setOptionValue("random_seed", 0)
        self.h.setOptionValue("presolve", "on" if presolve else "off")
        self.h.setOptionValue("primal_feasibility_tolerance", 1e-9)
        self.h.setOptionValue("dual_feasibility_tolerance", 1e-9)
        model = highspy.HighsLp()
        model.num_col_ = lp.n
        model.num_row_ = rows.shape[0]
        model.col_cost_ = lp.c.copy()
        model.col_lower_ = _finite(lp.lb)
        model.col_upper_ = _finite(lp.ub)
        model.row_lower_ = _finite(np.concatenate([np.full(self.mi, -np.inf), lp.b]))
        model.row_upper_ = _finite(np.concatenate([lp.h, lp.b]))
        model.a_matrix_.format_ = highspy.MatrixFormat.kRowwise
        model.a_matrix_.start_ = rows.indptr.astype(np.int32)
        model.a_matrix_.index_ = rows.indices.astype(np.int32)
        model.a_matrix_.value_ = rows.data.astype(float)
        model.a_matrix_.num_row_ = rows.shape[0]
        model.a_matrix_.num_col_ = lp.n
        self.h.passModel(model)
        self._lb = lp.lb.copy()
        self._ub = lp.ub.copy()

    def set_bounds(self, lb: np.ndarray, ub: np.ndarray) -> None:
        changed = np.flatnonzero((lb != self._lb) | (ub != self._ub))
        if changed.size:
            self.h.changeColsBounds(
                changed.size, changed.astype(np.int32), _finite(lb[changed]), _finite(ub[changed])
            )
            self._lb[changed] = lb[changed]
            self._ub[changed] = ub[changed]

    def get_basis(self):
        return self.h.getBasis()

    def set_basis(self, basis) -> None:
        self.h.setBasis(basis)

    def solve(self) -> SolveStatus:
        self.h.run()
        return self._result(retry=True)

    def _result(self, retry: bool = False) -> SolveStatus:
        ms = self.h.getModelStatus()
        iters = int(self.h.getInfo().simplex_iteration_count)
        if ms == highspy.HighsModelStatus.kOptimal:
            sol = self.h.getSolution()
            x = np.clip(np.array(sol.col_value), self._lb, self._ub)
            y = np.array(sol.row_dual)
            d = np.array(sol.col_dual)
            return SolveStatus(
                Status.OPTIMAL,
                objective=float(self.lp.c @ x),
                x=x,
                ineq_duals=np.maximum(-y[: self.mi], 0.0),
                eq_duals=-y[self.mi :],
                lower_duals=np.maximum(d, 0.0),
                upper_duals=np.maximum(-d, 0.0),
                iterations=iters,
            )
        if ms == highspy.HighsModelStatus.kInfeasible:
            return SolveStatus(Status.INFEASIBLE, iterations=iters)
        if ms in (highspy.HighsModelStatus.kUnbounded, highspy.HighsModelStatus.kUnboundedOrInfeasible):
            # disambiguate with presolve-free primal phase 1 is overkill here; callers treat both as non-optimal
            return SolveStatus(Status.UNBOUNDED, iterations=iters)
        if ms == highspy.HighsModelStatus.kIterationLimit or not retry:
            return SolveStatus(Status.ITERATION_LIMIT, iterations=iters, message=self.h.modelStatusToString(ms))
        # numerical trouble: retry once from scratch with presolve, which
        # rescales and removes the redundant big-M rows
        self.h.clearSolver()
        self.h.setOptionValue("presolve", "on")
        self.h.run()
        self.h.setOptionValue("presolve", "off")
        if self.h.getModelStatus() in (highspy.HighsModelStatus.kOptimal, highspy.HighsModelStatus.kInfeasible):
            return self._result()
        return SolveStatus(Status.ITERATION_LIMIT, iterations=iters, message=self.h.modelStatusToString(ms))


def solve_lp_highs(lp: LinearProgram) -> SolveStatus:
    return HighsLP(lp, presolve=False).solve()

