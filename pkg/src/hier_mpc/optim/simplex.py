"""Bounded revised simplex method (dense, two-phase).

The LP is brought to equality form by adding one slack per inequality row.
Nonbasic variables sit at one of their bounds (free ones at zero), so box
bounds never become explicit rows.  Pricing is Dantzig's rule; after a run of
degenerate pivots it falls back to Bland's smallest-index rule until progress
resumes, which rules out cycling.
"""

from __future__ import annotations

import numpy as np

from ..settings import DEFAULT_SETTINGS, NumericSettings
from .problems import LinearProgram, SolveStatus, Status

_AT_LOWER, _AT_UPPER, _FREE, _BASIC = 0, 1, 2, 3


class _Tableau:
    def __init__(self, Abar, bbar, lower, upper, settings: NumericSettings):
        self.A = Abar
        self.b = bbar
        self.lo = lower
        self.up = upper
        self.s = settings
        self.m, self.ntot = Abar.shape
        self.x = np.zeros(self.ntot)
        self.state = np.empty(self.ntot, dtype=int)
        self.basis = np.zeros(self.m, dtype=int)
        self.Binv = np.eye(self.m)
        self.pivots = 0
        self.since_refactor = 0

    def refactor(self):
        B = self.A[:, self.basis]
        self.Binv = np.linalg.inv(B)
        nonbasic = self.state != _BASIC
        rhs = self.b - self.A[:, nonbasic] @ self.x[nonbasic]
        self.x[self.basis] = self.Binv @ rhs
        self.since_refactor = 0

    def iterate(self, cost: np.ndarray, max_pivots: int) -> Status:
        s = self.s
        degenerate_run = 0
        while True:
            if self.pivots >= max_pivots:
                return Status.ITERATION_LIMIT
            y = cost[self.basis] @ self.Binv if self.m else np.zeros(0)
            d = cost - (y @ self.A if self.m else 0.0)
            st = self.state
            movable = self.up > self.lo
            incr = ((st == _AT_LOWER) | (st == _FREE)) & (d < -s.lp_dual_tol) & movable
            decr = ((st == _AT_UPPER) | (st == _FREE)) & (d > s.lp_dual_tol) & movable
            eligible = np.flatnonzero(incr | decr)
            if eligible.size == 0:
                return Status.OPTIMAL
            if degenerate_run >= s.lp_degenerate_switch:
                j = int(eligible[0])
            else:
                j = int(eligible[np.argmax(np.abs(d[eligible]))])
            direction = 1.0 if incr[j] else -1.0

            alpha = self.Binv @ self.A[:, j] if self.m else np.zeros(0)
            step = np.inf
            if np.isfinite(self.lo[j]) and np.isfinite(self.up[j]):
                step = self.up[j] - self.lo[j]
            leave = -1
            leave_to_upper = False
            move = direction * alpha
            xb = self.x[self.basis]
            lob = self.lo[self.basis]
            upb = self.up[self.basis]
            ratios = np.full(self.m, np.inf)
            dec = move > s.lp_pivot_tol
            inc = move < -s.lp_pivot_tol
            with np.errstate(divide="ignore", invalid="ignore"):
                r_dec = np.where(dec & np.isfinite(lob), (xb - lob) / move, np.inf)
                r_inc = np.where(inc & np.isfinite(upb), (upb - xb) / (-move), np.inf)
            ratios = np.minimum(r_dec, r_inc)
            ratios = np.maximum(ratios, 0.0)
            if self.m and np.isfinite(ratios).any():
                best = np.min(ratios)
                if best < step:
                    ties = np.flatnonzero(ratios <= best + 1e-12)
                    if degenerate_run >= s.lp_degenerate_switch:
                        leave = int(ties[np.argmin(self.basis[ties])])
                    else:
                        leave = int(ties[np.argmax(np.abs(alpha[ties]))])
                    step = ratios[leave]
                    leave_to_upper = bool(r_inc[leave] <= r_dec[leave])
            if not np.isfinite(step):
                return Status.UNBOUNDED

            degenerate_run = degenerate_run + 1 if step <= 1e-12 else 0
            self.x[j] += direction * step
            if self.m:
                self.x[self.basis] -= step * move
            self.pivots += 1
            if leave < 0:
                self.state[j] = _AT_UPPER if direction > 0 else _AT_LOWER
                continue

            out = self.basis[leave]
            self.state[out] = _AT_UPPER if leave_to_upper else _AT_LOWER
            self.x[out] = self.up[out] if leave_to_upper else self.lo[out]
            self.state[j] = _BASIC
            self.basis[leave] = j
            piv = alpha[leave]
            row = self.Binv[leave] / piv
            self.Binv -= np.outer(alpha, row)
            self.Binv[leave] = row
            self.since_refactor += 1
            if self.since_refactor >= s.lp_refactor_every:
                self.refactor()


def solve_lp(lp: LinearProgram, settings: NumericSettings = DEFAULT_SETTINGS) -> SolveStatus:
    """Solve ``lp`` with the bounded revised simplex method.

    On ``Optimal`` the returned record carries the primal point, the objective
    and the multipliers of every constraint class.
    """
    n = lp.n
    mi = lp.G.shape[0]
    me = lp.A.shape[0]
    m = mi + me
    if np.any(lp.lb > lp.ub + settings.lp_primal_tol):
        return SolveStatus(Status.INFEASIBLE, message="empty variable bounds")

    # columns: structural | slacks | artificials
    Abar = np.zeros((m, n + mi + m))
    Abar[:mi, :n] = lp.G
    Abar[mi:, :n] = lp.A
    Abar[:mi, n : n + mi] = np.eye(mi)
    bbar = np.concatenate([lp.h, lp.b])
    lower = np.concatenate([lp.lb, np.zeros(mi), np.zeros(m)])
    upper = np.concatenate([lp.ub, np.full(mi, np.inf), np.full(m, np.inf)])

    tab = _Tableau(Abar, bbar, lower, upper, settings)
    x0 = np.where(np.isfinite(lp.lb), lp.lb, np.where(np.isfinite(lp.ub), lp.ub, 0.0))
    tab.x[:n] = x0
    tab.state[:n] = np.where(np.isfinite(lp.lb), _AT_LOWER, np.where(np.isfinite(lp.ub), _AT_UPPER, _FREE))
    tab.state[n:] = _AT_LOWER

    resid = bbar - Abar[:, :n] @ x0
    art0 = n + mi
    phase1_cost = np.zeros(Abar.shape[1])
    for i in range(m):
        if i < mi and resid[i] >= 0:
            tab.basis[i] = n + i
            tab.x[n + i] = resid[i]
            upper[art0 + i] = 0.0
        else:
            sign = 1.0 if resid[i] >= 0 else -1.0
            Abar[i, art0 + i] = sign
            tab.basis[i] = art0 + i
            tab.x[art0 + i] = abs(resid[i])
            phase1_cost[art0 + i] = 1.0
    tab.state[tab.basis] = _BASIC
    tab.refactor()

    max_pivots = 100 * (n + m)
    if phase1_cost.any():
        status = tab.iterate(phase1_cost, max_pivots)
        if status is Status.ITERATION_LIMIT:
            return SolveStatus(status, iterations=tab.pivots)
        tab.refactor()
        infeas = float(phase1_cost @ tab.x)
        if infeas > settings.lp_primal_tol * max(1.0, np.max(np.abs(bbar), initial=0.0)):
            return SolveStatus(Status.INFEASIBLE, iterations=tab.pivots, message=f"phase-1 residual {infeas:.3e}")
    upper[art0:] = 0.0
    tab.x[art0:] = np.where(tab.state[art0:] == _BASIC, tab.x[art0:], 0.0)

    cost = np.zeros(Abar.shape[1])
    cost[:n] = lp.c
    status = tab.iterate(cost, max_pivots)
    if status is not Status.OPTIMAL:
        return SolveStatus(status, iterations=tab.pivots)
    tab.refactor()

    x = tab.x[:n].copy()
    x = np.clip(x, lp.lb, lp.ub)
    y = cost[tab.basis] @ tab.Binv if m else np.zeros(0)
    d = lp.c - (y @ Abar[:, :n] if m else 0.0)
    st = tab.state[:n]
    lower_duals = np.where(st == _AT_LOWER, np.maximum(d, 0.0), 0.0)
    upper_duals = np.where(st == _AT_UPPER, np.maximum(-d, 0.0), 0.0)
    # fixed variables may carry either sign
    fixed = (lp.ub - lp.lb) <= 0
    lower_duals = np.where(fixed & (st != _BASIC), np.maximum(d, 0.0), lower_duals)
    upper_duals = np.where(fixed & (st != _BASIC), np.maximum(-d, 0.0), upper_duals)
    return SolveStatus(
        Status.OPTIMAL,
        objective=float(lp.c @ x),
        x=x,
        ineq_duals=np.maximum(-y[:mi], 0.0),
        eq_duals=-y[mi:],
        lower_duals=lower_duals,
        upper_duals=upper_duals,
        iterations=tab.pivots,
    )


def dual_objective(lp: LinearProgram, res: SolveStatus) -> float:
    """Lagrange dual value at the multipliers stored in ``res``."""
    val = -lp.h @ res.ineq_duals - lp.b @ res.eq_duals
    lo = np.isfinite(lp.lb)
    up = np.isfinite(lp.ub)
    val += lp.lb[lo] @ res.lower_duals[lo] - lp.ub[up] @ res.upper_duals[up]
    return float(val)
