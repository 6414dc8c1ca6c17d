"""Convex QP solver: ADMM operator splitting with active-set polishing.

Internally every constraint is written as ``l <= C x <= u`` (inequality rows,
equality rows with ``l == u`` and identity rows for finite variable bounds).
The iteration is the usual splitting of that form: one solve with the cached
sparse factor of the quasi-definite matrix ``[[P + sigma I, C'], [C, -1/rho]]``
per step, a projection onto the box ``[l, u]`` and a dual update.  Once the
residuals are moderately small, the active set is read off the duals and an
equality-constrained KKT system is solved; a few primal-dual corrections then
make the polished point exact.  A polished point is only returned when its
KKT residuals pass the acceptance tolerance, otherwise the iteration goes on.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from ..settings import DEFAULT_SETTINGS, NumericSettings
from .clarabel_backend import ClarabelQP
from .problems import QuadraticProgram, SolveStatus, Status

_RHO_EQ_FACTOR = 1e3
_RHO_MIN, _RHO_MAX = 1e-6, 1e6
_POLISH_EPS = 1e-3
_IPM_THRESHOLD = 150
_POLISH_DELTA = 1e-7
_POLISH_REFINE = 25
# active-set polishing can cycle on degenerate rows; after this many failed
# attempts in one solve the loop relies on ADMM alone
_POLISH_ATTEMPTS = 3
_POLISH_SWEEPS = 12


@dataclass
class KKTResiduals:
    stationarity: float
    primal: float
    complementarity: float

    def worst(self) -> float:
        return max(self.stationarity, self.primal, self.complementarity)


def kkt_residuals(qp: QuadraticProgram, res: SolveStatus) -> KKTResiduals:
    """Stationarity, primal feasibility and complementarity of a solve result."""
    x = res.x
    lam = res.ineq_duals if res.ineq_duals is not None else np.zeros(qp.G.shape[0])
    nu = res.eq_duals if res.eq_duals is not None else np.zeros(qp.A.shape[0])
    ml = res.lower_duals if res.lower_duals is not None else np.zeros(qp.n)
    mu = res.upper_duals if res.upper_duals is not None else np.zeros(qp.n)
    grad = qp.H @ x + qp.q + qp.G.T @ lam + qp.A.T @ nu - ml + mu
    stat = float(np.max(np.abs(grad), initial=0.0))
    prim = [0.0]
    comp = [0.0]
    if qp.G.shape[0]:
        slack = qp.G @ x - qp.h
        prim.append(np.max(slack))
        comp.append(np.max(np.abs(lam * slack)))
    if qp.A.shape[0]:
        prim.append(np.max(np.abs(qp.A @ x - qp.b)))
    lo = np.isfinite(qp.lb)
    up = np.isfinite(qp.ub)
    if lo.any():
        prim.append(np.max(qp.lb[lo] - x[lo]))
        comp.append(np.max(np.abs(ml[lo] * (x[lo] - qp.lb[lo]))))
    if up.any():
        prim.append(np.max(x[up] - qp.ub[up]))
        comp.append(np.max(np.abs(mu[up] * (qp.ub[up] - x[up]))))
    if (~lo).any():
        comp.append(np.max(np.abs(ml[~lo])))
    if (~up).any():
        comp.append(np.max(np.abs(mu[~up])))
    return KKTResiduals(stat, float(max(prim)), float(max(comp)))


def _inf_norm(v) -> float:
    return float(np.max(np.abs(v), initial=0.0))


def _col_max(M: sp.spmatrix, n: int) -> np.ndarray:
    if M.shape[0] == 0 or M.nnz == 0:
        return np.zeros(n)
    return np.asarray(abs(M).max(axis=0).todense()).reshape(-1)


def _row_max(M: sp.spmatrix) -> np.ndarray:
    if M.shape[0] == 0:
        return np.zeros(0)
    return np.asarray(abs(M).max(axis=1).todense()).reshape(-1)


class QPSolver:
    """Reusable solver for QPs that share ``H``, ``G``, ``A`` and the bound pattern.

    Vectors (``q``, ``h``, ``b``, ``lb``, ``ub``) may be replaced with
    :meth:`update` between solves; the factorization is kept as long as the
    penalty parameter and the equality pattern do not change.
    """

    def __init__(self, qp: QuadraticProgram, settings: NumericSettings = DEFAULT_SETTINGS):
        qp.check_convex()
        self.s = settings
        self.qp = qp
        n = qp.n
        self.n = n
        self.mi = qp.G.shape[0]
        self.me = qp.A.shape[0]
        self.bound_idx = np.flatnonzero(np.isfinite(qp.lb) | np.isfinite(qp.ub))
        Ib = sp.csr_matrix(
            (np.ones(self.bound_idx.size), (np.arange(self.bound_idx.size), self.bound_idx)),
            shape=(self.bound_idx.size, n),
        )
        self.C = sp.vstack([sp.csr_matrix(qp.G), sp.csr_matrix(qp.A), Ib], format="csr")
        self.H = sp.csr_matrix(qp.H)
        self.mc = self.C.shape[0]
        self._scale()
        self._set_vectors()
        self.rho_base = settings.qp_rho
        self._factor_key = None
        self.x = np.zeros(n)
        self.z = np.zeros(self.mc)
        self.y = np.zeros(self.mc)

    # ---- setup -------------------------------------------------------------
    def _scale(self):
        P = self.H.copy().tocsr()
        C = self.C.copy()
        n, mc = self.n, self.mc
        D = np.ones(n)
        E = np.ones(mc)
        for _ in range(10):
            col = np.maximum(_col_max(P, n), _col_max(C, n))
            dk = 1.0 / np.sqrt(np.clip(col, 1e-4, 1e4))
            ek = 1.0 / np.sqrt(np.clip(_row_max(C), 1e-4, 1e4))
            Dk = sp.diags(dk)
            P = (Dk @ P @ Dk).tocsr()
            C = (sp.diags(ek) @ C @ Dk).tocsr()
            D *= dk
            E *= ek
        self.D, self.E = D, E
        self.Pbar = P
        self.Cbar = C
        self.CbarT = C.T.tocsr()
        self.cost_scale = 1.0

    def _set_vectors(self):
        qp = self.qp
        self.l = np.concatenate([np.full(self.mi, -np.inf), qp.b, qp.lb[self.bound_idx]])
        self.u = np.concatenate([qp.h, qp.b, qp.ub[self.bound_idx]])
        qbar = self.D * qp.q
        pnorm = float(np.mean(_col_max(self.Pbar, self.n))) if self.n else 0.0
        c = 1.0 / np.clip(max(pnorm, _inf_norm(qbar)), 1e-4, 1e4)
        if c != self.cost_scale:
            self._factor_key = None
        self.cost_scale = c
        self.qbar = c * qbar
        self.lbar = self.E * self.l
        self.ubar = self.E * self.u
        self.eq_rows = np.abs(self.u - self.l) < 1e-12

    def update(self, q=None, h=None, b=None, lb=None, ub=None) -> None:
        qp = self.qp
        if q is not None:
            qp.q = np.asarray(q, dtype=float)
        if h is not None:
            qp.h = np.asarray(h, dtype=float)
        if b is not None:
            qp.b = np.asarray(b, dtype=float)
        if lb is not None:
            qp.lb = np.asarray(lb, dtype=float)
        if ub is not None:
            qp.ub = np.asarray(ub, dtype=float)
        self._set_vectors()

    def _rho_vec(self, rho: float) -> np.ndarray:
        r = np.full(self.mc, rho)
        r[self.eq_rows] = rho * _RHO_EQ_FACTOR
        return r

    def _factor(self, rho: float):
        key = (rho, self.cost_scale, self.eq_rows.tobytes())
        if self._factor_key == key:
            return
        self.rho_vec = self._rho_vec(rho)
        top = self.cost_scale * self.Pbar + self.s.qp_sigma * sp.identity(self.n)
        K = sp.bmat([[top, self.CbarT], [self.Cbar, sp.diags(-1.0 / self.rho_vec)]], format="csc")
        self.lu = spla.splu(K, permc_spec="MMD_AT_PLUS_A", diag_pivot_thresh=0.0, options={"SymmetricMode": True})
        self._factor_key = key

    # ---- main loop ---------------------------------------------------------
    def solve(self, warm_start: bool = False) -> SolveStatus:
        s = self.s
        qp = self.qp
        if np.any(qp.lb > qp.ub) or np.any(self.l > self.u):
            return SolveStatus(Status.INFEASIBLE, message="inconsistent bounds")
        if not warm_start:
            self.x = np.zeros(self.n)
            self.z = np.clip(np.zeros(self.mc), self.lbar, self.ubar)
            self.y = np.zeros(self.mc)
        rho = self.rho_base
        self._factor(rho)
        n = self.n
        x, z, y = self.x, self.z, self.y
        sigma, alpha = s.qp_sigma, s.qp_alpha
        Cbar, CbarT, qbar = self.Cbar, self.CbarT, self.qbar
        Dinv = 1.0 / self.D
        Einv = 1.0 / self.E if self.mc else np.zeros(0)
        c_inv = 1.0 / self.cost_scale
        eps_abs, eps_rel = s.qp_eps_abs, s.qp_eps_rel
        last_guess = None
        attempts = 0
        for it in range(1, s.qp_max_iter + 1):
            x_prev, y_prev = x, y
            rinv = 1.0 / self.rho_vec
            sol = self.lu.solve(np.concatenate([sigma * x - qbar, z - rinv * y]))
            xt = sol[:n]
            zt = z + rinv * (sol[n:] - y)
            x = alpha * xt + (1 - alpha) * x
            zh = alpha * zt + (1 - alpha) * z
            z = np.clip(zh + rinv * y, self.lbar, self.ubar)
            y = y + self.rho_vec * (zh - z)

            if it % 10 and it != s.qp_max_iter:
                continue
            Cx = Cbar @ x
            Px = self.cost_scale * (self.Pbar @ x)
            Cty = CbarT @ y
            r_prim = _inf_norm(Einv * (Cx - z))
            r_dual = c_inv * _inf_norm(Dinv * (Px + qbar + Cty))
            n_prim = max(_inf_norm(Einv * Cx), _inf_norm(Einv * z))
            n_dual = c_inv * max(_inf_norm(Dinv * Px), _inf_norm(Dinv * Cty), _inf_norm(Dinv * qbar))
            converged = r_prim <= eps_abs + eps_rel * n_prim and r_dual <= eps_abs + eps_rel * n_dual
            close = r_prim <= _POLISH_EPS * (1 + n_prim) and r_dual <= _POLISH_EPS * (1 + n_dual)
            if converged or close:
                guess = self._active_guess(z, y)
                fresh = last_guess is None or np.any(guess != last_guess)
                if attempts < _POLISH_ATTEMPTS and (converged or fresh):
                    attempts += 1
                    last_guess = guess
                    self.x, self.z, self.y = x, z, y
                    polished = self._polish(guess)
                    if polished is not None:
                        polished.iterations = it
                        return polished
                if converged:
                    eps_abs *= 0.1
                    eps_rel *= 0.1
                    if eps_abs < 1e-12:
                        res = self._unscaled_result(x, y, it)
                        if kkt_residuals(qp, res).worst() <= s.qp_kkt_tol:
                            return res
                        eps_abs = eps_rel = 1e-12
            if self.mc and self._primal_infeasible(y - y_prev):
                self.x, self.z, self.y = x, z, y
                return SolveStatus(Status.INFEASIBLE, iterations=it, message="primal infeasibility certificate")
            if self._dual_infeasible(x - x_prev):
                return SolveStatus(Status.UNBOUNDED, iterations=it, message="dual infeasibility certificate")
            if it % s.qp_adaptive_every == 0 and r_prim > 0 and r_dual > 0:
                ratio = np.sqrt((r_prim / max(n_prim, 1e-12)) / (r_dual / max(n_dual, 1e-12)))
                if ratio > 5 or ratio < 0.2:
                    rho = float(np.clip(rho * ratio, _RHO_MIN, _RHO_MAX))
                    self._factor(rho)
        self.x, self.z, self.y = x, z, y
        res = self._unscaled_result(x, y, s.qp_max_iter)
        res.status = Status.ITERATION_LIMIT
        return res

    def _primal_infeasible(self, dy: np.ndarray) -> bool:
        eps = self.s.qp_eps_infeasible
        Edy = self.E * dy
        norm = _inf_norm(Edy)
        if norm < 1e-10:
            return False
        dy = dy / norm
        if _inf_norm((1.0 / self.D) * (self.CbarT @ dy)) > eps:
            return False
        pos, neg = dy > 0, dy < 0
        if np.any(np.isinf(self.ubar[pos])) or np.any(np.isinf(self.lbar[neg])):
            return False
        val = self.ubar[pos] @ dy[pos] + self.lbar[neg] @ dy[neg]
        return bool(val < -eps)

    def _dual_infeasible(self, dx: np.ndarray) -> bool:
        eps = self.s.qp_eps_infeasible
        norm = _inf_norm(self.D * dx)
        if norm < 1e-10:
            return False
        dx = dx / norm
        if _inf_norm((1.0 / self.D) * (self.cost_scale * (self.Pbar @ dx))) > eps * self.cost_scale:
            return False
        if self.qbar @ dx >= -eps * self.cost_scale:
            return False
        Cdx = (1.0 / self.E) * (self.Cbar @ dx) if self.mc else np.zeros(0)
        lo_inf = np.isinf(self.lbar)
        up_inf = np.isinf(self.ubar)
        ok = np.where(
            lo_inf & up_inf,
            True,
            np.where(up_inf, Cdx >= -eps, np.where(lo_inf, Cdx <= eps, np.abs(Cdx) <= eps)),
        )
        return bool(np.all(ok))

    # ---- results -----------------------------------------------------------
    def _split_duals(self, x: np.ndarray, yc: np.ndarray, iterations: int, status=Status.OPTIMAL) -> SolveStatus:
        qp = self.qp
        mi, me = self.mi, self.me
        yG = yc[:mi]
        yA = yc[mi : mi + me]
        yB = yc[mi + me :]
        lower = np.zeros(self.n)
        upper = np.zeros(self.n)
        lower[self.bound_idx] = np.maximum(-yB, 0.0)
        upper[self.bound_idx] = np.maximum(yB, 0.0)
        return SolveStatus(
            status,
            objective=qp.objective(x),
            x=x,
            ineq_duals=np.maximum(yG, 0.0),
            eq_duals=yA.copy(),
            lower_duals=lower,
            upper_duals=upper,
            iterations=iterations,
        )

    def _unscaled_result(self, xbar, ybar, iterations) -> SolveStatus:
        x = self.D * xbar
        yc = self.E * ybar / self.cost_scale if self.mc else np.zeros(0)
        return self._split_duals(x, yc, iterations)

    def _active_guess(self, zbar, ybar) -> np.ndarray:
        """Row labels read off the iterate: 0 inactive, 1 at upper, -1 at lower, 2 equality."""
        z = zbar / self.E if self.mc else zbar
        y = self.E * ybar / self.cost_scale if self.mc else ybar
        eq = self.eq_rows
        guess = np.zeros(self.mc, dtype=np.int8)
        guess[~eq & np.isfinite(self.l) & (z - self.l < -y)] = -1
        guess[~eq & np.isfinite(self.u) & (self.u - z < y)] = 1
        guess[eq] = 2
        return guess

    def _polish(self, guess: np.ndarray) -> SolveStatus | None:
        """Solve the KKT system on the guessed active set, then correct it.

        The linear solves are proximal-point refinements started from the
        current iterate, so coordinates the active set leaves undetermined
        (zero curvature, dependent rows) stay close to the iterate instead of
        jumping to a minimum-norm point.
        """
        qp = self.qp
        tol = self.s.qp_kkt_tol
        C, l, u = self.C, self.l, self.u
        eq = guess == 2
        lower_act = guess == -1
        upper_act = guess == 1
        Cn = np.sqrt(np.asarray(C.multiply(C).sum(axis=1)).reshape(-1)) if self.mc else np.zeros(0)
        x = self.D * self.x
        yfull = self.E * self.y / self.cost_scale if self.mc else np.zeros(0)
        for _ in range(_POLISH_SWEEPS):
            act = np.flatnonzero(eq | lower_act | upper_act)
            target = np.where(upper_act | eq, u, l)[act]
            sol = self._kkt_solve(C[act], target, x, yfull[act])
            if sol is None:
                return None
            x, ya = sol
            yfull = np.zeros(self.mc)
            yfull[act] = ya
            Cx = C @ x if self.mc else np.zeros(0)
            viol_hi = Cx - u
            viol_lo = l - Cx
            bad_sign_lo = lower_act & (yfull > tol)
            bad_sign_hi = upper_act & (yfull < -tol)
            add_hi = ~upper_act & ~eq & (viol_hi > tol * np.maximum(1.0, Cn))
            add_lo = ~lower_act & ~eq & (viol_lo > tol * np.maximum(1.0, Cn))
            if not (bad_sign_lo.any() or bad_sign_hi.any() or add_hi.any() or add_lo.any()):
                yc = np.where(eq, yfull, np.where(upper_act, np.maximum(yfull, 0), np.minimum(yfull, 0)))
                res = self._split_duals(x, yc, 0)
                if kkt_residuals(qp, res).worst() <= tol:
                    return res
                return None
            # release every wrong-sign multiplier and add the violated rows
            lower_act &= ~bad_sign_lo
            upper_act &= ~bad_sign_hi
            upper_act |= add_hi
            lower_act |= add_lo & ~upper_act
        return None

    def _kkt_solve(self, CA: sp.spmatrix, target: np.ndarray, x0: np.ndarray, y0: np.ndarray):
        qp = self.qp
        n, na = self.n, CA.shape[0]
        K = sp.bmat([[self.H, CA.T], [CA, None]], format="csc") if na else self.H.tocsc()
        reg = sp.diags(np.concatenate([np.full(n, _POLISH_DELTA), np.full(na, -_POLISH_DELTA)]))
        rhs = np.concatenate([-qp.q, target])
        try:
            lu = spla.splu((K + reg).tocsc())
        except RuntimeError:
            return None
        sol = np.concatenate([x0, y0])
        scale = max(1.0, _inf_norm(rhs))
        for _ in range(_POLISH_REFINE):
            r = rhs - K @ sol
            if _inf_norm(r) < 1e-13 * scale:
                break
            sol = sol + lu.solve(r)
        if not np.all(np.isfinite(sol)):
            return None
        return sol[:n], sol[n:]


class QPEngine:
    """Cached QP solver that picks an engine by size and checks what it returns.

    ``engine`` is ``"admm"`` (the solver above), ``"ipm"`` (the Clarabel
    interior-point method) or ``"auto"``, which uses the interior-point method
    once the variable plus row count exceeds ``_IPM_THRESHOLD``.  An Optimal
    answer from the interior-point method is re-checked with
    :func:`kkt_residuals` and re-solved with ADMM if it misses the tolerance.
    """

    def __init__(self, qp: QuadraticProgram, settings: NumericSettings = DEFAULT_SETTINGS, engine: str = "auto"):
        if engine not in ("auto", "admm", "ipm"):
            raise ValueError(f"unknown QP engine {engine!r}")
        size = qp.n + qp.G.shape[0] + qp.A.shape[0]
        if engine == "auto":
            engine = "ipm" if size > _IPM_THRESHOLD else "admm"
        self.engine = engine
        self.qp = qp
        self.settings = settings
        self._admm = QPSolver(qp, settings) if engine == "admm" else None
        self._ipm = ClarabelQP(qp) if engine == "ipm" else None

    def update(self, **vectors) -> None:
        if self._ipm is not None:
            self._ipm.update(**vectors)
        if self._admm is not None:
            self._admm.update(**vectors)

    def solve(self, warm_start: bool = False) -> SolveStatus:
        if self._ipm is None:
            return self._admm.solve(warm_start)
        res = self._ipm.solve()
        if res.optimal and kkt_residuals(self.qp, res).worst() <= self.settings.qp_kkt_tol:
            return res
        if res.status in (Status.INFEASIBLE, Status.UNBOUNDED):
            return res
        if self._admm is None:
            self._admm = QPSolver(self.qp, self.settings)
        out = self._admm.solve()
        out.message = (out.message + "; " if out.message else "") + "interior-point answer failed the KKT check"
        return out


def solve_qp(qp: QuadraticProgram, settings: NumericSettings = DEFAULT_SETTINGS, engine: str = "admm") -> SolveStatus:
    """Solve a convex QP (``H`` positive semidefinite)."""
    if engine == "admm":
        return QPSolver(qp, settings).solve()
    return QPEngine(qp, settings, engine).solve()
