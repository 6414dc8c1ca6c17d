"""Numeric tolerances and iteration limits shared by every module.

All defaults live here so tests (or scenario files) can tighten them in one place.
"""

from dataclasses import dataclass, replace


@dataclass(frozen=True)
class NumericSettings:
    # linalg
    expm_term_tol: float = 1e-14
    riccati_tol: float = 1e-10
    riccati_max_iter: int = 10_000
    # sets
    membership_tol: float = 1e-8
    mrpi_max_s: int = 500
    mrpi_alpha_target: float = 0.1
    # LP (revised simplex)
    lp_primal_tol: float = 1e-9
    lp_dual_tol: float = 1e-9
    lp_pivot_tol: float = 1e-9
    lp_degenerate_switch: int = 50
    lp_refactor_every: int = 64
    # QP (operator splitting)
    qp_max_iter: int = 20_000
    qp_eps_abs: float = 1e-5
    qp_eps_rel: float = 1e-5
    qp_eps_infeasible: float = 1e-6
    qp_kkt_tol: float = 1e-6
    qp_rho: float = 0.1
    qp_sigma: float = 1e-6
    qp_alpha: float = 1.6
    qp_adaptive_every: int = 25
    # MILP (branch and bound)
    int_tol: float = 1e-6
    mip_gap_abs: float = 1e-6
    node_limit: int = 200_000
    # planner
    big_m: float = 1e4
    plan_verify_tol: float = 1e-6
    obstacle_backoff: float = 1e-6

    def with_overrides(self, **kwargs) -> "NumericSettings":
        return replace(self, **kwargs)


DEFAULT_SETTINGS = NumericSettings()
