"""LP, QP and MILP solvers used by the planner and tracker."""

from .problems import LinearProgram, MixedIntegerLinearProgram, QuadraticProgram, SolveStatus, Status
from .qp import QPEngine, QPSolver, kkt_residuals, solve_qp
from .simplex import dual_objective, solve_lp

__all__ = [
    "LinearProgram",
    "MixedIntegerLinearProgram",
    "QuadraticProgram",
    "SolveStatus",
    "Status",
    "QPEngine",
    "QPSolver",
    "kkt_residuals",
    "solve_qp",
    "dual_objective",
    "solve_lp",
]

from .lpformat import to_lp_format, write_lp_file  # noqa: E402
from .milp import solve_milp  # noqa: E402

__all__ += ["solve_milp", "to_lp_format", "write_lp_file"]
