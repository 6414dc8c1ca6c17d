"""Write LP / MILP instances in the CPLEX LP text format for external cross-checks."""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .problems import LinearProgram, MixedIntegerLinearProgram


def _expr(row: np.ndarray) -> str:
    terms = []
    for j in np.flatnonzero(row):
        coef = row[j]
        sign = "-" if coef < 0 else "+"
        terms.append(f"{sign} {abs(coef):.17g} x{j}")
    if not terms:
        return "0 x0"
    text = " ".join(terms)
    return text[2:] if text.startswith("+ ") else text


def to_lp_format(problem: LinearProgram | MixedIntegerLinearProgram) -> str:
    if isinstance(problem, MixedIntegerLinearProgram):
        lp, binaries = problem.lp, problem.binaries
    else:
        lp, binaries = problem, np.zeros(0, dtype=int)
    lines = ["Minimize", f" obj: {_expr(lp.c)}", "Subject To"]
    for i in range(lp.G.shape[0]):
        lines.append(f" c{i}: {_expr(lp.G[i])} <= {lp.h[i]:.17g}")
    for i in range(lp.A.shape[0]):
        lines.append(f" e{i}: {_expr(lp.A[i])} = {lp.b[i]:.17g}")
    lines.append("Bounds")
    bin_set = set(binaries.tolist())
    for j in range(lp.n):
        if j in bin_set:
            continue
        lo, up = lp.lb[j], lp.ub[j]
        if np.isinf(lo) and np.isinf(up):
            lines.append(f" x{j} free")
        else:
            lo_s = "-inf" if np.isinf(lo) else f"{lo:.17g}"
            up_s = "+inf" if np.isinf(up) else f"{up:.17g}"
            lines.append(f" {lo_s} <= x{j} <= {up_s}")
    if binaries.size:
        lines.append("Binaries")
        lines.append(" " + " ".join(f"x{j}" for j in binaries))
    lines.append("End")
    return "\n".join(lines) + "\n"


def write_lp_file(problem, path) -> Path:
    path = Path(path)
    path.write_text(to_lp_format(problem))
    return path
