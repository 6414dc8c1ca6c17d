"""Shared generators and brute-force oracles for the test suite."""

import itertools

import numpy as np

from hier_mpc.convex_sets import Zonotope
from hier_mpc.optim import LinearProgram, MixedIntegerLinearProgram, QuadraticProgram


def random_stable_system(rng, n, rho_range=(0.3, 0.8)):
    """Random A_K with prescribed spectral radius and a full-dimensional centered W."""
    A = rng.normal(size=(n, n))
    rho = np.max(np.abs(np.linalg.eigvals(A)))
    A_K = A * rng.uniform(*rho_range) / rho
    p = n + int(rng.integers(0, 3))
    while True:
        G = rng.normal(size=(n, p)) * 0.2
        if np.linalg.matrix_rank(G) == n:
            return A_K, Zonotope(np.zeros(n), G)


def support_oracle(center, G, a):
    """Closed-form zonotope support, written out independently of the library."""
    a = np.asarray(a, dtype=float)
    return float(a @ center + sum(abs(a @ G[:, i]) for i in range(G.shape[1])))


def zonotope_vertices(Z):
    """All 2^p corner combinations (a superset of the vertices)."""
    p = Z.G.shape[1]
    return np.array([Z.center + Z.G @ np.array(s) for s in itertools.product((-1.0, 1.0), repeat=p)])


def unit_directions(rng, n, count):
    D = rng.normal(size=(count, n))
    return D / np.linalg.norm(D, axis=1, keepdims=True)


def box(lo, hi):
    return {"box": {"lo": list(lo), "hi": list(hi)}}


def line_scenario_data(**overrides):
    """Small 1-D double-integrator scenario document (runs in well under a second)."""
    data = {
        "name": "line",
        "model": {"kind": "double_integrator", "dims": 1, "dt_track": 0.1, "steps_per_plan": 5},
        "horizon": 8,
        "start": [0.0, 0.0],
        "goal": [2.0, 0.0],
        "constraints": {"X": box([-1, -1], [6, 1]), "U": box([-1], [1])},
        "obstacles": [],
        "modes": [{"name": "only", "X": box([-1, -1], [6, 1]), "U": box([-1], [1]), "W": {"box": [0.005, 0.01]}}],
        "gain": {"lqr": {"Q": {"diag": [10, 1]}, "R": {"diag": [0.1]}}},
        "mrpi_alpha_target": 0.3,
        "disturbance": {"kind": "uniform_in_mode_set"},
        "K_max": 200,
    }
    data.update(overrides)
    return data


def random_lp(rng, n=None, m=None, p=None):
    """Bounded LP that is feasible by construction."""
    n = n or int(rng.integers(2, 9))
    m = m if m is not None else int(rng.integers(1, 10))
    p = p if p is not None else int(rng.integers(0, min(n, 3)))
    x0 = rng.uniform(-1, 1, n)
    G = rng.normal(size=(m, n))
    h = G @ x0 + rng.uniform(0.1, 1.0, m)
    A = rng.normal(size=(p, n))
    b = A @ x0
    return LinearProgram(rng.normal(size=n), G, h, A, b, lb=np.full(n, -5.0), ub=np.full(n, 5.0))


def random_qp(rng):
    """Convex QP, feasible and bounded by construction."""
    n = int(rng.integers(2, 16))
    rank = int(rng.integers(1, n + 1))
    L = rng.normal(size=(n, rank))
    H = L @ L.T
    x0 = rng.uniform(-1, 1, n)
    m = int(rng.integers(0, 2 * n))
    p = int(rng.integers(0, max(1, n // 2)))
    G = rng.normal(size=(m, n))
    h = G @ x0 + rng.uniform(0.0, 1.0, m)
    A = rng.normal(size=(p, n))
    lb = np.where(rng.random(n) < 0.5, x0 - rng.uniform(0, 1, n), -np.inf)
    ub = np.where(rng.random(n) < 0.5, x0 + rng.uniform(0, 1, n), np.inf)
    # a singular H needs a bounded feasible set, so close the box loosely
    lb = np.where(np.isinf(lb), x0 - 10.0, lb)
    ub = np.where(np.isinf(ub), x0 + 10.0, ub)
    return QuadraticProgram(H, rng.normal(size=n), G, h, A, A @ x0, lb, ub)


def random_milp(rng, n_bin):
    """3 continuous variables in a box plus ``n_bin`` binaries; feasible by construction."""
    n_c = 3
    m = int(rng.integers(4, 9))
    x0 = rng.uniform(-2, 2, n_c)
    b0 = rng.integers(0, 2, n_bin).astype(float)
    Gx = rng.normal(size=(m, n_c))
    Gb = rng.normal(size=(m, n_bin)) * 2.0
    h = Gx @ x0 + Gb @ b0 + rng.uniform(0.0, 1.0, m)
    c = rng.normal(size=n_c + n_bin)
    lb = np.concatenate([np.full(n_c, -3.0), np.zeros(n_bin)])
    ub = np.concatenate([np.full(n_c, 3.0), np.ones(n_bin)])
    lp = LinearProgram(c, np.hstack([Gx, Gb]), h, lb=lb, ub=ub)
    return MixedIntegerLinearProgram(lp, np.arange(n_c, n_c + n_bin)), (Gx, Gb, h, c[:n_c], c[n_c:])


def brute_force_milp(data):
    """Enumerate every binary assignment; each LP is solved by vertex enumeration.

    The continuous part is a 3-D box intersected with halfspaces, so the
    optimum of every LP sits at a vertex formed by three active rows.
    """
    Gx, Gb, h, cx, cb = data
    n_bin = Gb.shape[1]
    rows = np.vstack([Gx, np.eye(3), -np.eye(3)])
    assignments = np.array(list(itertools.product((0.0, 1.0), repeat=n_bin)))
    rhs = np.concatenate(
        [h[None, :] - assignments @ Gb.T, np.full((len(assignments), 6), 3.0)], axis=1
    )  # (K, R)
    best = np.inf
    for tri in itertools.combinations(range(rows.shape[0]), 3):
        F = rows[list(tri)]
        if abs(np.linalg.det(F)) < 1e-10:
            continue
        X = np.linalg.solve(F, rhs[:, list(tri)].T).T  # (K, 3)
        feasible = np.all(X @ rows.T <= rhs + 1e-9, axis=1)
        if np.any(feasible):
            vals = X[feasible] @ cx + assignments[feasible] @ cb
            best = min(best, float(vals.min()))
    return best
