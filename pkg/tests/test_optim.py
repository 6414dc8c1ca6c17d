import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.optimize import linprog

from hier_mpc.optim import (
    LinearProgram,
    MixedIntegerLinearProgram,
    QPEngine,
    QuadraticProgram,
    Status,
    dual_objective,
    kkt_residuals,
    solve_lp,
    solve_milp,
    solve_qp,
    to_lp_format,
)

from helpers import brute_force_milp, random_lp, random_milp, random_qp


# LP


def test_lp_single_bound():
    res = solve_lp(LinearProgram([1.0], lb=[1.0]))
    assert res.status is Status.OPTIMAL
    assert res.x[0] == pytest.approx(1.0) and res.objective == pytest.approx(1.0)


def test_lp_box_corner():
    res = solve_lp(LinearProgram([1.0, 1.0], lb=[-1, -1], ub=[1, 1]))
    assert np.allclose(res.x, [-1, -1]) and res.objective == pytest.approx(-2.0)


def test_lp_infeasible():
    res = solve_lp(LinearProgram([1.0], G=[[1.0], [-1.0]], h=[0.0, -1.0]))
    assert res.status is Status.INFEASIBLE


def test_lp_unbounded():
    res = solve_lp(LinearProgram([-1.0, 0.0], G=[[0.0, 1.0]], h=[1.0]))
    assert res.status is Status.UNBOUNDED


def test_lp_degenerate_cycling_example():
    # Beale's example cycles under Dantzig pricing without an anti-cycling rule
    c = [-0.75, 150, -0.02, 6]
    G = [[0.25, -60, -0.04, 9], [0.5, -90, -0.02, 3], [0, 0, 1, 0]]
    res = solve_lp(LinearProgram(c, G, [0, 0, 1], lb=np.zeros(4)))
    assert res.status is Status.OPTIMAL
    assert res.objective == pytest.approx(-0.05, abs=1e-9)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 100_000))
def test_lp_matches_linprog(seed):
    lp = random_lp(np.random.default_rng(seed))
    ours = solve_lp(lp)
    ref = linprog(lp.c, A_ub=lp.G, b_ub=lp.h, A_eq=lp.A if lp.A.shape[0] else None,
                  b_eq=lp.b if lp.A.shape[0] else None, bounds=list(zip(lp.lb, lp.ub)), method="highs")
    assert ours.status is Status.OPTIMAL and ref.status == 0
    assert ours.objective == pytest.approx(ref.fun, abs=1e-7)
    assert lp.max_violation(ours.x) <= 1e-8


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 100_000))
def test_lp_strong_duality(seed):
    lp = random_lp(np.random.default_rng(seed))
    res = solve_lp(lp)
    assert res.optimal
    assert dual_objective(lp, res) == pytest.approx(res.objective, abs=1e-7)
    # dual feasibility: multipliers of inequalities and bounds are non-negative
    assert np.all(res.ineq_duals >= -1e-9)
    assert np.all(res.lower_duals >= -1e-9) and np.all(res.upper_duals >= -1e-9)


# QP


def test_qp_unconstrained_least_squares():
    c = np.array([1.0, -2.0, 0.5])
    res = solve_qp(QuadraticProgram(2 * np.eye(3), -2 * c))
    assert np.allclose(res.x, c, atol=1e-6)


def test_qp_bound_active():
    res = solve_qp(QuadraticProgram([[2.0]], [0.0], lb=[1.0]))
    assert res.x[0] == pytest.approx(1.0, abs=1e-6)


def test_qp_equality_symmetric():
    res = solve_qp(QuadraticProgram(2 * np.eye(2), [0.0, 0.0], A=[[1.0, 1.0]], b=[2.0]))
    assert np.allclose(res.x, [1.0, 1.0], atol=1e-6)


def test_qp_infeasible_is_certified():
    res = solve_qp(QuadraticProgram(np.eye(1), [0.0], G=[[1.0], [-1.0]], h=[0.0, -1.0]))
    assert res.status is Status.INFEASIBLE


def test_qp_unbounded_is_certified():
    # flat along x1 with a linear pull and no bound in that direction
    res = solve_qp(QuadraticProgram(np.diag([1.0, 0.0]), [0.0, -1.0], lb=[-1.0, 0.0]))
    assert res.status is Status.UNBOUNDED


def test_qp_rejects_asymmetric_hessian():
    with pytest.raises(ValueError):
        QuadraticProgram([[1.0, 1.0], [0.0, 1.0]], [0.0, 0.0])


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 100_000))
def test_qp_equality_only_matches_kkt_system(seed):
    rng = np.random.default_rng(seed)
    n, p = 6, 2
    L = rng.normal(size=(n, n))
    H = L @ L.T + 0.1 * np.eye(n)
    q = rng.normal(size=n)
    A = rng.normal(size=(p, n))
    b = rng.normal(size=p)
    K = np.block([[H, A.T], [A, np.zeros((p, p))]])
    x_ref = np.linalg.solve(K, np.concatenate([-q, b]))[:n]
    res = solve_qp(QuadraticProgram(H, q, A=A, b=b))
    assert res.optimal
    assert np.allclose(res.x, x_ref, atol=1e-6)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 100_000))
def test_qp_kkt_residuals_small(seed):
    qp = random_qp(np.random.default_rng(seed))
    res = solve_qp(qp)
    assert res.optimal
    assert kkt_residuals(qp, res).worst() <= 1e-6


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 100_000))
def test_qp_engines_agree(seed):
    qp = random_qp(np.random.default_rng(seed))
    a = QPEngine(qp, engine="admm").solve()
    b = QPEngine(qp, engine="ipm").solve()
    assert a.optimal and b.optimal
    assert a.objective == pytest.approx(b.objective, abs=1e-5, rel=1e-6)


# MILP


def test_milp_big_m_example():
    # min 3b + x  s.t.  x >= 2 - 10 b,  x >= 0
    lp = LinearProgram([1.0, 3.0], G=[[-1.0, -10.0]], h=[-2.0], lb=[0.0, 0.0], ub=[np.inf, 1.0])
    res = solve_milp(MixedIntegerLinearProgram(lp, [1]))
    assert res.optimal
    assert res.x[1] == 0.0 and res.x[0] == pytest.approx(2.0) and res.objective == pytest.approx(2.0)


def test_milp_without_binaries_equals_lp():
    lp = random_lp(np.random.default_rng(5))
    a = solve_milp(MixedIntegerLinearProgram(lp, []))
    b = solve_lp(lp)
    assert a.objective == pytest.approx(b.objective, abs=1e-9)


def test_milp_single_binary():
    res = solve_milp(MixedIntegerLinearProgram(LinearProgram([-1.0]), [0]))
    assert res.optimal and res.x[0] == 1.0 and res.objective == -1.0


def test_milp_infeasible():
    lp = LinearProgram([0.0, 0.0], G=[[1.0, 1.0], [-1.0, -1.0]], h=[1.5, -1.2])
    res = solve_milp(MixedIntegerLinearProgram(lp, [0, 1]))
    assert res.status is Status.INFEASIBLE


def test_milp_node_budget():
    rng = np.random.default_rng(3)
    milp, _ = random_milp(rng, 12)
    from hier_mpc.settings import NumericSettings

    res = solve_milp(milp, NumericSettings(node_limit=1), dive=False)
    assert res.status in (Status.ITERATION_LIMIT, Status.OPTIMAL)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 100_000), st.integers(1, 8))
def test_milp_matches_brute_force(seed, n_bin):
    milp, data = random_milp(np.random.default_rng(seed), n_bin)
    res = solve_milp(milp)
    assert res.optimal
    assert res.objective == pytest.approx(brute_force_milp(data), abs=1e-6)
    xb = res.x[milp.binaries]
    assert np.all((xb == 0) | (xb == 1))


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 100_000))
def test_milp_engines_agree(seed):
    milp, _ = random_milp(np.random.default_rng(seed), 6)
    a = solve_milp(milp, engine="simplex")
    b = solve_milp(milp, engine="highs")
    assert a.objective == pytest.approx(b.objective, abs=1e-6)


def test_milp_is_deterministic():
    milp, _ = random_milp(np.random.default_rng(17), 10)
    a = solve_milp(milp)
    b = solve_milp(milp)
    assert a.objective == b.objective
    assert np.array_equal(a.x[milp.binaries], b.x[milp.binaries])


def test_milp_cutoff_prunes_everything_when_optimum_is_worse():
    milp, _ = random_milp(np.random.default_rng(2), 5)
    best = solve_milp(milp).objective
    res = solve_milp(milp, cutoff=best - 1.0)
    assert res.status is Status.INFEASIBLE and res.message == "cutoff"


def test_lp_format_dump_round_trips_through_reference_solver(tmp_path):
    lp = LinearProgram([1.0, -2.0], G=[[1.0, 1.0]], h=[3.0], lb=[0.0, 0.0], ub=[np.inf, 2.0])
    text = to_lp_format(MixedIntegerLinearProgram(lp, [1]))
    assert text.startswith("Minimize")
    assert "Binaries" in text and "x1" in text.split("Binaries")[1]
    import highspy

    path = tmp_path / "inst.lp"
    path.write_text(text)
    h = highspy.Highs()
    h.setOptionValue("output_flag", False)
    h.readModel(str(path))
    h.run()
    assert h.getInfo().objective_function_value == pytest.approx(solve_milp(MixedIntegerLinearProgram(lp, [1])).objective)
