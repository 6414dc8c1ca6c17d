import csv
import io

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hier_mpc.convex_sets import HPolytope, Obstacle, Zonotope, zonotope_contains
from hier_mpc.linalg import LtiModel
from hier_mpc.scenario import GustSpec, parse_scenario
from hier_mpc.sim import (
    BLOCKED,
    INITIAL_INFEASIBLE,
    MAX_STEPS,
    SUCCESS,
    DisturbancePolicy,
    obstacle_margin,
    read_log_csv,
    run_closed_loop,
    sample_disturbance,
    step_plant,
    verify_log,
)

from helpers import box, line_scenario_data


def line(**overrides):
    return parse_scenario(line_scenario_data(**overrides))


@pytest.fixture(scope="module")
def walled():
    """Line scenario with an obstacle beyond the goal, run once for the tamper tests."""
    sc = line(obstacles=[{"name": "wall", "set": box([3.0], [4.0])}])
    log = run_closed_loop(sc, seed=3)
    assert log.outcome == SUCCESS
    return sc, log


def rewrite(text, index, **fields):
    rows = list(csv.DictReader(io.StringIO(text)))
    rows[index].update({k: str(v) for k, v in fields.items()})
    out = io.StringIO()
    writer = csv.DictWriter(out, fieldnames=list(rows[0].keys()), lineterminator="\n")
    writer.writeheader()
    writer.writerows(rows)
    return out.getvalue()


# plant and disturbances


def test_step_plant_scalar():
    model = LtiModel(0.5, 1.0, 1.0, 1.0)
    assert step_plant(model, [2.0], [1.0], [0.1])[0] == pytest.approx(2.1)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000))
def test_uniform_disturbance_stays_in_bound(seed):
    W = Zonotope(np.zeros(2), np.array([[0.1, 0.02, 0.0], [0.0, 0.05, 0.03]]))
    rng = np.random.default_rng(seed)
    for _ in range(20):
        assert zonotope_contains(W, sample_disturbance(DisturbancePolicy("uniform_in_mode_set"), W, rng))


def test_vertex_disturbance_hits_corners():
    W = Zonotope.box([0.1, 0.2])
    w = sample_disturbance(DisturbancePolicy("vertex_worst_case"), W, np.random.default_rng(0))
    assert np.allclose(np.abs(w), [0.1, 0.2])


def test_scaled_and_zero_disturbances():
    W = Zonotope.box([0.1])
    rng = np.random.default_rng(0)
    assert sample_disturbance(DisturbancePolicy("none"), W, rng)[0] == 0.0
    w = sample_disturbance(DisturbancePolicy("vertex_worst_case", scale=0.5), W, rng)
    assert abs(w[0]) == pytest.approx(0.05)
    with pytest.raises(ValueError):
        sample_disturbance(DisturbancePolicy("gale"), W, rng)


def test_gust_only_inside_its_interval():
    W = Zonotope.box([1e-9, 1e-9])
    gust = GustSpec(np.array([0.0, 1.0]), 0.5, [(10, 20)])
    pol = DisturbancePolicy("wind_gust", gust=gust)
    rng = np.random.default_rng(0)
    assert sample_disturbance(pol, W, rng, k=9)[1] == pytest.approx(0.0, abs=1e-8)
    assert sample_disturbance(pol, W, rng, k=10)[1] == pytest.approx(0.5, abs=1e-8)
    assert sample_disturbance(pol, W, rng, k=20)[1] == pytest.approx(0.0, abs=1e-8)


def test_obstacle_margin():
    obs = [Obstacle(HPolytope.box([1.0, 1.0], [2.0, 2.0]))]
    assert obstacle_margin(np.array([0.0, 1.5]), obs) == pytest.approx(1.0)
    assert obstacle_margin(np.array([1.0, 1.5]), obs) == 0.0
    assert obstacle_margin(np.array([1.5, 1.5]), obs) == pytest.approx(-0.5)
    assert obstacle_margin(np.zeros(2), []) == np.inf


# closed loop


def test_start_at_goal_finishes_immediately():
    log = run_closed_loop(line(goal=[0.0, 0.0]))
    assert log.outcome == SUCCESS
    assert len(log.steps) == 1 and log.steps[0].k == 0


def test_line_run_reaches_goal_cleanly(walled):
    sc, log = walled
    rep = verify_log(log.to_csv(), sc)
    assert rep.clean and rep.guarantees_in_force and rep.reached_goal and rep.initial_plan_optimal
    assert rep.contract_checks >= 2 and rep.contract_failures == 0
    assert rep.steps == len(log.steps)


def test_same_seed_same_log():
    sc = line()
    assert run_closed_loop(sc, seed=5).to_csv() == run_closed_loop(sc, seed=5).to_csv()
    assert run_closed_loop(sc, seed=5).to_csv() != run_closed_loop(sc, seed=6).to_csv()


def test_csv_column_order():
    log = run_closed_loop(line(goal=[0.5, 0.0]))
    header = log.to_csv().splitlines()[0].split(",")
    assert header == [
        "k", "t", "x0", "x1", "u0", "w0", "w1", "mode", "L_k",
        "plan_status", "qp_status", "contract_ok", "obstacle_margin",
    ]


def test_step_limit_reported():
    log = run_closed_loop(line(K_max=7))
    assert log.outcome == MAX_STEPS and log.steps[-1].k == 7


def test_moving_toward_a_wall_is_initially_infeasible():
    sc = line(start=[0.0, 1.0], goal=[0.5, 0.0], obstacles=[{"set": box([0.3], [0.6])}])
    log = run_closed_loop(sc)
    assert log.outcome == INITIAL_INFEASIBLE
    rep = verify_log(log.to_csv(), sc)
    assert not rep.initial_plan_optimal and rep.feasibility_breaks == 0


def test_no_progress_is_reported_as_blocked():
    # the goal sits behind a wall the 1-D vehicle cannot pass
    sc = line(goal=[5.0, 0.0], obstacles=[{"set": box([3.0], [4.0])}])
    log = run_closed_loop(sc, stall_plans=3)
    assert log.outcome == BLOCKED
    assert verify_log(log.to_csv(), sc).clean


# verifier


def test_verifier_counts_a_planted_intrusion(walled):
    sc, log = walled
    text = rewrite(log.to_csv(), 10, x0=3.5)
    rep = verify_log(text, sc)
    assert rep.obstacle_intrusions == 1
    assert rep.state_violations == 0


def test_verifier_boundary_is_safe(walled):
    sc, log = walled
    assert verify_log(rewrite(log.to_csv(), 10, x0=3.0), sc).obstacle_intrusions == 0


def test_verifier_counts_state_and_input_violations(walled):
    sc, log = walled
    text = rewrite(log.to_csv(), 4, x1=1.2)
    text = rewrite(text, 6, u0=-1.5)
    rep = verify_log(text, sc)
    assert rep.state_violations == 1 and rep.input_violations == 1
    assert not rep.clean


def test_verifier_counts_contract_and_feasibility_breaks(walled):
    sc, log = walled
    text = rewrite(log.to_csv(), 5, contract_ok=0)
    text = rewrite(text, 10, plan_status="Infeasible")
    rep = verify_log(text, sc)
    assert rep.contract_failures == 1 and rep.feasibility_breaks == 1


def test_out_of_bound_disturbance_voids_guarantees(walled):
    sc, log = walled
    rep = verify_log(rewrite(log.to_csv(), 3, w0=0.5), sc)
    assert rep.out_of_bound_disturbances == 1
    assert not rep.guarantees_in_force
    assert rep.to_dict()["guarantees_in_force"] == "not in force"


def test_verifier_needs_only_the_csv(walled):
    sc, log = walled
    assert verify_log(log, sc) == verify_log(log.to_csv(), sc)
    with pytest.raises(ValueError):
        read_log_csv("k,t\n")


def test_gust_run_is_flagged_but_recovers():
    gust = {"direction": [0.0, 1.0], "magnitude": 0.05, "intervals": [[3, 8]]}
    sc = line(disturbance={"kind": "wind_gust", "gust": gust})
    log = run_closed_loop(sc)
    rep = verify_log(log.to_csv(), sc)
    assert log.outcome == SUCCESS and rep.reached_goal
    assert rep.out_of_bound_disturbances == 5 and not rep.guarantees_in_force
