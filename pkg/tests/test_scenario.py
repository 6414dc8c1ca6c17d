import json

import numpy as np
import pytest

from hier_mpc.scenario import (
    EXIT_PARSE,
    EXIT_SCHEMA,
    EXIT_SEMANTIC,
    ScenarioError,
    bundled_scenario,
    dump_scenario,
    load_scenario,
    parse_scenario,
    random_planar_scenario,
    setup_scenario,
)

from helpers import box, line_scenario_data

BUNDLED = ["quadcopter_two_mode", "quadcopter_gust", "quadcopter_benchmark", "corridor", "horizon"]


def expect_error(data, code, fragment=""):
    with pytest.raises(ScenarioError) as info:
        parse_scenario(data)
    assert info.value.exit_code == code
    assert fragment in str(info.value)


def test_minimal_line_scenario():
    sc = parse_scenario(line_scenario_data())
    assert sc.model_kind == "double_integrator" and sc.dims == 1
    assert sc.N == 8 and sc.M == 5 and len(sc.modes) == 1
    assert sc.bundle().n == 2


def test_defaults_when_optional_blocks_missing():
    data = line_scenario_data()
    for key in ("gain", "disturbance", "K_max", "mrpi_alpha_target"):
        data.pop(key)
    sc = parse_scenario(data)
    assert np.array_equal(sc.lqr_Q, np.eye(2)) and np.array_equal(sc.lqr_R, np.eye(1))
    assert sc.disturbance.kind == "none"
    assert sc.K_max == 400 and sc.goal_tol == 0.05


@pytest.mark.parametrize("name", BUNDLED)
def test_bundled_scenarios_round_trip(name, tmp_path):
    sc = load_scenario(bundled_scenario(name))
    again = load_scenario(dump_scenario(sc, tmp_path / "copy.json"))
    assert again == sc
    assert again.to_dict() == sc.to_dict()


def test_random_scenario_round_trips(tmp_path):
    sc = random_planar_scenario(np.random.default_rng(0))
    assert load_scenario(dump_scenario(sc, tmp_path / "r.json")) == sc


def test_unknown_bundled_name():
    with pytest.raises(FileNotFoundError):
        bundled_scenario("atlantis")


# error classes


def test_parse_error_reports_position(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text('{"model": {"kind": "quadcopter",}\n')
    with pytest.raises(ScenarioError) as info:
        load_scenario(path)
    assert info.value.exit_code == EXIT_PARSE
    assert "bad.json:1:" in str(info.value)


def test_missing_file_is_a_parse_error(tmp_path):
    with pytest.raises(ScenarioError) as info:
        load_scenario(tmp_path / "nope.json")
    assert info.value.exit_code == EXIT_PARSE


def test_obstacle_without_faces_is_a_schema_error():
    data = line_scenario_data(obstacles=[{"set": {"F": [], "g": []}}])
    expect_error(data, EXIT_SCHEMA, "obstacles/0")


def test_unknown_field_is_a_schema_error():
    expect_error(line_scenario_data(colour="red"), EXIT_SCHEMA)


def test_missing_required_field_is_a_schema_error():
    data = line_scenario_data()
    data.pop("modes")
    expect_error(data, EXIT_SCHEMA)


def test_shifted_disturbance_is_a_semantic_error():
    data = line_scenario_data()
    data["modes"][0]["W"] = {"center": [0.01, 0.0], "generators": [[0.01, 0.0], [0.0, 0.01]]}
    expect_error(data, EXIT_SEMANTIC, "W must be origin-centered")


def test_dimension_mismatch_is_a_semantic_error():
    expect_error(line_scenario_data(start=[0.0, 0.0, 0.0]), EXIT_SEMANTIC, "start has 3 entries")


def test_mode_outside_global_set_is_a_semantic_error():
    data = line_scenario_data()
    data["modes"][0]["X"] = box([-1, -2], [6, 2])
    expect_error(data, EXIT_SEMANTIC, "not contained")


def test_slow_disturbance_must_nest_in_fast():
    data = line_scenario_data()
    fast = {"name": "fast", "X": box([-1, -1], [6, 1]), "U": box([-1], [1]), "W": {"box": [0.005, 0.01]}}
    slow = {"name": "slow", "X": box([-1, -0.5], [6, 0.5]), "U": box([-1], [1]), "W": {"box": [0.006, 0.01]}}
    data["modes"] = [fast, slow]
    expect_error(data, EXIT_SEMANTIC, "inside W of mode fast")


def test_start_inside_obstacle_is_a_semantic_error():
    data = line_scenario_data(obstacles=[{"name": "post", "set": box([-0.5], [0.5])}])
    expect_error(data, EXIT_SEMANTIC, "start lies inside obstacle post")


def test_unbounded_obstacle_is_a_semantic_error():
    data = line_scenario_data(obstacles=[{"set": {"F": [[1.0]], "g": [3.0]}}])
    expect_error(data, EXIT_SEMANTIC, "unbounded")


def test_degenerate_disturbance_is_a_semantic_error():
    data = line_scenario_data()
    data["modes"][0]["W"] = {"center": [0.0, 0.0], "generators": [[0.01, 0.02]]}
    expect_error(data, EXIT_SEMANTIC, "full-dimensional")


def test_gust_needs_its_block():
    expect_error(line_scenario_data(disturbance={"kind": "wind_gust"}), EXIT_SEMANTIC, "gust")


# setup


def test_two_quadcopter_modes_nest():
    setup = setup_scenario(load_scenario(bundled_scenario("quadcopter_two_mode")))
    fast, slow = setup.mode_by_name("fast"), setup.mode_by_name("slow")
    rng = np.random.default_rng(0)
    D = rng.normal(size=(200, 10))
    assert np.all(slow.Z.support_rows(D) <= fast.Z.support_rows(D) + 1e-12)


def test_mode_subset_selection():
    setup = setup_scenario(load_scenario(bundled_scenario("corridor")), ["slow"])
    assert [pm.name for pm in setup.modes] == ["slow"]
    with pytest.raises(KeyError):
        setup.mode_by_name("fast")


def test_scenario_json_is_plain_data(tmp_path):
    sc = load_scenario(bundled_scenario("quadcopter_gust"))
    text = json.dumps(sc.to_dict())
    assert "wind_gust" in text
