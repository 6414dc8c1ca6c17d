import json

import numpy as np
import pytest

from hier_mpc.cli import main, parse_seeds, template_directions
from hier_mpc.vehicle_models import double_integrator

from helpers import box, line_scenario_data, support_oracle


def write(tmp_path, data, name="scenario.json"):
    path = tmp_path / name
    path.write_text(json.dumps(data))
    return str(path)


def two_speed_line(**overrides):
    fast = {"name": "fast", "X": box([-1, -1], [6, 1]), "U": box([-1], [1]), "W": {"box": [0.005, 0.01]}}
    slow = {"name": "slow", "X": box([-1, -0.4], [6, 0.4]), "U": box([-1], [1]), "W": {"box": [0.003, 0.006]}}
    return line_scenario_data(modes=[fast, slow], **overrides)


def test_template_directions():
    D = template_directions(3)
    assert D.shape == (8, 3)
    assert np.allclose(np.linalg.norm(D, axis=1), 1.0)
    assert np.allclose(D[:, 2], 0.0)
    assert np.array_equal(template_directions(1), [[1.0], [-1.0]])


def test_parse_seeds():
    assert parse_seeds("0-3") == [0, 1, 2, 3]
    assert parse_seeds("1,4, 9") == [1, 4, 9]
    assert parse_seeds("0-1,7") == [0, 1, 7]


# sets


def test_sets_with_deadbeat_gain(tmp_path, capsys):
    bundle = double_integrator(1, dt=0.1, M=5)
    A, B = bundle.fine.A, bundle.fine.B
    # Ackermann: place both closed-loop poles at zero, so (A + B K)^2 = 0
    ctrb = np.hstack([B, A @ B])
    K = -np.array([[0.0, 1.0]]) @ np.linalg.inv(ctrb) @ A @ A
    A_K = A + B @ K
    assert np.allclose(A_K @ A_K, 0.0, atol=1e-12)
    data = line_scenario_data(gain={"K": K.tolist()})
    # the deadbeat gain is large, so give the input room
    data["constraints"]["U"] = data["modes"][0]["U"] = box([-50], [50])
    assert main(["sets", write(tmp_path, data), "--out", str(tmp_path / "o")]) == 0
    report = json.loads((tmp_path / "o" / "sets.json").read_text())
    mode = report["modes"][0]
    # every later power vanishes, so the invariant set is exactly W + A_K W
    W_G = np.diag([0.005, 0.01])
    G = np.hstack([W_G, A_K @ W_G])
    Z_G = np.array(mode["Z"]["generators"]).T  # stored one generator per entry
    for a in np.vstack([np.eye(2), -np.eye(2), np.ones((1, 2))]):
        assert support_oracle(np.zeros(2), Z_G, a) == pytest.approx(support_oracle(np.zeros(2), G, a), abs=1e-9)
    out = capsys.readouterr().out
    assert "support of C Z per mode" in out
    assert f"{abs(G[0]).sum():12.6f}" in out


def test_sets_names_the_empty_mode(tmp_path, capsys):
    data = line_scenario_data()
    data["modes"].append({"name": "shaky", "X": box([-1, -1], [6, 1]), "U": box([-1], [1]), "W": {"box": [0.5, 1.0]}})
    assert main(["sets", write(tmp_path, data)]) == 2
    err = capsys.readouterr().err
    assert "mode shaky" in err and "only" not in err


def test_sets_on_bundled_quadcopter(capsys):
    assert main(["sets", "quadcopter_two_mode"]) == 0
    lines = capsys.readouterr().out.splitlines()
    rows = [ln for ln in lines if ln.startswith("(")]
    assert len(rows) == 8
    for ln in rows:
        fast, slow = map(float, ln.split()[-2:])
        assert slow <= fast


# plan


def test_plan_short_and_long_horizon(tmp_path, capsys):
    assert main(["plan", "horizon", "--horizon", "15"]) == 2
    assert main(["plan", "horizon", "--out", str(tmp_path)]) == 0
    result = json.loads((tmp_path / "plan.json").read_text())
    assert result["status"] == "Optimal" and len(result["x_p"]) == 31


# error exit codes


def test_malformed_file_exits_3(tmp_path):
    path = tmp_path / "broken.json"
    path.write_text("{ not json")
    assert main(["run", str(path)]) == 3


def test_missing_file_exits_3(tmp_path):
    assert main(["run", str(tmp_path / "missing.json")]) == 3


def test_schema_and_semantic_exit_codes(tmp_path):
    assert main(["sets", write(tmp_path, line_scenario_data(horizon=0))]) == 5
    assert main(["sets", write(tmp_path, line_scenario_data(goal=[1.0]))]) == 6


def test_every_mode_empty_is_a_config_error(tmp_path):
    data = line_scenario_data()
    data["modes"][0]["W"] = {"box": [0.5, 1.0]}
    assert main(["run", write(tmp_path, data)]) == 3


def test_goal_inside_obstacle_exits_2(tmp_path, capsys):
    data = line_scenario_data(obstacles=[{"name": "rock", "set": box([1.5], [2.5])}])
    assert main(["run", write(tmp_path, data)]) == 2
    assert "rock" in capsys.readouterr().err


# run and verify


def test_run_writes_artifacts_and_verifies(tmp_path, capsys):
    scenario = write(tmp_path, line_scenario_data())
    out = tmp_path / "run"
    assert main(["run", scenario, "--seed", "2", "--out", str(out), "--plot"]) == 0
    summary = json.loads(capsys.readouterr().out)
    assert summary["run"]["outcome"] == "success"
    assert summary["verification"]["violations"] == 0
    for name in ("log.csv", "log.json", "verification.json", "timeline.svg"):
        assert (out / name).exists()
    assert (out / "timeline.svg").read_text().startswith("<svg")

    assert main(["verify", str(out / "log.csv"), scenario]) == 0
    lines = (out / "log.csv").read_text().splitlines()
    fields = lines[3].split(",")
    fields[3] = "1.5"  # velocity beyond the bound
    lines[3] = ",".join(fields)
    (out / "tampered.csv").write_text("\n".join(lines) + "\n")
    assert main(["verify", str(out / "tampered.csv"), scenario]) == 1


def test_compare_modes_without_obstacles(tmp_path, capsys):
    scenario = write(tmp_path, two_speed_line(goal=[3.0, 0.0]))
    assert main(["compare-modes", scenario, "--out", str(tmp_path / "cmp")]) == 0
    results = json.loads((tmp_path / "cmp" / "compare.json").read_text())
    assert set(results) == {"fast-only", "slow-only", "all-modes"}
    assert all(r["outcome"] == "success" for r in results.values())
    assert results["fast-only"]["steps"] <= results["all-modes"]["steps"] <= results["slow-only"]["steps"]
    assert "variant" in capsys.readouterr().out


def test_compare_modes_single_mode_is_a_plain_run(tmp_path):
    scenario = write(tmp_path, line_scenario_data(goal=[1.0, 0.0]))
    assert main(["compare-modes", scenario, "--out", str(tmp_path / "cmp")]) == 0
    results = json.loads((tmp_path / "cmp" / "compare.json").read_text())
    assert list(results) == ["all-modes"]


def test_sweep_over_seeds(tmp_path, capsys):
    scenario = write(tmp_path, line_scenario_data(goal=[1.0, 0.0]))
    assert main(["sweep", scenario, "--seeds", "0-1", "--out", str(tmp_path / "sw")]) == 0
    summary = json.loads((tmp_path / "sw" / "sweep.json").read_text())
    assert [row["seed"] for row in summary] == [0, 1]
    assert all(row["outcome"] == "success" for row in summary)
