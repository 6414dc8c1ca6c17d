"""Command-line interface: ``hier-mpc sets|plan|run|verify|compare-modes|sweep``.

Exit codes: 0 success, 2 infeasible (or goal not reached), 3 unreadable
scenario or configuration error, 4 solver failure, 5 schema violation,
6 semantic scenario error.  ``verify`` exits 1 when the log shows violations.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from .modes import ConfigurationError
from .optim import Status
from .planner import plan
from .scenario import Scenario, ScenarioError, Setup, bundled_scenario, load_scenario, planning_problem, setup_scenario
from .sim import (
    BLOCKED,
    INFEASIBLE,
    INITIAL_INFEASIBLE,
    MAX_STEPS,
    SOLVER_FAILURE,
    SUCCESS,
    ClosedLoopLog,
    run_closed_loop,
    verify_log,
)

EXIT_OK = 0
EXIT_VIOLATIONS = 1
EXIT_INFEASIBLE = 2
EXIT_CONFIG = 3
EXIT_SOLVER = 4

OUTCOME_EXIT = {
    SUCCESS: EXIT_OK,
    INITIAL_INFEASIBLE: EXIT_INFEASIBLE,
    INFEASIBLE: EXIT_INFEASIBLE,
    BLOCKED: EXIT_INFEASIBLE,
    MAX_STEPS: EXIT_INFEASIBLE,
    SOLVER_FAILURE: EXIT_SOLVER,
}


class CommandError(Exception):
    def __init__(self, message: str, exit_code: int):
        super().__init__(message)
        self.exit_code = exit_code


def resolve_scenario_path(arg: str) -> Path:
    """A file path, or the name of a bundled scenario."""
    p = Path(arg)
    if p.exists() or p.suffix == ".json":
        return p
    try:
        return bundled_scenario(arg)
    except FileNotFoundError:
        return p


def _load(arg: str) -> Scenario:
    return load_scenario(resolve_scenario_path(arg))


def _setup(sc: Scenario, mode_names=None) -> Setup:
    try:
        return setup_scenario(sc, mode_names)
    except ConfigurationError as exc:
        raise CommandError(str(exc), EXIT_CONFIG) from None


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def template_directions(p: int) -> np.ndarray:
    """Eight compass directions in the first two coordinates (±e_0 when p = 1)."""
    if p == 1:
        return np.array([[1.0], [-1.0]])
    D = np.zeros((8, p))
    for i in range(8):
        ang = i * np.pi / 4
        D[i, 0], D[i, 1] = np.cos(ang), np.sin(ang)
    return D


def support_table(setup: Setup) -> list[dict]:
    """Support values of each mode's C Z in the template directions."""
    D = template_directions(setup.bundle.C.shape[0])
    return [
        {"mode": pm.name, "directions": D.tolist(), "support": pm.CZ.support_rows(D).tolist()}
        for pm in setup.modes
    ]


def sets_report(setup: Setup) -> dict:
    modes = []
    for pm in setup.modes:
        modes.append(
            {
                "name": pm.name,
                "s": pm.s,
                "alpha": pm.alpha,
                "tube": [E.to_dict() for E in pm.tube],
                "Z": pm.Z.to_dict(),
                "CZ": pm.CZ.to_dict(),
                "margins": [D.to_dict() for D in pm.margins],
                "X_tight": pm.X_tight.to_dict(),
                "U_tight": pm.U_tight.to_dict(),
                "enlarged_obstacles": {ob.name: ob.enlarged[pm.name].tolist() for ob in setup.obstacles},
                "empty": pm.empty_rows(),
            }
        )
    return {"scenario": setup.scenario.name, "K": setup.K.tolist(), "modes": modes}


def cmd_sets(args) -> int:
    sc = _load(args.scenario)
    setup = _setup(sc)
    report = sets_report(setup)
    if args.out:
        path = _out_dir(args) / "sets.json"
        path.write_text(json.dumps(report, indent=1) + "\n")
        print(f"wrote {path}")
    D = template_directions(setup.bundle.C.shape[0])
    print("support of C Z per mode")
    print("direction".ljust(20) + "".join(pm.name.rjust(12) for pm in setup.modes))
    for r, d in enumerate(D):
        label = "(" + ", ".join(f"{v:+.2f}" for v in d[:2]) + ")"
        print(label.ljust(20) + "".join(f"{pm.CZ.support(d):12.6f}" for pm in setup.modes))
    empty = [(m["name"], m["empty"]) for m in report["modes"] if m["empty"]]
    if empty:
        for name, rows in empty:
            print(f"mode {name}: empty tightened set {', '.join(rows)}", file=sys.stderr)
        return EXIT_INFEASIBLE
    return EXIT_OK


def cmd_plan(args) -> int:
    sc = _load(args.scenario)
    setup = _setup(sc)
    problem = planning_problem(setup, sc.start, N=args.horizon)
    result = plan(problem, time_limit=sc.plan_time_limit)
    text = json.dumps(result.to_dict(), indent=1)
    if args.out:
        path = _out_dir(args) / "plan.json"
        path.write_text(text + "\n")
    print(text)
    if result.optimal:
        return EXIT_OK
    return EXIT_INFEASIBLE if result.status is Status.INFEASIBLE else EXIT_SOLVER


def goal_blocked(setup: Setup) -> str | None:
    """Name of a raw obstacle whose interior holds the goal output, if any."""
    y = setup.bundle.C @ setup.scenario.goal
    for ob in setup.obstacles:
        if ob.margin(y) < 0:
            return ob.name
    return None


def summarize(run: ClosedLoopLog, setup: Setup) -> dict:
    pos = list(setup.bundle.position_idx)
    Y = np.array([s.x[pos] for s in run.steps])
    modes = [s.mode for s in run.steps if s.mode]
    switches = sum(1 for a, b in zip(modes, modes[1:]) if a != b)
    return {
        "outcome": run.outcome,
        "message": run.message,
        "steps": len(run.steps) - 1,
        "time": run.steps[-1].t,
        "path_length": float(np.sum(np.linalg.norm(np.diff(Y, axis=0), axis=1))) if len(Y) > 1 else 0.0,
        "mode_switches": switches,
        "modes_used": sorted(set(modes)),
    }


def _run_and_write(sc: Scenario, setup: Setup, seed, out: Path | None, plot: bool, prefix: str = "", stall_plans=None):
    run = run_closed_loop(sc, seed, setup=setup, stall_plans=stall_plans)
    report = verify_log(run.to_csv(), sc)
    if out is not None:
        run.write_csv(out / f"{prefix}log.csv")
        run.write_json(out / f"{prefix}log.json")
        (out / f"{prefix}verification.json").write_text(json.dumps(report.to_dict(), indent=1) + "\n")
        if plot:
            from .plotting import write_run_plots

            write_run_plots(run, setup, out / f"{prefix}plots" if prefix else out)
    return run, report


def cmd_run(args) -> int:
    sc = _load(args.scenario)
    setup = _setup(sc)
    blocked = goal_blocked(setup)
    if blocked is not None:
        print(f"goal lies inside obstacle {blocked!r}", file=sys.stderr)
        return EXIT_INFEASIBLE
    out = _out_dir(args) if args.out else None
    run, report = _run_and_write(sc, setup, args.seed, out, args.plot)
    print(json.dumps({"run": summarize(run, setup), "verification": report.to_dict()}, indent=1))
    return OUTCOME_EXIT[run.outcome]


def cmd_verify(args) -> int:
    sc = _load(args.scenario)
    text = Path(args.log).read_text()
    report = verify_log(text, sc)
    print(json.dumps(report.to_dict(), indent=1))
    return EXIT_OK if report.clean or not report.guarantees_in_force else EXIT_VIOLATIONS


def compare_modes(sc: Scenario, seed=None, out: Path | None = None, plot: bool = False, stall_plans: int = 3) -> dict:
    """Run each mode alone and then all modes together."""
    names = [m.name for m in sc.modes]
    variants = [([nm], f"{nm}-only") for nm in names] if len(names) > 1 else []
    variants.append((None, "all-modes"))
    results = {}
    for subset, label in variants:
        setup = setup_scenario(sc, subset)
        run, report = _run_and_write(sc, setup, seed, out, plot, prefix=f"{label}_" if out else "", stall_plans=stall_plans)
        entry = summarize(run, setup)
        entry["violations"] = report.violations
        results[label] = entry
    return results


def cmd_compare_modes(args) -> int:
    sc = _load(args.scenario)
    out = _out_dir(args) if args.out else None
    try:
        results = compare_modes(sc, args.seed, out, args.plot, args.stall_plans)
    except ConfigurationError as exc:
        raise CommandError(str(exc), EXIT_CONFIG) from None
    if out is not None:
        (out / "compare.json").write_text(json.dumps(results, indent=1) + "\n")
    print(f"{'variant':<16}{'outcome':<20}{'steps':>7}{'time':>9}{'path':>9}{'switches':>10}")
    for label, r in results.items():
        print(f"{label:<16}{r['outcome']:<20}{r['steps']:>7}{r['time']:>9.2f}{r['path_length']:>9.2f}{r['mode_switches']:>10}")
    return OUTCOME_EXIT[results["all-modes"]["outcome"]]


def _sweep_one(job):
    path, seed = job
    sc = load_scenario(path)
    setup = setup_scenario(sc)
    run = run_closed_loop(sc, seed, setup=setup)
    report = verify_log(run.to_csv(), sc)
    return seed, run.outcome, len(run.steps) - 1, report.to_dict()


def parse_seeds(text: str) -> list[int]:
    """``"0-49"``, ``"1,4,9"`` or a mix such as ``"0-3,10"``."""
    seeds = []
    for part in text.split(","):
        part = part.strip()
        if "-" in part:
            a, b = part.split("-", 1)
            seeds.extend(range(int(a), int(b) + 1))
        elif part:
            seeds.append(int(part))
    return seeds


def cmd_sweep(args) -> int:
    path = resolve_scenario_path(args.scenario)
    load_scenario(path)
    jobs = [(str(path), s) for s in parse_seeds(args.seeds)]
    if args.jobs > 1:
        with ProcessPoolExecutor(args.jobs) as pool:
            rows = list(pool.map(_sweep_one, jobs))
    else:
        rows = [_sweep_one(j) for j in jobs]
    rows.sort(key=lambda r: r[0])
    total = 0
    for seed, outcome, steps, rep in rows:
        total += rep["violations"]
        print(f"seed {seed:4d}  {outcome:<20} steps {steps:5d}  violations {rep['violations']}  {rep['guarantees_in_force']}")
    if args.out:
        summary = [{"seed": s, "outcome": o, "steps": n, "verification": r} for s, o, n, r in rows]
        (_out_dir(args) / "sweep.json").write_text(json.dumps(summary, indent=1) + "\n")
    if any(o != SUCCESS for _, o, _, _ in rows):
        worst = max(OUTCOME_EXIT[o] for _, o, _, _ in rows)
        return worst
    return EXIT_VIOLATIONS if total else EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hier-mpc", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    def scenario_cmd(name, fn, help_text):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("scenario", help="scenario JSON file or bundled scenario name")
        p.add_argument("--out", help="directory for output files")
        p.set_defaults(func=fn)
        return p

    scenario_cmd("sets", cmd_sets, "compute tubes, invariant sets and tightened sets")
    p = scenario_cmd("plan", cmd_plan, "solve one planning problem from the start state")
    p.add_argument("--horizon", type=int, default=None, help="override the planning horizon N")
    p = scenario_cmd("run", cmd_run, "simulate the closed loop and verify the log")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--plot", action="store_true", help="write SVG figures")
    p = sub.add_parser("verify", help="verify a CSV log against its scenario")
    p.add_argument("log", help="CSV log written by 'run'")
    p.add_argument("scenario")
    p.set_defaults(func=cmd_verify)
    p = scenario_cmd("compare-modes", cmd_compare_modes, "run each mode alone and all modes together")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--plot", action="store_true")
    p.add_argument("--stall-plans", type=int, default=3, help="consecutive stalled plans that count as blocked")
    p = scenario_cmd("sweep", cmd_sweep, "run many seeds and summarize the verification")
    p.add_argument("--seeds", default="0-9", help="e.g. 0-49 or 1,2,5")
    p.add_argument("--jobs", type=int, default=1, help="worker processes")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except ScenarioError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except CommandError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except ConfigurationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
