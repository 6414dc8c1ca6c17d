"""Scenario files: loading, validation, serialization and setup.

A scenario is a JSON document describing the plant, the operating modes,
obstacles, horizons, weights and the disturbance policy of one experiment.
Sets may be written in full (``{"F", "g"}`` / ``{"center", "generators"}``)
or with the ``box`` shorthand; ``null`` bounds in a box are unbounded.
Matrices may be nested lists or ``{"diag": [...]}``.  Serialization always
writes the expanded form, so load, dump and load again yields an equal
scenario.
"""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass, field
from pathlib import Path

import jsonschema
import numpy as np

from .convex_sets import HPolytope, Obstacle, Zonotope, zonotope_facets
from .linalg import lqr_gain, riccati_fixed_point
from .modes import ConfigurationError, Mode, PreparedMode, prepare_modes
from .planner import INTERSAMPLE_POLICIES, STAGE_REFERENCES, PlanProblem
from .settings import DEFAULT_SETTINGS, NumericSettings
from .tracker import TrackerWeights
from .vehicle_models import ModelBundle, QuadcopterParams, default_quadcopter_params, double_integrator, quadcopter

EXIT_PARSE = 3
EXIT_SCHEMA = 5
EXIT_SEMANTIC = 6

DISTURBANCE_KINDS = ("none", "uniform_in_mode_set", "vertex_worst_case", "wind_gust")


class ScenarioError(ValueError):
    """Invalid scenario; ``exit_code`` tells parse, schema and semantic errors apart."""

    def __init__(self, message: str, exit_code: int):
        super().__init__(message)
        self.exit_code = exit_code


_NUM = {"type": "number"}
_VEC = {"type": "array", "items": _NUM}
_MATRIX = {
    "oneOf": [
        {"type": "array", "items": _VEC, "minItems": 1},
        {"type": "object", "properties": {"diag": _VEC}, "required": ["diag"], "additionalProperties": False},
    ]
}
_BOX_BOUND = {"type": "array", "items": {"type": ["number", "null"]}, "minItems": 1}
_POLYTOPE = {
    "oneOf": [
        {
            "type": "object",
            "properties": {"F": {"type": "array", "items": _VEC, "minItems": 1}, "g": {**_VEC, "minItems": 1}},
            "required": ["F", "g"],
            "additionalProperties": False,
        },
        {
            "type": "object",
            "properties": {
                "box": {
                    "type": "object",
                    "properties": {"lo": _BOX_BOUND, "hi": _BOX_BOUND},
                    "required": ["lo", "hi"],
                    "additionalProperties": False,
                }
            },
            "required": ["box"],
            "additionalProperties": False,
        },
    ]
}
_ZONOTOPE = {
    "oneOf": [
        {
            "type": "object",
            "properties": {"center": {**_VEC, "minItems": 1}, "generators": {"type": "array", "items": _VEC}},
            "required": ["center", "generators"],
            "additionalProperties": False,
        },
        {
            "type": "object",
            "properties": {"box": {**_VEC, "minItems": 1}},
            "required": ["box"],
            "additionalProperties": False,
        },
    ]
}

SCHEMA = {
    "type": "object",
    "required": ["model", "horizon", "start", "goal", "constraints", "modes"],
    "additionalProperties": False,
    "properties": {
        "name": {"type": "string"},
        "description": {"type": "string"},
        "model": {
            "type": "object",
            "required": ["kind"],
            "additionalProperties": False,
            "properties": {
                "kind": {"enum": ["quadcopter", "double_integrator"]},
                "params": {"type": "object", "additionalProperties": _NUM},
                "dims": {"type": "integer", "minimum": 1, "maximum": 3},
                "dt_track": {"type": "number", "exclusiveMinimum": 0},
                "steps_per_plan": {"type": "integer", "minimum": 2},
            },
        },
        "horizon": {"type": "integer", "minimum": 1},
        "start": _VEC,
        "goal": _VEC,
        "constraints": {
            "type": "object",
            "required": ["X", "U"],
            "additionalProperties": False,
            "properties": {"X": _POLYTOPE, "U": _POLYTOPE},
        },
        "obstacles": {
            "type": "array",
            "items": {
                "type": "object",
                "properties": {"name": {"type": "string"}, "set": _POLYTOPE},
                "required": ["set"],
                "additionalProperties": False,
            },
        },
        "modes": {
            "type": "array",
            "minItems": 1,
            "items": {
                "type": "object",
                "required": ["name", "X", "U", "W"],
                "additionalProperties": False,
                "properties": {"name": {"type": "string", "minLength": 1}, "X": _POLYTOPE, "U": _POLYTOPE, "W": _ZONOTOPE},
            },
        },
        "gain": {
            "oneOf": [
                {
                    "type": "object",
                    "properties": {
                        "lqr": {
                            "type": "object",
                            "properties": {"Q": _MATRIX, "R": _MATRIX},
                            "required": ["Q", "R"],
                            "additionalProperties": False,
                        }
                    },
                    "required": ["lqr"],
                    "additionalProperties": False,
                },
                {
                    "type": "object",
                    "properties": {"K": {"type": "array", "items": _VEC, "minItems": 1}},
                    "required": ["K"],
                    "additionalProperties": False,
                },
            ]
        },
        "planner": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "alpha_x": {"type": "number", "minimum": 0},
                "alpha_u": {"type": "number", "minimum": 0},
                "stage_reference": {"enum": list(STAGE_REFERENCES)},
                "big_m": {"type": "number", "exclusiveMinimum": 0},
                "open_loop": {"type": "boolean"},
                "intersample": {"enum": list(INTERSAMPLE_POLICIES)},
                "time_limit": {"type": ["number", "null"], "exclusiveMinimum": 0},
            },
        },
        "tracker": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"Q": _MATRIX, "R": _MATRIX, "P": _MATRIX},
        },
        "mrpi_alpha_target": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
        "disturbance": {
            "type": "object",
            "required": ["kind"],
            "additionalProperties": False,
            "properties": {
                "kind": {"enum": list(DISTURBANCE_KINDS)},
                "scale": {"type": "number", "minimum": 0},
                "gust": {
                    "type": "object",
                    "required": ["direction", "magnitude", "intervals"],
                    "additionalProperties": False,
                    "properties": {
                        "direction": _VEC,
                        "magnitude": {"type": "number", "minimum": 0},
                        "intervals": {
                            "type": "array",
                            "items": {"type": "array", "items": {"type": "integer", "minimum": 0}, "minItems": 2, "maxItems": 2},
                        },
                    },
                },
            },
        },
        "seed": {"type": "integer", "minimum": 0},
        "K_max": {"type": "integer", "minimum": 1},
        "goal_tol": {"type": "number", "exclusiveMinimum": 0},
    },
}


@dataclass
class GustSpec:
    direction: np.ndarray
    magnitude: float
    intervals: list[tuple[int, int]]

    def active(self, k: int) -> bool:
        """Intervals are half-open fine-step ranges ``[start, stop)``."""
        return any(a <= k < b for a, b in self.intervals)

    def vector(self) -> np.ndarray:
        d = np.asarray(self.direction, dtype=float)
        norm = np.linalg.norm(d)
        return d if norm == 0 else self.magnitude * d / norm


@dataclass
class DisturbanceSpec:
    kind: str = "uniform_in_mode_set"
    scale: float = 1.0
    gust: GustSpec | None = None


@dataclass
class ModeSpec:
    name: str
    X: HPolytope
    U: HPolytope
    W: Zonotope


@dataclass
class Scenario:
    """A validated experiment description (see the module docstring for the JSON layout)."""

    name: str
    model_kind: str
    model_params: dict
    dims: int
    dt: float
    M: int
    N: int
    start: np.ndarray
    goal: np.ndarray
    X: HPolytope
    U: HPolytope
    obstacles: list[tuple[str, HPolytope]]
    modes: list[ModeSpec]
    K: np.ndarray | None = None
    lqr_Q: np.ndarray | None = None
    lqr_R: np.ndarray | None = None
    alpha_x: float = 0.01
    alpha_u: float = 0.01
    stage_reference: str = "goal"
    big_m: float = DEFAULT_SETTINGS.big_m
    open_loop: bool = False
    intersample: str = "shared_face"
    plan_time_limit: float | None = None
    tracker_Q: np.ndarray | None = None
    tracker_R: np.ndarray | None = None
    tracker_P: np.ndarray | None = None
    alpha_target: float = DEFAULT_SETTINGS.mrpi_alpha_target
    disturbance: DisturbanceSpec = field(default_factory=DisturbanceSpec)
    seed: int = 0
    K_max: int = 400
    goal_tol: float = 0.05
    description: str = ""

    def bundle(self) -> ModelBundle:
        if self.model_kind == "quadcopter":
            params = QuadcopterParams.from_dict({**default_quadcopter_params().to_dict(), **self.model_params})
            return quadcopter(params, dt=self.dt, M=self.M)
        return double_integrator(self.dims, dt=self.dt, M=self.M)

    def to_dict(self) -> dict:
        out = {
            "name": self.name,
            "description": self.description,
            "model": {"kind": self.model_kind, "params": dict(self.model_params), "dt_track": self.dt, "steps_per_plan": self.M},
            "horizon": self.N,
            "start": self.start.tolist(),
            "goal": self.goal.tolist(),
            "constraints": {"X": self.X.to_dict(), "U": self.U.to_dict()},
            "obstacles": [{"name": nm, "set": P.to_dict()} for nm, P in self.obstacles],
            "modes": [{"name": m.name, "X": m.X.to_dict(), "U": m.U.to_dict(), "W": _zono_dict(m.W)} for m in self.modes],
            "planner": {
                "alpha_x": self.alpha_x,
                "alpha_u": self.alpha_u,
                "stage_reference": self.stage_reference,
                "big_m": self.big_m,
                "open_loop": self.open_loop,
                "intersample": self.intersample,
                "time_limit": self.plan_time_limit,
            },
            "mrpi_alpha_target": self.alpha_target,
            "disturbance": {"kind": self.disturbance.kind, "scale": self.disturbance.scale},
            "seed": self.seed,
            "K_max": self.K_max,
            "goal_tol": self.goal_tol,
        }
        if self.model_kind == "double_integrator":
            out["model"]["dims"] = self.dims
        if self.K is not None:
            out["gain"] = {"K": self.K.tolist()}
        else:
            out["gain"] = {"lqr": {"Q": self.lqr_Q.tolist(), "R": self.lqr_R.tolist()}}
        tracker = {}
        for key, val in (("Q", self.tracker_Q), ("R", self.tracker_R), ("P", self.tracker_P)):
            if val is not None:
                tracker[key] = val.tolist()
        if tracker:
            out["tracker"] = tracker
        g = self.disturbance.gust
        if g is not None:
            out["disturbance"]["gust"] = {
                "direction": np.asarray(g.direction, dtype=float).tolist(),
                "magnitude": g.magnitude,
                "intervals": [list(iv) for iv in g.intervals],
            }
        return out

    def __eq__(self, other) -> bool:
        return isinstance(other, Scenario) and self.to_dict() == other.to_dict()

    def with_overrides(self, **changes) -> "Scenario":
        new = copy.deepcopy(self)
        for key, val in changes.items():
            if not hasattr(new, key):
                raise AttributeError(key)
            setattr(new, key, val)
        return new


def _zono_dict(Z: Zonotope) -> dict:
    # generators listed one per entry (columns of G)
    return {"center": Z.center.tolist(), "generators": Z.G.T.tolist()}


def _polytope(data: dict) -> HPolytope:
    if "box" in data:
        lo = np.array([-np.inf if v is None else v for v in data["box"]["lo"]], dtype=float)
        hi = np.array([np.inf if v is None else v for v in data["box"]["hi"]], dtype=float)
        if lo.size != hi.size:
            raise ValueError("box lo and hi differ in length")
        if np.any(lo > hi):
            raise ValueError("box has lo > hi")
        eye = np.eye(lo.size)
        F, g = [], []
        for i in range(lo.size):
            if np.isfinite(hi[i]):
                F.append(eye[i])
                g.append(hi[i])
            if np.isfinite(lo[i]):
                F.append(-eye[i])
                g.append(-lo[i])
        if not F:
            raise ValueError("box has no finite bound")
        return HPolytope(np.array(F), np.array(g))
    F = data["F"]
    if len({len(r) for r in F}) != 1:
        raise ValueError("rows of F differ in length")
    return HPolytope(np.array(F, dtype=float), np.array(data["g"], dtype=float))


def _zonotope(data: dict) -> Zonotope:
    if "box" in data:
        return Zonotope.box(data["box"])
    c = np.array(data["center"], dtype=float)
    gens = data["generators"]
    if any(len(gv) != c.size for gv in gens):
        raise ValueError("generator length differs from the center's")
    G = np.array(gens, dtype=float).T if gens else np.zeros((c.size, 0))
    return Zonotope(c, G)


def _matrix(data) -> np.ndarray:
    if isinstance(data, dict):
        return np.diag(np.array(data["diag"], dtype=float))
    if len({len(r) for r in data}) != 1:
        raise ValueError("matrix rows differ in length")
    return np.array(data, dtype=float)


def parse_scenario(data: dict, source: str = "<scenario>") -> Scenario:
    """Validate a decoded JSON document and build a :class:`Scenario`."""
    validator = jsonschema.Draft7Validator(SCHEMA)
    errors = sorted(validator.iter_errors(data), key=lambda e: list(e.absolute_path))
    if errors:
        err = errors[0]
        where = "/".join(str(p) for p in err.absolute_path) or "<root>"
        raise ScenarioError(f"{source}: schema violation at {where}: {err.message}", EXIT_SCHEMA)
    try:
        sc = _build(data)
        _semantic_checks(sc)
    except ScenarioError:
        raise
    except (ValueError, np.linalg.LinAlgError) as exc:
        raise ScenarioError(f"{source}: {exc}", EXIT_SEMANTIC) from None
    return sc


def _build(data: dict) -> Scenario:
    model = data["model"]
    kind = model["kind"]
    planner = data.get("planner", {})
    tracker = data.get("tracker", {})
    dist = data.get("disturbance", {"kind": "none"})
    gust = None
    if "gust" in dist:
        gd = dist["gust"]
        gust = GustSpec(np.array(gd["direction"], dtype=float), float(gd["magnitude"]), [tuple(iv) for iv in gd["intervals"]])
    gain = data.get("gain", {})
    sc = Scenario(
        name=data.get("name", "scenario"),
        description=data.get("description", ""),
        model_kind=kind,
        model_params={k: float(v) for k, v in model.get("params", {}).items()},
        dims=int(model.get("dims", 3 if kind == "quadcopter" else 1)),
        dt=float(model.get("dt_track", 0.05 if kind == "quadcopter" else 0.1)),
        M=int(model.get("steps_per_plan", 10 if kind == "quadcopter" else 5)),
        N=int(data["horizon"]),
        start=np.array(data["start"], dtype=float),
        goal=np.array(data["goal"], dtype=float),
        X=_polytope(data["constraints"]["X"]),
        U=_polytope(data["constraints"]["U"]),
        obstacles=[(ob.get("name", f"obstacle{i}"), _polytope(ob["set"])) for i, ob in enumerate(data.get("obstacles", []))],
        modes=[ModeSpec(m["name"], _polytope(m["X"]), _polytope(m["U"]), _zonotope(m["W"])) for m in data["modes"]],
        K=_matrix(gain["K"]) if "K" in gain else None,
        lqr_Q=_matrix(gain["lqr"]["Q"]) if "lqr" in gain else None,
        lqr_R=_matrix(gain["lqr"]["R"]) if "lqr" in gain else None,
        alpha_x=float(planner.get("alpha_x", 0.01)),
        alpha_u=float(planner.get("alpha_u", 0.01)),
        stage_reference=planner.get("stage_reference", "goal"),
        big_m=float(planner.get("big_m", DEFAULT_SETTINGS.big_m)),
        open_loop=bool(planner.get("open_loop", False)),
        intersample=planner.get("intersample", "shared_face"),
        plan_time_limit=planner.get("time_limit"),
        tracker_Q=_matrix(tracker["Q"]) if "Q" in tracker else None,
        tracker_R=_matrix(tracker["R"]) if "R" in tracker else None,
        tracker_P=_matrix(tracker["P"]) if "P" in tracker else None,
        alpha_target=float(data.get("mrpi_alpha_target", DEFAULT_SETTINGS.mrpi_alpha_target)),
        disturbance=DisturbanceSpec(dist["kind"], float(dist.get("scale", 1.0)), gust),
        seed=int(data.get("seed", 0)),
        K_max=int(data.get("K_max", 400)),
        goal_tol=float(data.get("goal_tol", 0.05)),
    )
    if not gain:
        # default auxiliary gain: LQR with identity weights
        bundle = sc.bundle()
        sc.lqr_Q = np.eye(bundle.n)
        sc.lqr_R = np.eye(bundle.m)
    return sc


def _semantic_checks(sc: Scenario) -> None:
    bundle = sc.bundle()
    n, m, p = bundle.n, bundle.m, bundle.C.shape[0]

    def need(cond: bool, msg: str) -> None:
        if not cond:
            raise ScenarioError(msg, EXIT_SEMANTIC)

    need(sc.start.size == n, f"start has {sc.start.size} entries, the model has {n} states")
    need(sc.goal.size == n, f"goal has {sc.goal.size} entries, the model has {n} states")
    need(sc.X.dim == n, f"constraints/X is {sc.X.dim}-D, expected {n}")
    need(sc.U.dim == m, f"constraints/U is {sc.U.dim}-D, expected {m}")
    need(not sc.X.is_empty and not sc.U.is_empty, "constraints/X or constraints/U is empty")
    names = [ms.name for ms in sc.modes]
    need(len(set(names)) == len(names), "mode names must be unique")
    for i, ms in enumerate(sc.modes):
        where = f"modes/{i} ({ms.name})"
        need(ms.X.dim == n, f"{where}: X is {ms.X.dim}-D, expected {n}")
        need(ms.U.dim == m, f"{where}: U is {ms.U.dim}-D, expected {m}")
        need(ms.W.dim == n, f"{where}: W is {ms.W.dim}-D, expected {n}")
        need(not np.any(ms.W.center != 0), f"{where}: W must be origin-centered")
        try:
            zonotope_facets(ms.W)
        except ValueError as exc:
            raise ScenarioError(f"{where}: W must be full-dimensional ({exc})", EXIT_SEMANTIC) from None
        need(not ms.X.is_empty and not ms.U.is_empty, f"{where}: X or U is empty")
        need(_nested(ms.X, sc.X), f"{where}: X is not contained in constraints/X")
        need(_nested(ms.U, sc.U), f"{where}: U is not contained in constraints/U")
    by_name = {ms.name: ms for ms in sc.modes}
    if "fast" in by_name and "slow" in by_name:
        slow, fast = by_name["slow"].W, by_name["fast"].W
        facets = zonotope_facets(fast)
        need(bool(np.all(slow.support_rows(facets.F) <= facets.g + 1e-12)), "W of mode slow must lie inside W of mode fast")
    for i, (nm, P) in enumerate(sc.obstacles):
        need(P.dim == p, f"obstacles/{i} ({nm}) is {P.dim}-D, outputs are {p}-D")
        try:
            Obstacle(P, nm)
        except ValueError as exc:
            raise ScenarioError(f"obstacles/{i}: {exc}", EXIT_SEMANTIC) from None
    if sc.K is not None:
        need(sc.K.shape == (m, n), f"gain/K has shape {sc.K.shape}, expected {(m, n)}")
    else:
        need(sc.lqr_Q.shape == (n, n), f"gain/lqr/Q has shape {sc.lqr_Q.shape}, expected {(n, n)}")
        need(sc.lqr_R.shape == (m, m), f"gain/lqr/R has shape {sc.lqr_R.shape}, expected {(m, m)}")
    for key, val, size in (("Q", sc.tracker_Q, n), ("R", sc.tracker_R, m), ("P", sc.tracker_P, n)):
        if val is not None:
            need(val.shape == (size, size), f"tracker/{key} has shape {val.shape}, expected {(size, size)}")
    g = sc.disturbance.gust
    if sc.disturbance.kind == "wind_gust":
        need(g is not None, "disturbance kind wind_gust needs a gust block")
    if g is not None:
        need(np.asarray(g.direction).size == n, f"disturbance/gust/direction must have {n} entries")
        need(all(a < b for a, b in g.intervals), "gust intervals must satisfy start < stop")
    need(sc.disturbance.kind == "wind_gust" or sc.disturbance.scale <= 1.0, "disturbance scale above 1 leaves the mode bound")
    need(sc.X.contains(sc.start), "start violates constraints/X")
    y0 = bundle.C @ sc.start
    for nm, P in sc.obstacles:
        need(float(np.max(P.F @ y0 - P.g)) >= 0.0, f"start lies inside obstacle {nm}")


def _nested(inner: HPolytope, outer: HPolytope) -> bool:
    """inner ⊆ outer, compared by support functions on the rows of outer."""
    return all(inner.support(outer.F[r]) <= outer.g[r] + 1e-9 for r in range(outer.n_faces))


def load_scenario(path) -> Scenario:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ScenarioError(f"{path}: cannot read ({exc.strerror})", EXIT_PARSE) from None
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}", EXIT_PARSE) from None
    return parse_scenario(data, str(path))


def dump_scenario(sc: Scenario, path) -> Path:
    path = Path(path)
    path.write_text(json.dumps(sc.to_dict(), indent=2) + "\n")
    return path


def bundled_scenario(name: str) -> Path:
    """Path of a scenario shipped with the package (``name`` without ``.json``)."""
    from importlib import resources

    p = Path(str(resources.files("hier_mpc").joinpath(f"data/scenarios/{name}.json")))
    if not p.exists():
        raise FileNotFoundError(f"no bundled scenario {name!r}")
    return p


@dataclass
class Setup:
    """Everything derived from a scenario that the planner, tracker and simulator use."""

    scenario: Scenario
    bundle: ModelBundle
    K: np.ndarray
    modes: list[PreparedMode]
    obstacles: list[Obstacle]
    weights: TrackerWeights
    settings: NumericSettings

    def mode_by_name(self, name: str) -> PreparedMode:
        for pm in self.modes:
            if pm.name == name:
                return pm
        raise KeyError(name)


def feedback_gain(sc: Scenario, bundle: ModelBundle, settings: NumericSettings = DEFAULT_SETTINGS) -> np.ndarray:
    if sc.K is not None:
        return sc.K.copy()
    return lqr_gain(bundle.fine.A, bundle.fine.B, sc.lqr_Q, sc.lqr_R, settings)


def tracker_weights(sc: Scenario, bundle: ModelBundle, settings: NumericSettings = DEFAULT_SETTINGS) -> TrackerWeights:
    Q = np.eye(bundle.n) if sc.tracker_Q is None else sc.tracker_Q
    R = 0.1 * np.eye(bundle.m) if sc.tracker_R is None else sc.tracker_R
    P = riccati_fixed_point(bundle.fine.A, bundle.fine.B, Q, R, settings) if sc.tracker_P is None else sc.tracker_P
    return TrackerWeights(Q, R, P)


def setup_scenario(sc: Scenario, mode_names: list[str] | None = None, settings: NumericSettings = DEFAULT_SETTINGS) -> Setup:
    """Prepare modes (tubes, invariant sets, tightened sets) for a scenario.

    ``mode_names`` restricts the experiment to a subset of the modes.

    Raises
    ------
    ConfigurationError
        If every selected mode has an empty tightened set.
    """
    bundle = sc.bundle()
    K = feedback_gain(sc, bundle, settings)
    specs = sc.modes if mode_names is None else [ms for ms in sc.modes if ms.name in mode_names]
    if not specs:
        raise ConfigurationError(f"none of the modes {mode_names} exists")
    obstacles = [Obstacle(P, nm) for nm, P in sc.obstacles]
    modes = [Mode(ms.name, ms.X, ms.U, ms.W) for ms in specs]
    prepared = prepare_modes(modes, bundle, K, obstacles, sc.alpha_target)
    return Setup(sc, bundle, K, prepared, obstacles, tracker_weights(sc, bundle, settings), settings)


def planning_problem(setup: Setup, x0, N: int | None = None, previous=None) -> PlanProblem:
    """Planning problem for the scenario's goal, sets and planner options from state ``x0``."""
    sc = setup.scenario
    return PlanProblem(
        bundle=setup.bundle,
        modes=setup.modes,
        obstacles=setup.obstacles,
        x0=x0,
        goal=sc.goal,
        N=sc.N if N is None else N,
        X=sc.X,
        U=sc.U,
        alpha_x=sc.alpha_x,
        alpha_u=sc.alpha_u,
        stage_reference=sc.stage_reference,
        big_m=sc.big_m,
        intersample=sc.intersample,
        open_loop=sc.open_loop,
        previous=previous,
        settings=setup.settings,
    )


def _box(lo, hi) -> dict:
    return {"box": {"lo": list(map(float, lo)), "hi": list(map(float, hi))}}


def random_planar_scenario(rng: np.random.Generator, n_obstacles: int | None = None, N: int = 10, M: int = 5) -> Scenario:
    """Random planar double-integrator scenario with a fast and a slow mode.

    The arena is [0, 10]^2 with one to three box obstacles; start and goal
    are at rest and clear of every obstacle by at least 0.6.
    """
    if n_obstacles is None:
        n_obstacles = int(rng.integers(1, 4))
    boxes = []
    for _ in range(n_obstacles):
        c = rng.uniform(2.0, 8.0, size=2)
        h = rng.uniform(0.3, 1.0, size=2)
        boxes.append((c - h, c + h))

    def clear(p):
        return all(np.any(p < lo - 0.6) or np.any(p > hi + 0.6) for lo, hi in boxes)

    def free_point():
        while True:
            p = rng.uniform(0.5, 9.5, size=2)
            if clear(p):
                return p

    start, goal = free_point(), free_point()
    v_fast, v_slow = 1.0, 0.4
    data = {
        "name": "random_planar",
        "model": {"kind": "double_integrator", "dims": 2, "dt_track": 0.1, "steps_per_plan": M},
        "horizon": N,
        "start": [start[0], 0.0, start[1], 0.0],
        "goal": [goal[0], 0.0, goal[1], 0.0],
        "constraints": {"X": _box([0, -v_fast, 0, -v_fast], [10, v_fast, 10, v_fast]), "U": _box([-1, -1], [1, 1])},
        "obstacles": [{"name": f"box_{i}", "set": _box(lo, hi)} for i, (lo, hi) in enumerate(boxes)],
        "modes": [
            {
                "name": "fast",
                "X": _box([0, -v_fast, 0, -v_fast], [10, v_fast, 10, v_fast]),
                "U": _box([-1, -1], [1, 1]),
                "W": {"box": [0.01, 0.02, 0.01, 0.02]},
            },
            {
                "name": "slow",
                "X": _box([0, -v_slow, 0, -v_slow], [10, v_slow, 10, v_slow]),
                "U": _box([-0.5, -0.5], [0.5, 0.5]),
                "W": {"box": [0.003, 0.006, 0.003, 0.006]},
            },
        ],
        "gain": {"lqr": {"Q": {"diag": [10, 1, 10, 1]}, "R": {"diag": [0.1, 0.1]}}},
        "mrpi_alpha_target": 0.3,
    }
    return parse_scenario(data, "<random planar>")
