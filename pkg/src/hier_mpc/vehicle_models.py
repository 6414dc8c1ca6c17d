"""Model factories: the linearized quadcopter and a double-integrator test model.

Each factory returns a :class:`ModelBundle` holding the continuous model, the
fine (tracking) discretization, the coarse planning model and the list of
coordinates that must vanish at a steady state.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, fields
from importlib import resources

import numpy as np

from .convex_sets import HPolytope, Zonotope, zonotope_facets
from .linalg import LtiModel, discretize_zoh, planning_model

QUAD_STATE_LABELS = ("p_x", "v_x", "theta", "w_x", "p_y", "v_y", "phi", "w_y", "p_z", "v_z")
QUAD_INPUT_LABELS = ("theta_c", "phi_c", "T_c")


@dataclass(frozen=True)
class QuadcopterParams:
    lambda_x: float = 0.1
    lambda_y: float = 0.1
    lambda_z: float = 0.1
    a_wx_theta: float = 4.0
    a_wx_wx: float = 2.0
    a_wy_phi: float = 4.0
    a_wy_wy: float = 2.0
    b_x: float = 8.0
    b_y: float = 8.0
    b_z: float = 8.0
    g: float = 9.81

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if not math.isfinite(v):
                raise ValueError(f"{f.name} must be finite")
        if min(self.lambda_x, self.lambda_y, self.lambda_z) < 0:
            raise ValueError("drag coefficients must be non-negative")
        if min(self.b_x, self.b_y, self.b_z) <= 0:
            raise ValueError("input gains must be positive")

    @classmethod
    def from_dict(cls, data: dict) -> "QuadcopterParams":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown quadcopter parameters: {sorted(unknown)}")
        return cls(**{k: float(v) for k, v in data.items()})

    def to_dict(self) -> dict:
        return asdict(self)


def default_quadcopter_params() -> QuadcopterParams:
    """Placeholder parameter set shipped in ``data/quadcopter_params.json``."""
    text = resources.files("hier_mpc").joinpath("data/quadcopter_params.json").read_text()
    data = json.loads(text)
    return QuadcopterParams.from_dict(data["params"])


@dataclass(frozen=True)
class ModelBundle:
    """Everything the planner and tracker need to know about a plant."""

    name: str
    Ac: np.ndarray
    Bc: np.ndarray
    fine: LtiModel
    M: int
    A_p: np.ndarray
    B_p: np.ndarray
    steady_zero: tuple[int, ...]
    state_labels: tuple[str, ...]
    input_labels: tuple[str, ...]

    @property
    def n(self) -> int:
        return self.fine.n

    @property
    def m(self) -> int:
        return self.fine.m

    @property
    def C(self) -> np.ndarray:
        return self.fine.C

    @property
    def position_idx(self) -> tuple[int, ...]:
        """State indices picked out by C (C is a selector)."""
        return tuple(int(np.flatnonzero(row)[0]) for row in self.C)

    @property
    def velocity_idx(self) -> tuple[int, ...]:
        return tuple(i for i, lab in enumerate(self.state_labels) if lab.startswith("v"))


def bundle_from_continuous(name, Ac, Bc, C, dt, M, steady_zero, state_labels, input_labels) -> ModelBundle:
    A, B = discretize_zoh(Ac, Bc, dt)
    fine = LtiModel(A, B, C, dt)
    A_p, B_p = planning_model(fine, M)
    return ModelBundle(
        name=name,
        Ac=np.asarray(Ac, dtype=float),
        Bc=np.asarray(Bc, dtype=float),
        fine=fine,
        M=M,
        A_p=A_p,
        B_p=B_p,
        steady_zero=tuple(steady_zero),
        state_labels=tuple(state_labels),
        input_labels=tuple(input_labels),
    )


def quadcopter_continuous(params: QuadcopterParams):
    """Continuous-time linearized quadcopter ``(Ac, Bc, C)``.

    State order ``[p_x v_x theta w_x | p_y v_y phi w_y | p_z v_z]``, inputs
    ``[theta_c, phi_c, T_c]``; C returns the three positions.
    """
    p = params
    A_lon = np.array(
        [
            [0, 1, 0, 0],
            [0, -p.lambda_x, -p.g, 0],
            [0, 0, 0, 1],
            [0, 0, -p.a_wx_theta, -p.a_wx_wx],
        ],
        dtype=float,
    )
    A_lat = np.array(
        [
            [0, 1, 0, 0],
            [0, -p.lambda_y, p.g, 0],
            [0, 0, 0, 1],
            [0, 0, -p.a_wy_phi, -p.a_wy_wy],
        ],
        dtype=float,
    )
    A_alt = np.array([[0, 1], [0, -p.lambda_z]], dtype=float)
    Ac = np.zeros((10, 10))
    Ac[0:4, 0:4] = A_lon
    Ac[4:8, 4:8] = A_lat
    Ac[8:10, 8:10] = A_alt
    Bc = np.zeros((10, 3))
    Bc[3, 0] = p.b_x
    Bc[7, 1] = p.b_y
    Bc[9, 2] = p.b_z
    C = np.zeros((3, 10))
    C[0, 0] = C[1, 4] = C[2, 8] = 1.0
    return Ac, Bc, C


def quadcopter(params: QuadcopterParams | None = None, dt: float = 0.05, M: int = 10) -> ModelBundle:
    params = params or default_quadcopter_params()
    Ac, Bc, C = quadcopter_continuous(params)
    # steady state: every velocity, angle and rate is zero; positions are free
    steady = (1, 2, 3, 5, 6, 7, 9)
    return bundle_from_continuous("quadcopter", Ac, Bc, C, dt, M, steady, QUAD_STATE_LABELS, QUAD_INPUT_LABELS)


def quadcopter_constraints(
    arena_lo=None,
    arena_hi=None,
    v_max: float = 1.5,
    v_xy_max: float | None = None,
    angle_max: float = math.pi / 4,
    input_angle_max: float = math.pi / 4,
    rate_max: float | None = None,
    thrust_max: float | None = None,
) -> tuple[HPolytope, HPolytope]:
    """State and input boxes of the quadcopter.

    Velocities are bounded by ``v_max`` (``v_xy_max`` overrides the horizontal
    ones), roll and pitch and their commands by ``angle_max`` and
    ``input_angle_max``.  Positions, angular rates and thrust are only bounded
    when the corresponding arguments are given.
    """
    hi = np.full(10, np.inf)
    lo = np.full(10, -np.inf)
    vxy = v_max if v_xy_max is None else v_xy_max
    hi[[1, 5]] = vxy
    hi[9] = v_max
    hi[[2, 6]] = angle_max
    if rate_max is not None:
        hi[[3, 7]] = rate_max
    lo = -hi
    if arena_lo is not None:
        lo[[0, 4, 8]] = arena_lo
        hi[[0, 4, 8]] = arena_hi
    X = _box_rows(lo, hi)
    ulo = np.array([-input_angle_max, -input_angle_max, -np.inf if thrust_max is None else -thrust_max])
    U = _box_rows(ulo, -ulo)
    return X, U


def _box_rows(lo: np.ndarray, hi: np.ndarray) -> HPolytope:
    """Box polytope keeping only the finite bounds."""
    n = lo.size
    eye = np.eye(n)
    F, g = [], []
    for i in range(n):
        if np.isfinite(hi[i]):
            F.append(eye[i])
            g.append(hi[i])
        if np.isfinite(lo[i]):
            F.append(-eye[i])
            g.append(-lo[i])
    return HPolytope(np.array(F), np.array(g))


@dataclass(frozen=True)
class ModeTemplate:
    name: str
    v_xy_max: float


def mode_presets() -> list[ModeTemplate]:
    """The two operating modes: fast (|v_x|, |v_y| <= 1.5) and slow (<= 1.0).

    Disturbance magnitudes are scenario data; the scenario loader checks that
    the slow mode's W lies inside the fast mode's.
    """
    return [ModeTemplate("fast", 1.5), ModeTemplate("slow", 1.0)]


def w_contained(W_inner: Zonotope, W_outer: Zonotope) -> bool:
    """True iff ``W_inner`` lies inside ``W_outer`` (supports compared on the outer facets)."""
    facets = zonotope_facets(W_outer)
    return bool(np.all(W_inner.support_rows(facets.F) <= facets.g + 1e-12))


def double_integrator(dims: int = 1, dt: float = 0.1, M: int = 5) -> ModelBundle:
    """Decoupled double integrators, state ``[p_1 v_1 p_2 v_2 ...]``."""
    if dims not in (1, 2, 3):
        raise ValueError("dims must be 1, 2 or 3")
    n = 2 * dims
    Ac = np.zeros((n, n))
    Bc = np.zeros((n, dims))
    C = np.zeros((dims, n))
    labels = []
    for d in range(dims):
        Ac[2 * d, 2 * d + 1] = 1.0
        Bc[2 * d + 1, d] = 1.0
        C[d, 2 * d] = 1.0
        labels += [f"p_{d}", f"v_{d}"]
    steady = tuple(2 * d + 1 for d in range(dims))
    inputs = tuple(f"a_{d}" for d in range(dims))
    return bundle_from_continuous("double_integrator", Ac, Bc, C, dt, M, steady, labels, inputs)
