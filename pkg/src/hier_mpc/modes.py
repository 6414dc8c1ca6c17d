"""Operating modes and the sets derived from them.

A mode pairs a state region, an input region and the disturbance bound valid
inside them.  Preparing a mode for a given plant and feedback gain computes
the growing error tube E(j), the invariant outer set Z with its margins D_j,
and every tightened set the two layers use.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .convex_sets import (
    HPolytope,
    Obstacle,
    Zonotope,
    enlarge_obstacle,
    error_tube,
    linear_map,
    mrpi_outer,
    pontryagin_diff,
    tube_margin,
)
from .settings import DEFAULT_SETTINGS
from .vehicle_models import ModelBundle


class ConfigurationError(ValueError):
    pass


@dataclass
class Mode:
    """Operating region ``(X_i, U_i)`` with disturbance bound ``W_i``."""

    name: str
    X: HPolytope
    U: HPolytope
    W: Zonotope

    def __post_init__(self):
        if np.any(self.W.center != 0):
            raise ConfigurationError(f"mode {self.name!r}: W must be origin-centered")


@dataclass
class PreparedMode:
    """A mode together with its tubes and tightened sets.

    Attributes
    ----------
    tube : list of Zonotope
        E(0..M).
    Z, s, alpha
        Invariant outer set and the parameters it was built with.
    margins : list of Zonotope
        D_0..D_M with E(j) + D_j inside Z.
    X_tight, U_tight : HPolytope
        X ⊖ Z and U ⊖ K Z, used by the planner.
    X_tube, U_tube : list of HPolytope
        X ⊖ E(j) and U ⊖ K E(j), used by the tracker.
    enlarged : list of numpy.ndarray
        Obstacle offsets grown by the output image of Z, one per obstacle.
    """

    mode: Mode
    index: int
    K: np.ndarray
    A_K: np.ndarray
    tube: list[Zonotope]
    Z: Zonotope
    s: int
    alpha: float
    margins: list[Zonotope]
    X_tight: HPolytope
    U_tight: HPolytope
    X_tube: list[HPolytope]
    U_tube: list[HPolytope]
    CZ: Zonotope
    C: np.ndarray
    enlarged: list[np.ndarray] = field(default_factory=list)

    @property
    def name(self) -> str:
        return self.mode.name

    @property
    def usable(self) -> bool:
        return not (self.X_tight.is_empty or self.U_tight.is_empty)

    @property
    def terminal_input_ok(self) -> bool:
        """Zero input admissible in U ⊖ K Z (needed by the steady-state terminal set)."""
        return self.U_tight.contains(np.zeros(self.U_tight.dim), tol=0.0)

    def empty_rows(self) -> list[str]:
        """Names of tightened sets that came out empty (for diagnostics)."""
        out = []
        for label, P in [("X ⊖ Z", self.X_tight), ("U ⊖ KZ", self.U_tight)]:
            if P.is_empty:
                bad = np.flatnonzero(P.g < 0)
                out.append(f"{label} (rows {bad.tolist()})" if bad.size else label)
        for j, P in enumerate(self.X_tube):
            if P.is_empty:
                out.append(f"X ⊖ E({j})")
        for j, P in enumerate(self.U_tube):
            if P.is_empty:
                out.append(f"U ⊖ KE({j})")
        return out


def prepare_mode(
    mode: Mode,
    index: int,
    bundle: ModelBundle,
    K: np.ndarray,
    obstacles: list[Obstacle] = (),
    alpha_target: float = DEFAULT_SETTINGS.mrpi_alpha_target,
    max_s: int = DEFAULT_SETTINGS.mrpi_max_s,
) -> PreparedMode:
    """Compute tubes, invariant set, margins and tightened sets for one mode.

    ``s`` is forced to be at least ``M`` so that the margins D_j for
    ``j <= M`` decompose Z exactly.
    """
    A, B, C = bundle.fine.A, bundle.fine.B, bundle.fine.C
    M = bundle.M
    K = np.asarray(K, dtype=float)
    A_K = A + B @ K
    tube = error_tube(A_K, mode.W, M)
    res = mrpi_outer(A_K, mode.W, alpha_target, min_s=M, max_s=max_s)
    margins = [tube_margin(A_K, mode.W, res.s, res.alpha, j) for j in range(M + 1)]
    X_tight = pontryagin_diff(mode.X, res.Z)
    U_tight = pontryagin_diff(mode.U, linear_map(K, res.Z))
    X_tube = [pontryagin_diff(mode.X, E) for E in tube]
    U_tube = [pontryagin_diff(mode.U, linear_map(K, E)) for E in tube]
    CZ = linear_map(C, res.Z)
    prepared = PreparedMode(
        mode=mode,
        index=index,
        K=K,
        A_K=A_K,
        tube=tube,
        Z=res.Z,
        s=res.s,
        alpha=res.alpha,
        margins=margins,
        X_tight=X_tight,
        U_tight=U_tight,
        X_tube=X_tube,
        U_tube=U_tube,
        CZ=CZ,
        C=C,
    )
    for ob in obstacles:
        # the obstacle grows by (-C)Z; Z is symmetric so this equals C Z
        offsets = enlarge_obstacle(ob.base, linear_map(-C, res.Z))
        prepared.enlarged.append(offsets)
        ob.set_enlarged(mode.name, offsets)
    return prepared


def prepare_modes(modes, bundle, K, obstacles=(), alpha_target=DEFAULT_SETTINGS.mrpi_alpha_target):
    prepared = [prepare_mode(m, i, bundle, K, obstacles, alpha_target) for i, m in enumerate(modes)]
    if not any(p.usable for p in prepared):
        details = "; ".join(f"{p.name}: {', '.join(p.empty_rows())}" for p in prepared)
        raise ConfigurationError(f"every mode has an empty tightened set ({details})")
    return prepared
