import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.optimize import linprog
from scipy.spatial import ConvexHull

from helpers import random_stable_system, support_oracle, unit_directions, zonotope_vertices
from hier_mpc.convex_sets import (
    EmptySetError,
    HPolytope,
    MrpiError,
    Obstacle,
    Zonotope,
    enlarge_obstacle,
    error_tube,
    linear_map,
    merge_parallel,
    minkowski_sum,
    mrpi_outer,
    pontryagin_diff,
    support_polytope,
    support_zonotope,
    tube_margin,
    zonotope_contains,
    zonotope_facets,
)

UNIT_SQUARE = Zonotope([0, 0], np.eye(2))
INTERVAL = Zonotope([0.0], [[1.0]])


def template(n, count=32, seed=0):
    return unit_directions(np.random.default_rng(seed), n, count)


# support functions


def test_support_zonotope_examples():
    assert support_zonotope(UNIT_SQUARE, [1, 1]) == 2.0
    assert support_zonotope(UNIT_SQUARE, [1, 0]) == 1.0
    assert support_zonotope(Zonotope([1, 0], [[1], [0]]), [1, 0]) == 2.0


def test_support_polytope_examples():
    box = HPolytope.box([-1, -1], [1, 1])
    assert support_polytope(box, [1, 1]) == pytest.approx(2.0, abs=1e-12)
    half = HPolytope([[1.0]], [1.0])
    assert support_polytope(half, [1.0]) == pytest.approx(1.0)
    assert support_polytope(half, [-1.0]) == math.inf


def test_support_polytope_of_empty_set_raises():
    with pytest.raises(EmptySetError):
        support_polytope(HPolytope([[1.0], [-1.0]], [0.0, -1.0]), [1.0])


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000))
def test_support_polytope_matches_linprog(seed):
    rng = np.random.default_rng(seed)
    F = rng.normal(size=(8, 3))
    g = rng.uniform(0.5, 2.0, size=8)
    a = rng.normal(size=3)
    ref = linprog(-a, A_ub=F, b_ub=g, bounds=[(None, None)] * 3, method="highs")
    P = HPolytope(F, g)
    if ref.status == 3:
        assert support_polytope(P, a) == math.inf
    else:
        assert support_polytope(P, a) == pytest.approx(-ref.fun, abs=1e-7)


# set operations


def test_minkowski_sum_support_adds():
    rng = np.random.default_rng(1)
    A = Zonotope(rng.normal(size=3), rng.normal(size=(3, 2)))
    B = Zonotope(rng.normal(size=3), rng.normal(size=(3, 4)))
    S = minkowski_sum(A, B)
    for a in template(3):
        assert S.support(a) == pytest.approx(A.support(a) + B.support(a), abs=1e-12)


def test_linear_map_examples():
    Z = Zonotope([1.0, 2.0], [[1.0, 0.5], [0.0, 1.0]])
    assert linear_map(np.eye(2), Z) == Z
    zero = linear_map(np.zeros((2, 2)), Z)
    assert np.all(zero.half_widths() == 0) and np.all(zero.center == 0)
    seg = linear_map([[1.0, 0.0]], UNIT_SQUARE)
    assert seg.support([1.0]) == 1.0 and seg.support([-1.0]) == 1.0


def test_pontryagin_box_difference():
    D = pontryagin_diff(HPolytope.box([-2, -2], [2, 2]), UNIT_SQUARE)
    assert D == HPolytope.box([-1, -1], [1, 1])


def test_pontryagin_unnormalized_normal():
    D = pontryagin_diff(HPolytope([[2.0, 0.0]], [4.0]), UNIT_SQUARE)
    assert D.g[0] == pytest.approx(2.0)


def test_pontryagin_over_tightening_is_flagged_empty():
    D = pontryagin_diff(HPolytope.box([-1.0], [1.0]), Zonotope([0.0], [[2.0]]))
    assert D.is_empty


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000))
def test_pontryagin_then_minkowski_stays_inside(seed):
    rng = np.random.default_rng(seed)
    n = 3
    P = HPolytope.box(-rng.uniform(1, 3, n), rng.uniform(1, 3, n))
    S = Zonotope.box(rng.uniform(0, 0.9, n))
    D = pontryagin_diff(P, S)
    assert not D.is_empty
    for a in template(n, seed=seed):
        assert D.support(a) + S.support(a) <= P.support(a) + 1e-9


def test_enlarge_box_obstacle():
    O = HPolytope.box([-1, -1], [1, 1])
    f = enlarge_obstacle(O, Zonotope.box([0.5, 0.5]))
    assert HPolytope(O.F, f) == HPolytope.box([-1.5, -1.5], [1.5, 1.5])


def test_enlarge_by_singleton_is_identity():
    O = HPolytope([[1.0, 2.0], [-1.0, 0.0], [0.0, -1.0]], [3.0, 0.0, 0.0])
    assert np.array_equal(enlarge_obstacle(O, Zonotope([0.0, 0.0])), O.g)


def test_enlarge_triangle_diagonal_face():
    tri = HPolytope([[-1.0, 0.0], [0.0, -1.0], [1.0, 1.0]], [0.0, 0.0, 1.0])
    f = enlarge_obstacle(tri, UNIT_SQUARE)
    assert f[2] == pytest.approx(1.0 + 2.0)
    # vertices of the true sum lie inside the enlarged polytope
    tri_vertices = np.array([[0, 0], [1, 0], [0, 1]], dtype=float)
    for v in tri_vertices:
        for z in zonotope_vertices(UNIT_SQUARE):
            assert np.all(tri.F @ (v + z) <= f + 1e-12)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000))
def test_enlarged_obstacle_contains_true_sum(seed):
    rng = np.random.default_rng(seed)
    pts = rng.normal(size=(6, 2))
    hull = ConvexHull(pts)
    E = hull.equations[:, :2]
    f = -hull.equations[:, 2]
    O = HPolytope(E, f)
    S = Zonotope(np.zeros(2), rng.normal(size=(2, 3)) * 0.3)
    f_big = enlarge_obstacle(O, S)
    for v in pts[hull.vertices]:
        for z in zonotope_vertices(S):
            assert np.all(E @ (v + z) <= f_big + 1e-9)


def test_merge_parallel_keeps_the_set():
    G = np.array([[1.0, 2.0, 0.0, -1.0], [0.0, 0.0, 1.0, 0.0]])
    M = merge_parallel(G)
    assert M.shape[1] == 2
    for a in template(2):
        assert support_oracle(np.zeros(2), M, a) == pytest.approx(support_oracle(np.zeros(2), G, a), abs=1e-12)


# membership


def test_zonotope_contains_examples():
    Z = Zonotope([0.3, -0.2], [[1.0, 0.2], [0.0, 0.5]])
    assert zonotope_contains(Z, Z.center)
    assert zonotope_contains(INTERVAL, [1.0])
    assert not zonotope_contains(INTERVAL, [1.0 + 1e-6])


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10_000))
def test_zonotope_contains_agrees_with_facets(seed):
    rng = np.random.default_rng(seed)
    Z = Zonotope(rng.normal(size=3), rng.normal(size=(3, 5)))
    H = zonotope_facets(Z)
    x = Z.center + rng.normal(size=3) * 1.5
    slack = np.max(H.F @ x - H.g)
    if abs(slack) > 1e-6:
        assert zonotope_contains(Z, x) == (slack <= 0)


def test_zonotope_facets_of_box():
    H = zonotope_facets(Zonotope.box([1.0, 2.0]))
    for a in template(2):
        assert H.support(a) == pytest.approx(Zonotope.box([1.0, 2.0]).support(a), abs=1e-9)


# tubes, invariant sets and margins


def test_error_tube_scalar_partial_sums():
    tube = error_tube([[0.5]], INTERVAL, 3)
    assert tube[0].n_gens == 0
    assert [E.support([1.0]) for E in tube[1:]] == pytest.approx([1.0, 1.5, 1.75], abs=1e-15)


def test_error_tube_deadbeat_is_w():
    tube = error_tube([[0.0]], INTERVAL, 4)
    assert all(E.support([1.0]) == 1.0 for E in tube[1:])


def test_mrpi_scalar_exact():
    res = mrpi_outer([[0.5]], INTERVAL, 0.125)
    assert res.s == 3
    assert res.alpha == pytest.approx(0.125, abs=1e-15)
    assert res.Z.support([1.0]) == pytest.approx(2.0, abs=1e-12)
    assert res.Z.support([-1.0]) == pytest.approx(2.0, abs=1e-12)


def test_mrpi_deadbeat_equals_w():
    res = mrpi_outer([[0.0]], INTERVAL, 0.3)
    assert res.s == 1
    assert res.Z.support([1.0]) == pytest.approx(1.0, abs=1e-15)


def test_mrpi_planar_geometric_series():
    res = mrpi_outer(0.5 * np.eye(2), UNIT_SQUARE, 0.25)
    assert res.s == 2
    assert np.allclose(res.Z.half_widths(), [2.0, 2.0], atol=1e-12)


def test_mrpi_respects_min_s():
    res = mrpi_outer([[0.5]], INTERVAL, 0.125, min_s=5)
    assert res.s == 5


def test_mrpi_fails_for_unstable_gain():
    with pytest.warns(RuntimeWarning):
        with pytest.raises(MrpiError):
            mrpi_outer([[1.1]], INTERVAL, 0.1, max_s=50)


def test_mrpi_rejects_shifted_w():
    with pytest.raises(ValueError, match="origin-centered"):
        mrpi_outer([[0.5]], Zonotope([0.1], [[1.0]]), 0.1)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000), st.integers(2, 4))
def test_mrpi_invariance_property(seed, n):
    rng = np.random.default_rng(seed)
    A_K, W = random_stable_system(rng, n)
    res = mrpi_outer(A_K, W, 0.2)
    Z = res.Z
    for a in unit_directions(rng, n, 100):
        lhs = support_oracle(np.zeros(n), A_K @ Z.G, a) + support_oracle(np.zeros(n), W.G, a)
        assert lhs <= support_oracle(np.zeros(n), Z.G, a) + 1e-9


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 3))
def test_tube_grows_monotonically_inside_z(seed, n):
    rng = np.random.default_rng(seed)
    A_K, W = random_stable_system(rng, n)
    res = mrpi_outer(A_K, W, 0.2, min_s=10)
    tube = error_tube(A_K, W, 10)
    for a in template(n):
        vals = [E.support(a) for E in tube] + [res.Z.support(a)]
        assert all(x <= y + 1e-9 for x, y in zip(vals, vals[1:]))


def test_tube_margin_scalar_values():
    beta = 8.0 / 7.0
    D0 = tube_margin([[0.5]], INTERVAL, 3, 0.125, 0)
    D1 = tube_margin([[0.5]], INTERVAL, 3, 0.125, 1)
    D3 = tube_margin([[0.5]], INTERVAL, 3, 0.125, 3)
    assert D0.support([1.0]) == pytest.approx(2.0, abs=1e-12)
    assert D1.support([1.0]) == pytest.approx((beta - 1) + beta * 0.75, abs=1e-12)
    assert D1.support([1.0]) == pytest.approx(1.0, abs=1e-12)
    assert D3.support([1.0]) == pytest.approx(0.25, abs=1e-12)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 3))
def test_tube_plus_margin_equals_z(seed, n):
    rng = np.random.default_rng(seed)
    A_K, W = random_stable_system(rng, n)
    res = mrpi_outer(A_K, W, 0.2, min_s=6)
    tube = error_tube(A_K, W, res.s)
    for j in range(res.s + 1):
        D = tube_margin(A_K, W, res.s, res.alpha, j)
        for a in template(n):
            assert tube[j].support(a) + D.support(a) == pytest.approx(res.Z.support(a), abs=1e-9)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 25))
def test_tube_margin_beyond_s_stays_sound(seed, extra):
    rng = np.random.default_rng(seed)
    A_K, W = random_stable_system(rng, 2)
    res = mrpi_outer(A_K, W, 0.3)
    j = res.s + extra
    E = error_tube(A_K, W, j)[j]
    D = tube_margin(A_K, W, res.s, res.alpha, j)
    for a in template(2):
        assert E.support(a) + D.support(a) <= res.Z.support(a) + 1e-9


# obstacles and polytopes


def test_obstacle_must_be_bounded():
    with pytest.raises(ValueError, match="unbounded"):
        Obstacle(HPolytope([[1.0, 0.0]], [1.0]), "half plane")


def test_obstacle_boundary_is_safe():
    ob = Obstacle(HPolytope.box([0, 0], [1, 1]), "box")
    assert ob.avoided_by([1.0, 0.5])
    assert not ob.avoided_by([0.5, 0.5])
    assert ob.avoided_by([2.0, 2.0])


def test_enlarged_offsets_must_not_shrink():
    ob = Obstacle(HPolytope.box([0, 0], [1, 1]))
    with pytest.raises(ValueError):
        ob.set_enlarged("m", ob.f - 0.1)


def test_hpolytope_validation():
    with pytest.raises(ValueError):
        HPolytope([[0.0, 0.0]], [1.0])
    with pytest.raises(ValueError):
        HPolytope([[1.0, 0.0]], [1.0, 2.0])
