import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conicgeom import Cone, halfspace, orthant
from conicgeom import borel as b
from conicgeom import numerics as nm
from conicgeom.cone import inv_adjoint

vec3 = st.lists(st.floats(-3, 3, allow_nan=False), min_size=3, max_size=3).map(np.array)
scales = st.floats(0.01, 100)


def test_conic_basics():
    X = np.array([[0.0, 0.0], [1.0, 0.1], [-1.0, 0.0]])
    assert list(b.Full(2).contains(X)) == [True, True, True]
    assert list(b.ZeroOnly(2).contains(X)) == [True, False, False]
    assert list(b.Star(2).contains(X)) == [False, True, True]
    cap = b.Cap(np.array([1.0, 0.0]), 0.9)
    assert list(cap.contains(X)) == [False, True, False]
    assert list((cap | b.ZeroOnly(2)).contains(X)) == [True, True, False]
    assert list((~cap).contains(X)) == [True, False, True]
    assert list((cap & b.FromCone(orthant(2))).contains(X)) == [False, True, False]


@given(vec3, scales)
@settings(max_examples=50, deadline=None)
def test_sets_are_conic(x, s):
    sets = [b.Cap(np.array([1.0, 0.713, 0.129]), 0.5123), b.FromCone(orthant(3)), b.Star(3),
            b.Image(np.diag([2.0, 1.0, 1.0]), b.Cap(np.array([1.0, 0.217, 0.0]), 0.7071))]
    for M in sets:
        assert b.conic_member(M, x) == b.conic_member(M, s * x)


def test_image_and_product():
    T = np.array([[2.0, 0.0], [0.0, 1.0]])
    M = b.Image(T, b.Cap(np.array([1.0, 1.0]), 0.99))
    assert b.conic_member(M, [2.0, 1.0])
    assert not b.conic_member(M, [1.0, 1.0])
    P = b.Product(b.Cap(np.array([1.0]), 0.5), b.FromCone(orthant(2)))
    assert b.conic_member(P, [1.0, 0.5, 0.5])
    assert not b.conic_member(P, [-1.0, 0.5, 0.5])
    assert b.image_set(T, b.Full(2)) == b.Full(2)


def test_as_cone_and_minkowski():
    C = b.as_cone(b.Intersection([b.FromCone(orthant(2)), b.FromCone(halfspace([1, -1]))]))
    assert C.equals(Cone.from_halfspaces([[-1, 0], [0, -1], [1, -1]]))
    S = b.minkowski_sum_sets(b.FromCone(Cone.from_generators([[1], [0]])), b.FromCone(Cone.from_generators([[0], [1]])))
    assert b.as_cone(S).equals(orthant(2))
    with pytest.raises(b.UnsupportedKind):
        b.minkowski_sum_sets(b.Cap(np.ones(2), 0.5), b.FromCone(orthant(2)))


def test_lift_membership():
    L = b.Lift(orthant(2))
    assert b.biconic_member(L, [1.0, 0.0], [0.0, -1.0])
    assert not b.biconic_member(L, [1.0, 0.0], [-1.0, 0.0])
    assert not b.biconic_member(L, [1.0, 1.0], [0.0, -1.0])
    assert b.biconic_member(L, [0.0, 0.0], [-1.0, -1.0])


def test_lifted_skeleton():
    S1 = b.LiftedSkeleton(orthant(2), 1)
    assert b.biconic_member(S1, [1.0, 0.0], [0.0, -2.0])
    assert not b.biconic_member(S1, [1.0, 0.0], [0.0, 0.0])
    assert not b.biconic_member(S1, [1.0, 1.0], [0.0, 0.0])
    assert b.biconic_member(b.LiftedSkeleton(orthant(2), 2), [1.0, 1.0], [0.0, 0.0])


@given(st.integers(0, 2**31 - 1))
@settings(max_examples=30, deadline=None)
def test_rev_of_lift_is_lift_of_polar(seed):
    rng = nm.Rng(seed)
    C = Cone.from_generators([[1, 1, -1, -1], [1, -1, 1, -1], [1, 1, 1, 1]])
    X = rng.normal((50, 3))
    Y, _, _ = C.lattice.project_batch(X)
    Yp = X - Y
    M = b.Lift(C)
    R = b.rev(M)
    assert isinstance(R, b.Lift)
    assert np.array_equal(M.contains(Y, Yp), R.contains(Yp, Y))
    assert np.all(M.contains(Y, Yp))


@given(st.integers(0, 2**31 - 1))
@settings(max_examples=30, deadline=None)
def test_gl_action_closed_form_matches_generic(seed):
    rng = nm.Rng(seed)
    T = rng.normal((3, 3)) + 3 * np.eye(3)
    C = orthant(3)
    closed = b.gl_action(T, b.Lift(C))
    generic = b.GlImage(T, b.Lift(C))
    X = rng.normal((40, 3))
    TC = C.astype_float().linear_image(T)
    Y, _, _ = TC.lattice.project_batch(X)
    Yp = X - Y
    assert np.array_equal(closed.contains(Y, Yp), generic.contains(Y, Yp))
    M = b.ProductForm(b.Cap(np.array([1.0, 0.0, 0.0]), 0.3), b.Full(3))
    pf = b.gl_action(T, M)
    assert np.array_equal(pf.contains(Y, Yp), b.GlImage(T, M).contains(Y, Yp))


def test_rev_of_gl_image():
    T = np.array([[2.0, 1.0], [0.0, 1.0]])
    M = b.ProductForm(b.Cap(np.array([1.0, 0.0]), 0.3), b.Cap(np.array([0.0, -1.0]), 0.3))
    R = b.rev(b.GlImage(T, b.Rev(M)))
    X = np.array([[1.0, -0.3], [0.2, 1.0], [-1.0, 0.1]])
    Xp = np.array([[0.4, -1.0], [1.0, 0.0], [0.0, 1.0]])
    # rev(T M) at (x, x') is T M at (x', x)
    assert np.array_equal(R.contains(X, Xp), b.GlImage(T, b.Rev(M)).contains(Xp, X))
    assert np.allclose(inv_adjoint(inv_adjoint(T)), T)


def test_wedge_vee_of_products_and_lifts():
    A = b.ProductForm(b.FromCone(orthant(2)), b.FromCone(orthant(2).polar()))
    B = b.ProductForm(b.FromCone(halfspace([-1, 1])), b.FromCone(halfspace([-1, 1]).polar()))
    W = b.wedge(A, B)
    assert isinstance(W, b.ProductForm)
    assert b.conic_member(W.first, [1.0, 0.0])
    assert not b.conic_member(W.first, [0.0, 1.0])
    V = b.vee(A, B)
    assert b.conic_member(V.first, [-5.0, 1.0])
    assert isinstance(b.wedge(b.Lift(orthant(2)), b.Lift(halfspace([1, 1]))), b.Lift)
    assert isinstance(b.vee(b.Lift(orthant(2)), b.Lift(halfspace([1, 1]))), b.Lift)
    with pytest.raises(b.UnsupportedKind):
        b.wedge(b.BiconicPredicate(2, lambda x, y: True), A)


def test_biconic_product():
    P = b.biconic_product(b.Lift(orthant(1)), b.Lift(orthant(2)))
    assert isinstance(P, b.Lift)
    assert P.cone.equals(orthant(3))
    Q = b.biconic_product(b.ProductForm(b.Full(1), b.ZeroOnly(1)), b.ProductForm(b.Full(2), b.Full(2)))
    assert b.biconic_member(Q, [1.0, 2.0, 3.0], [0.0, 1.0, 1.0])
    assert not b.biconic_member(Q, [1.0, 2.0, 3.0], [1.0, 1.0, 1.0])
