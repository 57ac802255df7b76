import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conicgeom import Cone, halfspace, orthant, ray
from conicgeom import numerics as nm
from conicgeom.faces import (NotInCone, ell_vector, enumerate_faces, f_vector, intersection_dim,
                             is_general_position, locate_skeleton, spans_k)
from conicgeom.measures import convolve_exact

SQUARE = [[1, 1, -1, -1], [1, -1, 1, -1], [1, 1, 1, 1]]


@pytest.mark.parametrize("cone, expected", [
    (orthant(3), [1, 3, 3, 1]),
    (orthant(4), [1, 4, 6, 4, 1]),
    (halfspace([0, 1]), [0, 1, 1]),
    (Cone.subspace([[1, 0], [0, 1], [0, 0]]), [0, 0, 1, 0]),
    (Cone.zero(2), [1, 0, 0]),
    (Cone.full(2), [0, 0, 1]),
    (Cone.from_generators(SQUARE), [1, 4, 4, 1]),
    (orthant(3).product(ray([1, 0])), [1, 4, 6, 4, 1, 0]),
])
def test_f_vectors(cone, expected):
    assert list(f_vector(cone)) == expected


def test_zoo_polarity_euler_and_products(zoo):
    for name, C in zoo.items():
        f = f_vector(C)
        fp = f_vector(C.polar())
        assert list(fp) == list(f[::-1]), name
        if not C.is_subspace():
            assert sum((-1) ** k * int(x) for k, x in enumerate(f)) == 0, name
    for a, b in [("orthant2", "ray2"), ("halfplane2", "rotquadrant2"), ("line2", "orthant2")]:
        P = zoo[a].product(zoo[b])
        assert list(f_vector(P)) == [int(x) for x in convolve_exact(list(f_vector(zoo[a])), list(f_vector(zoo[b])))]


def test_faces_are_unique_and_sorted():
    lat = enumerate_faces(Cone.from_generators(SQUARE))
    keys = [(f.dim, tuple(sorted(f.tight_set))) for f in lat]
    assert keys == sorted(keys)
    assert len({f.tight_set for f in lat}) == len(lat)
    assert lat.top.dim == 3
    assert lat.minimal.dim == 0


def test_ell_vector_and_spans():
    assert list(ell_vector(halfspace([1, 2, -1]))) == [0, 0, 1, 0]
    spans = spans_k(orthant(3), 2)
    assert len(spans) == 3
    assert all(S.is_subspace() and S.lineality() == 2 for S in spans)


def test_locate_skeleton():
    C = orthant(3)
    assert locate_skeleton(C, nm.exact_array([0, 0, 0]))[0] == 0
    assert locate_skeleton(C, nm.exact_array([1, 0, 0]))[0] == 1
    assert locate_skeleton(C, np.array([1.0, 2.0, 0.0]))[0] == 2
    assert locate_skeleton(C, np.array([1.0, 2.0, 3.0]))[0] == 3
    with pytest.raises(NotInCone):
        locate_skeleton(C, np.array([-1.0, 0.0, 0.0]))


def test_intersection_dim():
    perps = [nm.exact_array([[0, 0, 1]]), nm.exact_array([[0, 1, 0]])]
    assert intersection_dim(perps, 3, True, 0) == 1


def test_general_position_examples():
    assert is_general_position([orthant(2), Cone.from_generators([[2, -1], [1, 2]])])
    assert not is_general_position([orthant(2), orthant(2)])
    assert not is_general_position([orthant(3), halfspace([1, 0, 0])])
    assert is_general_position([orthant(3), halfspace([1, 2, -1])])


@given(st.integers(0, 2**31 - 1))
@settings(max_examples=20, deadline=None)
def test_random_rotations_are_generic(seed):
    Q = nm.sample_haar_orthogonal(3, nm.Rng(seed))
    D = Cone.from_generators(SQUARE).astype_float().linear_image(Q)
    assert is_general_position([orthant(3).astype_float(), D])


@given(st.integers(0, 2**31 - 1))
@settings(max_examples=20, deadline=None)
def test_project_batch_resolves_generic_points(seed):
    C = Cone.from_generators(SQUARE)
    X = nm.Rng(seed).normal((200, 3))
    Y, idx, count = C.lattice.project_batch(X)
    assert np.all(count == 1)
    Yp = X - Y
    assert np.max(np.abs(np.einsum("ij,ij->i", Y, Yp))) <= 1e-9 * np.max(np.sum(X**2, axis=1))
    dims = C.lattice.face_dims()[idx]
    assert set(np.unique(dims)) <= {0, 1, 2, 3}
