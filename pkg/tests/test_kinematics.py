import itertools
import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conicgeom import Cone, halfspace, orthant, ray
from conicgeom import borel as b
from conicgeom import kinematics as km
from conicgeom import numerics as nm

X0, X1, X2 = km.Var(0), km.Var(1), km.Var(2)


def small_cfg(cones, **kw):
    kw.setdefault("rotations", 20)
    kw.setdefault("samples_per_trial", 2000)
    kw.setdefault("reference_samples", 20000)
    kw.setdefault("seed", 1)
    return km.ExperimentConfig(cones, **kw)


# -- formulas -----------------------------------------------------------------


@pytest.mark.parametrize("text, expected", [
    ("X0", X0),
    ("~X0", km.Not(X0)),
    ("X0 & X1 | X2", km.Or((km.And((X0, X1)), X2))),
    ("~(X0 & X1) | X2", km.Or((km.Not(km.And((X0, X1))), X2))),
    ("(X0 ∨ X1) ∧ ¬X0", km.And((km.Or((X0, X1)), km.Not(X0)))),
])
def test_parse_formula(text, expected):
    assert km.parse_formula(text) == expected
    assert km.parse_formula(str(expected)) == expected


@pytest.mark.parametrize("text", ["", "X0 &", "(X0", "X0 X1", "Y0", "X0 | | X1"])
def test_parse_formula_errors(text):
    with pytest.raises(ValueError):
        km.parse_formula(text)


def test_read_once():
    assert km.is_read_once(km.parse_formula("~(X0 & X1) | X2"))
    assert not km.is_read_once(km.parse_formula("(X0 | X1) & ~X0"))
    with pytest.raises(km.NotReadOnce):
        km.dim_formula(km.parse_formula("X0 & X0"), 3, [1])
    assert km.dim_formula(km.parse_formula("X0 & X0"), 3, [2], allow_repeated=True) == 1


def test_dim_formula_values():
    F = km.parse_formula("~(X0 & X1) | X2")
    assert km.dim_formula(F, 3, [2, 2, 0]) == 2
    assert km.dim_formula(F, 3, [2, 2, 1]) == 3
    assert km.dim_formula(km.and_chain(3), 4, [3, 3, 3]) == 1
    assert km.dim_formula(km.or_chain(2), 4, [1, 2]) == 3


@pytest.mark.parametrize("text", ["X0 & X1", "X0 | X1", "X0 & X1 & X2", "(X0 | X1) & X2"])
def test_dim_formula_monotone(text):
    F = km.parse_formula(text)
    n = len(km.variables(F))
    for d in range(1, 5):
        for ks in itertools.product(range(d + 1), repeat=n):
            base = km.dim_formula(F, d, ks)
            for i in range(n):
                if ks[i] < d:
                    up = list(ks)
                    up[i] += 1
                    assert km.dim_formula(F, d, up) >= base


@given(st.integers(0, 2**31 - 1))
@settings(max_examples=25, deadline=None)
def test_dim_formula_matches_exact_subspaces(seed):
    rng = np.random.default_rng(seed)
    F = km.parse_formula("~(X0 & X1) | X2")
    d = int(rng.integers(1, 5))
    ks = [int(rng.integers(0, d + 1)) for _ in range(3)]
    bases = [nm.exact_array(rng.integers(-5, 6, size=(d, k)).tolist()) if k else nm.zeros_exact((d, 0))
             for k in ks]
    if any(nm.rank(B) != B.shape[1] for B in bases if B.shape[1]):
        return
    out = km.eval_formula_subspaces(F, bases)
    # random integer bases can be special; only assert when they are generic
    subs = [Cone.subspace(B) if B.shape[1] else Cone.zero(d) for B in bases]
    from conicgeom.faces import is_general_position
    if is_general_position(subs, tol=0):
        assert out.shape[1] == km.dim_formula(F, d, ks)


def test_eval_formula_cones():
    C = km.eval_formula_cones(km.parse_formula("X0 & ~X1"), [orthant(2), halfspace([1, 1])])
    assert C.equals(ray([1, 1]))


# -- reports --------------------------------------------------------------------


def test_report_z_and_json():
    r = km.Report("x", "a = b", 1.0, 0.1, 0.8, 0.0, 10, 5, 3, params={"k": 1})
    assert r.z == pytest.approx(2.0)
    assert r.passed
    d = json.loads(r.to_json())
    for key in ("identity", "anchor", "lhs", "rhs", "stderr", "z", "n", "R", "seed"):
        assert key in d
    csv = km.reports_to_csv([r])
    assert csv.splitlines()[0].split(",") == km.CSV_COLUMNS
    bad = km.Report("x", "a = b", 1.0, 0.0, 0.8, 0.0, 10, 5, 3)
    assert not bad.passed
    assert km.Report("x", "", 0.5, 0.0, 0.5, 0.0, 1, 1, 0, exact=True).passed


def test_tuple_sum_delta_method():
    a = km.ComponentVector(np.array([0.5, 0.5]), np.array([0.1, 0.0]))
    c = km.ComponentVector.exact([0.25, 0.75])
    total, sd = km.tuple_sum([a, c], lambda idx: sum(idx) == 1)
    assert total == pytest.approx(0.5 * 0.75 + 0.5 * 0.25)
    assert sd == pytest.approx(0.75 * 0.1)


def test_config_validation():
    with pytest.raises(ValueError):
        km.ExperimentConfig([orthant(2)], rotations=0)
    with pytest.raises(ValueError):
        km.ExperimentConfig([orthant(2)], transforms=[np.zeros((2, 2))])
    with pytest.raises(Exception):
        km.ExperimentConfig([orthant(2), orthant(3)])


# -- runners (small sizes; statistical power lives in the acceptance suite) -----


def test_kinematic_v_and_u_small():
    # 20 trials are too few for a trustworthy trial-level sigma; use 100
    cfg = small_cfg([orthant(3), halfspace([1, 2, -1])], k=[1, 2], rotations=100)
    for r in km.run_kinematic_v(cfg):
        assert r.passed, r.summary()
    for r in km.run_kinematic_u(cfg):
        assert r.passed, r.summary()


def test_subspaces_give_exact_agreement():
    L1 = Cone.subspace([[1, 0], [0, 1], [0, 0]])
    L2 = Cone.subspace([[1], [1], [1]])
    cfg = small_cfg([L1, L2], k=[1, 2], rotations=10, samples_per_trial=500)
    for r in km.run_kinematic_v(cfg, "polar"):
        assert np.all(r.trial_values == r.rhs), r.summary()
    F = km.parse_formula("X0 | X1")
    for r in km.run_general_formula(F, cfg):
        assert np.all(r.trial_values == r.rhs), r.summary()


def test_theta_with_lifts_equals_v_samplewise():
    C0, C1 = orthant(2), Cone.from_generators([[2, -1], [1, 2]])
    cfg = small_cfg([C0, C1], k=1, sets=[b.Lift(C0), b.Lift(C1)])
    th = km.run_kinematic_theta(cfg)
    v = km.run_kinematic_v(small_cfg([C0, C1], k=1))
    assert np.array_equal(th.trial_values, v.trial_values)
    assert th.degenerate_samples == 0


def test_normal_decomposition_unique():
    rng = nm.Rng(3)
    C0 = orthant(2).astype_float()
    C1 = Cone.from_generators([[2, -1], [1, 2]]).astype_float().linear_image(nm.sample_haar_orthogonal(2, rng))
    C = C0.intersect(C1)
    X = rng.normal((500, 2))
    Y, _, _ = C.lattice.project_batch(X)
    # at the apex both normal spaces are the whole plane, so only y != 0 is unique
    keep = np.linalg.norm(Y, axis=1) > 0
    X, Y = X[keep], Y[keep]
    parts, ok = km.normal_decomposition(Y, X - Y, [C0, C1])
    recon = sum(p for p in parts)
    assert np.allclose(recon[ok], (X - Y)[ok], atol=1e-8)
    assert (~ok).sum() <= 1


def test_general_formula_rejects_non_orthogonal():
    cfg = small_cfg([orthant(2), orthant(2)], transforms=[np.diag([2.0, 1.0]), np.eye(2)])
    with pytest.raises(km.NonOrthogonalTransform):
        km.run_general_formula(km.parse_formula("X0 & X1"), cfg)
    with pytest.raises(km.NotReadOnce):
        km.run_general_formula(km.parse_formula("X0 & X0"), small_cfg([orthant(2)]))


def test_ell_exact():
    cfg = small_cfg([Cone.subspace([[1, 0], [0, 1], [0, 0]]), halfspace([1, 1, 1])], rotations=30)
    r = km.run_ell_kinematic(cfg)
    assert r.exact and r.passed and r.lhs == r.rhs == 1.0


def test_crofton_trivial_cases():
    cfg = small_cfg([orthant(2)], rotations=500)
    r = km.crofton_probability(ray([1, 0]), ray([1, 2]), cfg)
    assert r.lhs == 0.0 and r.rhs == 0.0
    r = km.crofton_probability(orthant(2), Cone.full(2), cfg)
    assert r.lhs == 1.0 and r.rhs == pytest.approx(1.0)


def test_nonzero_intersection_batch():
    def rot(a):
        return np.array([[np.cos(a), -np.sin(a)], [np.sin(a), np.cos(a)]])
    Qs = np.stack([np.eye(2), rot(np.pi / 6), rot(np.pi / 2), -np.eye(2)])
    got = km.nonzero_intersection_batch(orthant(2), ray([1, 1]), Qs)
    assert list(got) == [True, True, False, False]


def test_probe_is_informational():
    cfg = small_cfg([orthant(2), halfspace([0, 1])], k=[0, 1, 2])
    reps = km.counterexample_probe(cfg)
    assert all(r.informational for r in reps)
    assert all(json.loads(r.to_json())["pass"] is None for r in reps)


def test_projection_and_steiner_small():
    cfg = small_cfg([orthant(3)], k=[0, 1])
    for r in km.run_projection_formula(orthant(3), None, 1, cfg):
        assert r.passed, r.summary()
    r = km.run_steiner(orthant(2), 1.0, small_cfg([orthant(2)], samples_per_trial=20000))
    assert r.passed and r.params["rhs"] == "exact"


def test_threads_do_not_change_results():
    cones = [orthant(3), halfspace([1, 2, -1])]
    a = km.run_kinematic_v(small_cfg(cones, k=1, threads=1))
    c = km.run_kinematic_v(small_cfg(cones, k=1, threads=3))
    assert a.to_json() == c.to_json()


def _cap_sets(cones, polar=False):
    axes = [([1.0, 0.3], [0.3, -1.0]), ([1.0, 1.5], [1.0, -1.2])]
    out = []
    for C, (a, c) in zip(cones, axes):
        a, c = b.Cap(np.array(a), 0.8), b.Cap(np.array(c), 0.8)
        first, second = (b.Union([a, b.ZeroOnly(2)]), c) if polar else (a, b.Union([c, b.ZeroOnly(2)]))
        out.append(b.ProductForm(first, second) & b.Lift(C))
    return out


def test_general_theta_reduces_to_wedge_and_vee():
    cones = [orthant(2), Cone.from_generators([[2, -1], [1, 2]])]
    for polar, text in ((False, "X0 & X1"), (True, "X0 | X1")):
        cfg = small_cfg(cones, k=1, sets=_cap_sets(cones, polar))
        gen = km.run_general_formula_theta(km.parse_formula(text), cfg)
        th = km.run_kinematic_theta(cfg, polar=polar)
        assert np.array_equal(gen.trial_values, th.trial_values), text
        assert gen.rhs == pytest.approx(th.rhs)


def test_general_theta_with_negation():
    cones = [orthant(2), Cone.from_generators([[2, -1], [1, 2]])]
    cfg = small_cfg(cones, k=1, sets=_cap_sets(cones), rotations=200, samples_per_trial=5000,
                    reference_samples=200_000)
    r = km.run_general_formula_theta(km.parse_formula("X0 & ~X1"), cfg)
    assert r.passed and r.lhs > 0, r.summary()
    assert r.degenerate_samples == 0


def test_general_theta_transform_flag():
    cones = [orthant(2), orthant(2)]
    cfg = small_cfg(cones, k=1, transforms=[np.diag([2.0, 1.0]), np.eye(2)])
    with pytest.raises(km.NonOrthogonalTransform):
        km.run_general_formula_theta(km.parse_formula("X0 & X1"), cfg)
    cfg = small_cfg(cones, k=1, transforms=[np.diag([2.0, 1.0]), np.eye(2)], allow_general_transforms=True)
    assert km.run_general_formula_theta(km.parse_formula("X0 & X1"), cfg).informational
