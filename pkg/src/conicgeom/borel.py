"""Conic and biconic sets as positively homogeneous membership predicates.

Every set answers batched membership queries: :meth:`ConicSet.contains`
takes an ``(n, d)`` array of points, :meth:`BiconicSet.contains` takes two
such arrays (primal and dual components). Structured kinds (products,
lifts of cones, lifted skeleta) additionally support the reversal map, the
linear-group action, the biconic product and the conjunction/disjunction
operations.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import numerics as nm
from .cone import MEMBER_TOL, Cone, DimensionMismatch, Singular, _as_matrix, inv_adjoint

LIFT_TOL = 1e-9


class UnsupportedKind(TypeError):
    """The requested operation is not decidable for this set kind."""


def _rows(X, d: int) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[None, :]
    if X.shape[1] != d:
        raise DimensionMismatch(f"expected points in R^{d}, got {X.shape[1]} coordinates")
    return X


def _float_matrix(T) -> np.ndarray:
    return np.asarray(_as_matrix(T), dtype=float)


# ---------------------------------------------------------------------------
# conic sets


class ConicSet:
    d: int

    def contains(self, X) -> np.ndarray:
        raise NotImplementedError

    def __contains__(self, x) -> bool:
        return bool(self.contains(x)[0])

    def __and__(self, other: "ConicSet") -> "ConicSet":
        return Intersection([self, other])

    def __or__(self, other: "ConicSet") -> "ConicSet":
        return Union([self, other])

    def __invert__(self) -> "ConicSet":
        return Complement(self)


@dataclass(frozen=True)
class Full(ConicSet):
    d: int

    def contains(self, X):
        return np.ones(_rows(X, self.d).shape[0], dtype=bool)


@dataclass(frozen=True)
class ZeroOnly(ConicSet):
    d: int

    def contains(self, X):
        return np.all(_rows(X, self.d) == 0, axis=1)


@dataclass(frozen=True)
class Star(ConicSet):
    """All nonzero points."""

    d: int

    def contains(self, X):
        return np.any(_rows(X, self.d) != 0, axis=1)


@dataclass(frozen=True, eq=False)
class FromCone(ConicSet):
    cone: Cone
    tol: float = MEMBER_TOL

    @property
    def d(self):
        return self.cone.d

    def contains(self, X):
        return self.cone.contains_batch(_rows(X, self.d), self.tol)


@dataclass(frozen=True, eq=False)
class Cap(ConicSet):
    """Nonzero points within angle ``arccos(cos_threshold)`` of ``axis``."""

    axis: np.ndarray
    cos_threshold: float

    def __post_init__(self):
        a = np.asarray(self.axis, dtype=float)
        n = np.linalg.norm(a)
        if n == 0:
            raise ValueError("cap axis must be nonzero")
        object.__setattr__(self, "axis", a / n)

    @property
    def d(self):
        return self.axis.shape[0]

    def contains(self, X):
        X = _rows(X, self.d)
        norms = np.linalg.norm(X, axis=1)
        nz = norms > 0
        out = np.zeros(X.shape[0], dtype=bool)
        out[nz] = (X[nz] @ self.axis) >= self.cos_threshold * norms[nz]
        return out


@dataclass(frozen=True, eq=False)
class Complement(ConicSet):
    inner: ConicSet

    @property
    def d(self):
        return self.inner.d

    def contains(self, X):
        return ~self.inner.contains(X)


@dataclass(frozen=True, eq=False)
class Union(ConicSet):
    parts: list

    @property
    def d(self):
        return self.parts[0].d

    def contains(self, X):
        X = _rows(X, self.d)
        out = np.zeros(X.shape[0], dtype=bool)
        for p in self.parts:
            out |= p.contains(X)
        return out


@dataclass(frozen=True, eq=False)
class Intersection(ConicSet):
    parts: list

    @property
    def d(self):
        return self.parts[0].d

    def contains(self, X):
        X = _rows(X, self.d)
        out = np.ones(X.shape[0], dtype=bool)
        for p in self.parts:
            out &= p.contains(X)
        return out


@dataclass(frozen=True, eq=False)
class Image(ConicSet):
    """``T M``: points ``x`` with ``T^{-1} x`` in ``M``."""

    T: np.ndarray
    inner: ConicSet
    _Tinv: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        T = _float_matrix(self.T)
        object.__setattr__(self, "T", T)
        object.__setattr__(self, "_Tinv", np.linalg.inv(T))

    @property
    def d(self):
        return self.inner.d

    def contains(self, X):
        return self.inner.contains(_rows(X, self.d) @ self._Tinv.T)


@dataclass(frozen=True, eq=False)
class Product(ConicSet):
    """``M × N`` inside ``R^{d+e}``."""

    first: ConicSet
    second: ConicSet

    @property
    def d(self):
        return self.first.d + self.second.d

    def contains(self, X):
        X = _rows(X, self.d)
        k = self.first.d
        return self.first.contains(X[:, :k]) & self.second.contains(X[:, k:])


@dataclass(frozen=True, eq=False)
class Predicate(ConicSet):
    """User predicate; must be positively homogeneous, pure and reentrant."""

    d: int
    fn: Callable
    vectorized: bool = False

    def contains(self, X):
        X = _rows(X, self.d)
        if self.vectorized:
            return np.asarray(self.fn(X), dtype=bool)
        return np.array([bool(self.fn(x)) for x in X], dtype=bool)


def conic_member(M: ConicSet, x) -> bool:
    return bool(M.contains(np.asarray(x, dtype=float))[0])


def as_cone(M: ConicSet) -> Cone | None:
    """The polyhedral cone equal to ``M``, when ``M`` is built from cones only."""
    if isinstance(M, FromCone):
        return M.cone
    if isinstance(M, Full):
        return Cone.full(M.d)
    if isinstance(M, ZeroOnly):
        return Cone.zero(M.d)
    if isinstance(M, Intersection):
        cones = [as_cone(p) for p in M.parts]
        if any(c is None for c in cones):
            return None
        out = cones[0]
        for c in cones[1:]:
            out = out.intersect(c)
        return out
    if isinstance(M, Image):
        c = as_cone(M.inner)
        return None if c is None else c.linear_image(M.T)
    return None


def minkowski_sum_sets(M: ConicSet, N: ConicSet) -> ConicSet:
    if isinstance(M, ZeroOnly):
        return N
    if isinstance(N, ZeroOnly):
        return M
    a, b = as_cone(M), as_cone(N)
    if a is None or b is None:
        raise UnsupportedKind("Minkowski sum needs cone-valued components")
    return FromCone(a.minkowski_sum(b))


def image_set(T, M: ConicSet) -> ConicSet:
    if isinstance(M, (Full, ZeroOnly, Star)):
        return M
    return Image(T, M)


# ---------------------------------------------------------------------------
# biconic sets


class BiconicSet:
    d: int

    def contains(self, X, Xp) -> np.ndarray:
        raise NotImplementedError

    def __and__(self, other: "BiconicSet") -> "BiconicSet":
        return BiconicIntersection([self, other])


@dataclass(frozen=True)
class BiconicFull(BiconicSet):
    d: int

    def contains(self, X, Xp):
        return np.ones(_rows(X, self.d).shape[0], dtype=bool)


@dataclass(frozen=True, eq=False)
class ProductForm(BiconicSet):
    first: ConicSet
    second: ConicSet

    def __post_init__(self):
        if self.first.d != self.second.d:
            raise DimensionMismatch("product components must share the dimension")

    @property
    def d(self):
        return self.first.d

    def contains(self, X, Xp):
        return self.first.contains(X) & self.second.contains(Xp)


@dataclass(frozen=True, eq=False)
class UnionOfProducts(BiconicSet):
    parts: list

    @property
    def d(self):
        return self.parts[0].d

    def contains(self, X, Xp):
        X = _rows(X, self.d)
        out = np.zeros(X.shape[0], dtype=bool)
        for p in self.parts:
            out |= p.contains(X, Xp)
        return out


@dataclass(frozen=True, eq=False)
class BiconicIntersection(BiconicSet):
    parts: list

    @property
    def d(self):
        return self.parts[0].d

    def contains(self, X, Xp):
        X = _rows(X, self.d)
        out = np.ones(X.shape[0], dtype=bool)
        for p in self.parts:
            out &= p.contains(X, Xp)
        return out


@dataclass(frozen=True, eq=False)
class Lift(BiconicSet):
    """Pairs ``(x, x')`` with ``x ∈ C``, ``x' ∈ C°`` and ``<x, x'> = 0``."""

    cone: Cone

    @property
    def d(self):
        return self.cone.d

    def contains(self, X, Xp):
        X, Xp = _rows(X, self.d), _rows(Xp, self.d)
        C = self.cone
        ok = C.contains_batch(X) & C.polar().contains_batch(Xp)
        ip = np.abs(np.einsum("ij,ij->i", X, Xp))
        scale = 1.0 + np.linalg.norm(X, axis=1) * np.linalg.norm(Xp, axis=1)
        return ok & (ip <= LIFT_TOL * scale)


@dataclass(frozen=True, eq=False)
class LiftedSkeleton(BiconicSet):
    """Pairs with ``x`` in the relative interior of a k-face ``F`` and ``x'``
    in the relative interior of the complementary face of the polar."""

    cone: Cone
    k: int
    tol: float = MEMBER_TOL

    @property
    def d(self):
        return self.cone.d

    def contains(self, X, Xp):
        X, Xp = _rows(X, self.d), _rows(Xp, self.d)
        lat = self.cone.lattice
        Hf, Vf = self.cone.H_float, self.cone.V_float
        hx = X @ Hf.T
        gx = Xp @ Vf
        sx = self.tol * np.maximum(np.linalg.norm(X, axis=1), 1e-300)[:, None]
        sp = self.tol * np.maximum(np.linalg.norm(Xp, axis=1), 1e-300)[:, None]
        out = np.zeros(X.shape[0], dtype=bool)
        for face in lat.by_dim(self.k):
            tmask = np.zeros(Hf.shape[0], dtype=bool)
            tmask[list(face.tight_set)] = True
            gmask = np.zeros(Vf.shape[1], dtype=bool)
            gmask[list(face.generators)] = True
            ok = np.all(np.where(tmask, np.abs(hx) <= sx, hx < -sx), axis=1)
            ok &= np.all(np.where(gmask, np.abs(gx) <= sp, gx < -sp), axis=1)
            out |= ok
        return out


@dataclass(frozen=True, eq=False)
class Rev(BiconicSet):
    inner: BiconicSet

    @property
    def d(self):
        return self.inner.d

    def contains(self, X, Xp):
        return self.inner.contains(Xp, X)


@dataclass(frozen=True, eq=False)
class GlImage(BiconicSet):
    """``T 𝓜 = {(Tx, T°x') : (x, x') ∈ 𝓜}``."""

    T: np.ndarray
    inner: BiconicSet
    _Tinv: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        T = _float_matrix(self.T)
        object.__setattr__(self, "T", T)
        object.__setattr__(self, "_Tinv", np.linalg.inv(T))

    @property
    def d(self):
        return self.inner.d

    def contains(self, X, Xp):
        X, Xp = _rows(X, self.d), _rows(Xp, self.d)
        # (T°)^{-1} = T^T
        return self.inner.contains(X @ self._Tinv.T, Xp @ self.T)


@dataclass(frozen=True, eq=False)
class BiconicProduct(BiconicSet):
    """``𝓜 ⊗̂ 𝓝``: pairs ((x, y), (x', y')) with (x, x') ∈ 𝓜 and (y, y') ∈ 𝓝."""

    first: BiconicSet
    second: BiconicSet

    @property
    def d(self):
        return self.first.d + self.second.d

    def contains(self, X, Xp):
        X, Xp = _rows(X, self.d), _rows(Xp, self.d)
        k = self.first.d
        return self.first.contains(X[:, :k], Xp[:, :k]) & self.second.contains(X[:, k:], Xp[:, k:])


@dataclass(frozen=True, eq=False)
class BiconicPredicate(BiconicSet):
    d: int
    fn: Callable

    def contains(self, X, Xp):
        X, Xp = _rows(X, self.d), _rows(Xp, self.d)
        return np.array([bool(self.fn(x, xp)) for x, xp in zip(X, Xp)], dtype=bool)


@dataclass(frozen=True, eq=False)
class _Wedge(BiconicSet):
    """Conjunction of structured sets, kept symbolic when no closed form is known."""

    left: BiconicSet
    right: BiconicSet

    @property
    def d(self):
        return self.left.d

    def contains(self, X, Xp):
        raise UnsupportedKind("pointwise membership of a general conjunction is not decidable")


def biconic_member(M: BiconicSet, x, xp) -> bool:
    x = np.asarray(x, dtype=float)
    xp = np.asarray(xp, dtype=float)
    if x.shape != xp.shape:
        raise DimensionMismatch("components must have the same dimension")
    return bool(M.contains(x, xp)[0])


# ---------------------------------------------------------------------------
# operations


def rev(M: BiconicSet) -> BiconicSet:
    """Swap the two components; lifts and products are rewritten in closed form."""
    if isinstance(M, Rev):
        return M.inner
    if isinstance(M, BiconicFull):
        return M
    if isinstance(M, ProductForm):
        return ProductForm(M.second, M.first)
    if isinstance(M, Lift):
        return Lift(M.cone.polar())
    if isinstance(M, LiftedSkeleton):
        return LiftedSkeleton(M.cone.polar(), M.d - M.k, M.tol)
    if isinstance(M, UnionOfProducts):
        return UnionOfProducts([rev(p) for p in M.parts])
    if isinstance(M, BiconicIntersection):
        return BiconicIntersection([rev(p) for p in M.parts])
    if isinstance(M, BiconicProduct):
        return BiconicProduct(rev(M.first), rev(M.second))
    if isinstance(M, GlImage):
        # rev(T𝓜) = T° rev(𝓜)
        return gl_action(inv_adjoint(M.T), rev(M.inner))
    return Rev(M)


def gl_action(T, M: BiconicSet) -> BiconicSet:
    T = _as_matrix(T)
    if T.shape != (M.d, M.d):
        raise DimensionMismatch("transform must be d x d")
    if nm.rank(T) < M.d:
        raise Singular("transform is singular")
    if isinstance(M, BiconicFull):
        return M
    if isinstance(M, Lift):
        return Lift(M.cone.linear_image(T))
    if isinstance(M, LiftedSkeleton):
        return LiftedSkeleton(M.cone.linear_image(T), M.k, M.tol)
    if isinstance(M, ProductForm):
        return ProductForm(image_set(T, M.first), image_set(inv_adjoint(T), M.second))
    if isinstance(M, UnionOfProducts):
        return UnionOfProducts([gl_action(T, p) for p in M.parts])
    if isinstance(M, BiconicIntersection):
        return BiconicIntersection([gl_action(T, p) for p in M.parts])
    return GlImage(T, M)


def biconic_product(M: BiconicSet, N: BiconicSet) -> BiconicSet:
    if isinstance(M, ProductForm) and isinstance(N, ProductForm):
        return ProductForm(Product(M.first, N.first), Product(M.second, N.second))
    if isinstance(M, Lift) and isinstance(N, Lift):
        return Lift(M.cone.product(N.cone))
    if isinstance(M, (ProductForm, Lift, BiconicFull, LiftedSkeleton)) and isinstance(
        N, (ProductForm, Lift, BiconicFull, LiftedSkeleton)
    ):
        return BiconicProduct(M, N)
    raise UnsupportedKind("biconic product is implemented for product forms and lifts")


def _simplify(M: BiconicSet) -> BiconicSet:
    """Collapse intersections of product forms into a single product form."""
    if isinstance(M, BiconicIntersection):
        parts = [_simplify(p) for p in M.parts]
        if all(isinstance(p, ProductForm) for p in parts):
            return ProductForm(Intersection([p.first for p in parts]), Intersection([p.second for p in parts]))
        if all(isinstance(p, Lift) for p in parts):
            out = parts[0].cone
            for p in parts[1:]:
                if not out.equals(p.cone):
                    return BiconicIntersection(parts)
            return parts[0]
        return BiconicIntersection(parts)
    if isinstance(M, BiconicFull):
        return ProductForm(Full(M.d), Full(M.d))
    return M


def wedge(M: BiconicSet, N: BiconicSet) -> BiconicSet:
    """Conjunction ``{(x, x' + y') : (x, x') ∈ 𝓜, (x, y') ∈ 𝓝}`` for structured operands."""
    if M.d != N.d:
        raise DimensionMismatch("operands must share the dimension")
    if isinstance(M, (Predicate, BiconicPredicate)) or isinstance(N, (Predicate, BiconicPredicate)):
        raise UnsupportedKind("conjunction of predicates is not supported")
    if isinstance(M, Rev) and isinstance(N, Rev):
        return rev(vee(M.inner, N.inner))
    M, N = _simplify(M), _simplify(N)
    if isinstance(M, UnionOfProducts):
        return UnionOfProducts([wedge(p, N) for p in M.parts])
    if isinstance(N, UnionOfProducts):
        return UnionOfProducts([wedge(M, p) for p in N.parts])
    if isinstance(M, ProductForm) and isinstance(N, ProductForm):
        return ProductForm(Intersection([M.first, N.first]), minkowski_sum_sets(M.second, N.second))
    if isinstance(M, Lift) and isinstance(N, Lift):
        return Lift(M.cone.intersect(N.cone))
    raise UnsupportedKind(f"conjunction of {type(M).__name__} and {type(N).__name__}")


def vee(M: BiconicSet, N: BiconicSet) -> BiconicSet:
    """Disjunction ``{(x + y, x') : (x, x') ∈ 𝓜, (y, x') ∈ 𝓝}``."""
    if M.d != N.d:
        raise DimensionMismatch("operands must share the dimension")
    if isinstance(M, (Predicate, BiconicPredicate)) or isinstance(N, (Predicate, BiconicPredicate)):
        raise UnsupportedKind("disjunction of predicates is not supported")
    M, N = _simplify(M), _simplify(N)
    if isinstance(M, UnionOfProducts):
        return UnionOfProducts([vee(p, N) for p in M.parts])
    if isinstance(N, UnionOfProducts):
        return UnionOfProducts([vee(M, p) for p in N.parts])
    if isinstance(M, ProductForm) and isinstance(N, ProductForm):
        return ProductForm(minkowski_sum_sets(M.first, N.first), Intersection([M.second, N.second]))
    if isinstance(M, Lift) and isinstance(N, Lift):
        return Lift(M.cone.minkowski_sum(N.cone))
    raise UnsupportedKind(f"disjunction of {type(M).__name__} and {type(N).__name__}")
