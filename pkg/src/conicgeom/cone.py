"""Polyhedral cones in half-space and generator form, lattice operations and the Moreau projection."""

from __future__ import annotations

import itertools
import threading
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from . import numerics as nm

MAX_CONSTRAINTS = 20
MAX_DIM = 10
MEMBER_TOL = 1e-9


class DimensionMismatch(ValueError):
    pass


class Singular(ValueError):
    pass


class SizeGuard(ValueError):
    """Input exceeds the desk-scale budget of the enumeration routines."""


class AmbiguousProjection(ArithmeticError):
    """Two faces accept the same projection (a measure-zero event)."""


def _empty(d: int, exact: bool) -> np.ndarray:
    return nm.zeros_exact((d, 0)) if exact else np.zeros((d, 0))


def _hstack(blocks, d, exact):
    blocks = [b for b in blocks if b.shape[1] > 0]
    if not blocks:
        return _empty(d, exact)
    return np.concatenate(blocks, axis=1)


def _normalize_columns(M: np.ndarray) -> np.ndarray:
    if M.shape[1] == 0:
        return np.asarray(M, dtype=float)
    M = np.asarray(M, dtype=float)
    norms = np.linalg.norm(M, axis=0)
    norms[norms == 0] = 1.0
    return M / norms


def extreme_generators(A: np.ndarray, d: int) -> tuple[np.ndarray, np.ndarray]:
    """Lineality basis and extreme rays of ``{x : Ax <= 0}``.

    Rays are those of the pointed part ``C ∩ lin(C)^⊥``. Candidates are one
    dimensional null spaces of ``d - 1 - lin`` constraint rows stacked with the
    lineality basis; each is kept in the sign (if any) that is feasible.
    Returns ``(N, R)`` with columns as vectors; exact when ``A`` is exact.
    """
    exact = nm.is_exact(A) if A.size else A.dtype == object
    m = A.shape[0]
    if m > MAX_CONSTRAINTS or d > MAX_DIM:
        raise SizeGuard(f"{m} constraints in dimension {d} exceeds desk-scale budget")
    if m == 0:
        N = nm.eye_exact(d) if exact else np.eye(d)
        return N, _empty(d, exact)
    if exact:
        N = nm.null_space(A)
        Af = None
    else:
        Af = np.asarray(A, dtype=float)
        norms = np.linalg.norm(Af, axis=1)
        keep = norms > 0
        Af = Af[keep] / norms[keep, None]
        N = nm.null_space(Af) if Af.shape[0] else np.eye(d)
    lin = N.shape[1]
    s = d - 1 - lin
    if s < 0:
        return N, _empty(d, exact)

    rays: list[np.ndarray] = []
    seen: set = set()
    rows = A if exact else Af
    for S in itertools.combinations(range(rows.shape[0]), s):
        K = np.concatenate([rows[list(S)], N.T], axis=0) if (S or lin) else rows[:0]
        if exact:
            ns = nm.null_space(K) if K.shape[0] else nm.eye_exact(d)
            if ns.shape[1] != 1:
                continue
            r = ns[:, 0]
            for cand in (r, -r):
                vals = rows.dot(cand)
                if all(v <= 0 for v in vals):
                    prim = nm.primitive_integer(cand)
                    key = tuple(prim)
                    if key not in seen:
                        seen.add(key)
                        rays.append(prim)
                    break
        else:
            if K.shape[0]:
                _, sv, vt = np.linalg.svd(K)
                tol = nm.FLOAT_RANK_TOL * max(1.0, float(sv[0]))
                rk = int(np.sum(sv > tol))
                if rk != d - 1:
                    continue
                r = vt[-1]
            else:
                if d != 1:
                    continue
                r = np.ones(1)
            r = r / np.linalg.norm(r)
            for cand in (r, -r):
                if np.all(rows @ cand <= MEMBER_TOL):
                    if not any(np.max(np.abs(cand - q)) < 1e-7 for q in rays):
                        rays.append(cand)
                    break
    if rays:
        R = np.stack(rays, axis=1)
    else:
        R = _empty(d, exact)
    return N, R


class Cone:
    """Polyhedral cone ``{x : Hx <= 0} = {Vy : y >= 0}`` in R^d.

    Construct with :meth:`from_halfspaces` or :meth:`from_generators`; the
    other representation is computed on demand. Entries are either exact
    Fractions (``dtype=object``) or floats, never mixed.
    """

    def __init__(self, d: int, H: np.ndarray | None = None, V: np.ndarray | None = None, *, name: str | None = None):
        if d < 1:
            raise DimensionMismatch("ambient dimension must be >= 1")
        if H is None and V is None:
            raise ValueError("need half-spaces or generators")
        self.d = d
        self.name = name
        self._raw_H = H
        self._raw_V = V
        # irredundant data: generator side (lineality basis, rays) and normal side
        self._vlin = self._vrays = None
        self._hlin = self._hrays = None
        self._lattice = None
        self._lock = threading.Lock()
        ref = H if H is not None else V
        self.exact = ref.dtype == object

    # -- construction ------------------------------------------------------

    @classmethod
    def from_halfspaces(cls, A, d: int | None = None, name: str | None = None) -> "Cone":
        A = _as_matrix(A)
        if A.ndim != 2:
            raise DimensionMismatch("half-space matrix must be 2-D")
        if d is None:
            d = A.shape[1]
        if A.shape[1] != d or d < 1:
            raise DimensionMismatch(f"half-space matrix has {A.shape[1]} columns, expected d={d}")
        return cls(d, H=A, name=name)

    @classmethod
    def from_generators(cls, B, d: int | None = None, name: str | None = None) -> "Cone":
        B = _as_matrix(B)
        if B.ndim != 2:
            raise DimensionMismatch("generator matrix must be 2-D")
        if d is None:
            d = B.shape[0]
        if B.shape[0] != d or d < 1:
            raise DimensionMismatch(f"generator matrix has {B.shape[0]} rows, expected d={d}")
        return cls(d, V=B, name=name)

    @classmethod
    def _from_parts(cls, d, vlin, vrays, hlin, hrays, exact, name=None) -> "Cone":
        obj = cls.__new__(cls)
        obj.d = d
        obj.name = name
        obj.exact = exact
        obj._raw_H = None
        obj._raw_V = None
        obj._vlin, obj._vrays, obj._hlin, obj._hrays = vlin, vrays, hlin, hrays
        obj._lattice = None
        obj._lock = threading.Lock()
        return obj

    @classmethod
    def full(cls, d: int, exact: bool = True) -> "Cone":
        A = nm.zeros_exact((0, d)) if exact else np.zeros((0, d))
        return cls.from_halfspaces(A, d)

    @classmethod
    def zero(cls, d: int, exact: bool = True) -> "Cone":
        return cls.from_generators(_empty(d, exact), d)

    @classmethod
    def subspace(cls, basis) -> "Cone":
        B = _as_matrix(basis)
        return cls.from_generators(np.concatenate([B, -B], axis=1), B.shape[0])

    # -- dual representation ----------------------------------------------

    def ensure_dual_rep(self) -> "Cone":
        """Populate both irredundant representations (idempotent)."""
        if self._vlin is not None:
            return self
        with self._lock:
            if self._vlin is not None:
                return self
            d = self.d
            if self._raw_H is not None:
                if self._raw_H.shape[0] > MAX_CONSTRAINTS:
                    raise SizeGuard(f"{self._raw_H.shape[0]} constraints exceed budget {MAX_CONSTRAINTS}")
                vlin, vrays = extreme_generators(self._raw_H, d)
                V = _hstack([vlin, -vlin, vrays], d, self.exact)
                hlin, hrays = extreme_generators(V.T, d)
            else:
                if self._raw_V.shape[1] > MAX_CONSTRAINTS:
                    raise SizeGuard(f"{self._raw_V.shape[1]} generators exceed budget {MAX_CONSTRAINTS}")
                hlin, hrays = extreme_generators(self._raw_V.T, d)
                Hcols = _hstack([hlin, -hlin, hrays], d, self.exact)
                vlin, vrays = extreme_generators(Hcols.T, d)
            self._hlin, self._hrays = hlin, hrays
            self._vlin, self._vrays = vlin, vrays
        return self

    @property
    def V(self) -> np.ndarray:
        """Generators as columns: lineality basis, its negation, extreme rays."""
        self.ensure_dual_rep()
        return _hstack([self._vlin, -self._vlin, self._vrays], self.d, self.exact)

    @property
    def H(self) -> np.ndarray:
        """Irredundant half-space normals as rows (implicit equalities as ± pairs)."""
        self.ensure_dual_rep()
        return _hstack([self._hlin, -self._hlin, self._hrays], self.d, self.exact).T

    @property
    def rays(self) -> np.ndarray:
        self.ensure_dual_rep()
        return self._vrays

    @property
    def lineality_basis(self) -> np.ndarray:
        self.ensure_dual_rep()
        return self._vlin

    @property
    def H_float(self) -> np.ndarray:
        if getattr(self, "_Hf", None) is None:
            self._Hf = _normalize_columns(self.H.T).T
        return self._Hf

    @property
    def V_float(self) -> np.ndarray:
        if getattr(self, "_Vf", None) is None:
            self._Vf = _normalize_columns(self.V)
        return self._Vf

    def astype_float(self) -> "Cone":
        if not self.exact:
            return self
        cached = getattr(self, "_float", None)
        if cached is None:
            self.ensure_dual_rep()
            f = lambda M: np.asarray(M, dtype=float)
            cached = Cone._from_parts(self.d, f(self._vlin), f(self._vrays), f(self._hlin), f(self._hrays), False, self.name)
            self._float = cached
        return cached

    # -- lattice operations -------------------------------------------------

    def polar(self) -> "Cone":
        cached = getattr(self, "_polar", None)
        if cached is not None:
            return cached
        self.ensure_dual_rep()
        P = Cone._from_parts(self.d, self._hlin, self._hrays, self._vlin, self._vrays, self.exact,
                             f"polar({self.name})" if self.name else None)
        P._polar = self
        self._polar = P
        return P

    def product(self, other: "Cone") -> "Cone":
        a, b = _common_regime(self, other)
        a.ensure_dual_rep()
        b.ensure_dual_rep()
        bd = lambda X, Y: _block_diag(X, Y, a.exact)
        return Cone._from_parts(a.d + b.d, bd(a._vlin, b._vlin), bd(a._vrays, b._vrays),
                                bd(a._hlin, b._hlin), bd(a._hrays, b._hrays), a.exact)

    def intersect(self, other: "Cone") -> "Cone":
        if self.d != other.d:
            raise DimensionMismatch("intersect needs a common ambient dimension")
        a, b = _common_regime(self, other)
        return Cone.from_halfspaces(np.concatenate([a.H, b.H], axis=0), a.d)

    def minkowski_sum(self, other: "Cone") -> "Cone":
        if self.d != other.d:
            raise DimensionMismatch("minkowski_sum needs a common ambient dimension")
        a, b = _common_regime(self, other)
        return Cone.from_generators(np.concatenate([a.V, b.V], axis=1), a.d)

    def linear_image(self, T) -> "Cone":
        """The cone ``TC``; normals transform by ``T° = (T^{-1})^T``."""
        T = _as_matrix(T)
        if T.shape != (self.d, self.d):
            raise DimensionMismatch("transform must be d x d")
        if nm.rank(T) < self.d:
            raise Singular("transform is singular")
        src = self
        if nm.is_exact(T) and not self.exact:
            T = nm.to_float(T)
        elif not nm.is_exact(T) and self.exact:
            src = self.astype_float()
        src.ensure_dual_rep()
        Tinv_adj = inv_adjoint(T)
        return Cone._from_parts(self.d, T.dot(src._vlin), T.dot(src._vrays),
                                Tinv_adj.dot(src._hlin), Tinv_adj.dot(src._hrays), src.exact)

    def lineality(self) -> int:
        return self.lineality_basis.shape[1]

    def span_dim(self) -> int:
        return self.d - self._hlin_dim()

    def _hlin_dim(self) -> int:
        self.ensure_dual_rep()
        return self._hlin.shape[1]

    def lineality_space(self) -> "Cone":
        N = self.lineality_basis
        return Cone.from_generators(_hstack([N, -N], self.d, self.exact), self.d)

    def is_subspace(self) -> bool:
        self.ensure_dual_rep()
        return self._vrays.shape[1] == 0

    # -- membership -----------------------------------------------------------

    def contains(self, x, tol: float = MEMBER_TOL) -> bool:
        x = np.asarray(x)
        if x.shape != (self.d,):
            raise DimensionMismatch("point has wrong dimension")
        if self.exact and x.dtype == object:
            return all(v <= 0 for v in self.H.dot(x))
        return bool(self.contains_batch(x[None, :].astype(float), tol)[0])

    def contains_batch(self, X: np.ndarray, tol: float = MEMBER_TOL) -> np.ndarray:
        """Vectorised float membership for the rows of ``X``."""
        X = np.asarray(X, dtype=float)
        Hf = self.H_float
        if Hf.shape[0] == 0:
            return np.ones(X.shape[0], dtype=bool)
        scale = np.linalg.norm(X, axis=1)
        return np.all(X @ Hf.T <= tol * np.maximum(scale, 1e-300)[:, None], axis=1)

    def equals(self, other: "Cone") -> bool:
        """Set equality, checked generator-wise in both directions."""
        if self.d != other.d:
            return False
        return self.contains_all(other.V) and other.contains_all(self.V)

    def contains_all(self, G: np.ndarray) -> bool:
        if G.shape[1] == 0:
            return True
        if self.exact and G.dtype == object:
            P = self.H.dot(G)
            return all(v <= 0 for v in P.flat)
        return bool(np.all(self.contains_batch(np.asarray(G, dtype=float).T)))

    # -- projection -------------------------------------------------------------

    @property
    def lattice(self):
        from .faces import enumerate_faces

        if self._lattice is None:
            lat = enumerate_faces(self)
            with self._lock:
                if self._lattice is None:
                    self._lattice = lat
        return self._lattice

    def project(self, x) -> "MoreauPair":
        """Moreau pair ``(Π_C(x), Π_{C°}(x))`` via face enumeration."""
        x = np.asarray(x, dtype=float)
        if x.shape != (self.d,):
            raise DimensionMismatch("point has wrong dimension")
        # projection is positively homogeneous; rescaling keeps tiny inputs clear of underflow
        s = float(np.max(np.abs(x))) if x.size else 0.0
        s = s if s > 0 else 1.0
        Y, face, status = self.lattice.project_batch(x[None, :] / s)
        if status[0] == 0:
            raise AmbiguousProjection(f"no face accepts the projection of {x}")
        y = Y[0] * s
        fid = int(face[0])
        if status[0] > 1:
            # several faces agree on y (x on a normal-cone boundary): report the
            # face whose relative interior holds y
            fid = self.lattice.locate(y).id
        return MoreauPair(primal=y, polar=x - y, primal_face=fid)

    def project_batch(self, X: np.ndarray):
        return self.lattice.project_batch(np.asarray(X, dtype=float))

    def __repr__(self) -> str:
        tag = self.name or "Cone"
        return f"<{tag} d={self.d} {'exact' if self.exact else 'float'}>"


@dataclass(frozen=True)
class MoreauPair:
    primal: np.ndarray
    polar: np.ndarray
    primal_face: int
    polar_face: int | None = None


def inv_adjoint(T) -> np.ndarray:
    """``T° = (T^{-1})^T``."""
    T = _as_matrix(T)
    try:
        return nm.inverse(T).T.copy()
    except np.linalg.LinAlgError:
        raise Singular("transform is singular") from None


def from_halfspaces(A, d=None) -> Cone:
    return Cone.from_halfspaces(A, d)


def from_generators(B, d=None) -> Cone:
    return Cone.from_generators(B, d)


def ensure_dual_rep(C: Cone) -> Cone:
    return C.ensure_dual_rep()


def polar(C: Cone) -> Cone:
    return C.polar()


def product(C: Cone, D: Cone) -> Cone:
    return C.product(D)


def intersect(C: Cone, D: Cone) -> Cone:
    return C.intersect(D)


def minkowski_sum(C: Cone, D: Cone) -> Cone:
    return C.minkowski_sum(D)


def linear_image(T, C: Cone) -> Cone:
    return C.linear_image(T)


def lineality(C: Cone) -> int:
    return C.lineality()


def lineality_space(C: Cone) -> Cone:
    return C.lineality_space()


def contains(C: Cone, x, tol: float = MEMBER_TOL) -> bool:
    return C.contains(x, tol)


def project(C: Cone, x) -> MoreauPair:
    return C.project(x)


# -- helpers -------------------------------------------------------------------


def _as_matrix(M) -> np.ndarray:
    if isinstance(M, np.ndarray):
        if M.dtype == object or np.issubdtype(M.dtype, np.floating):
            return M
        if np.issubdtype(M.dtype, np.integer):
            return nm.exact_array(M.tolist()) if M.size else nm.zeros_exact(M.shape)
    arr = np.array(M, dtype=object)
    if arr.size == 0:
        return nm.zeros_exact(arr.shape)
    if any(isinstance(v, float) for v in arr.flat):
        return np.array(M, dtype=float)
    return nm.exact_array(M)


def _common_regime(a: Cone, b: Cone) -> tuple[Cone, Cone]:
    if a.exact == b.exact:
        return a, b
    return a.astype_float(), b.astype_float()


def _block_diag(X: np.ndarray, Y: np.ndarray, exact: bool) -> np.ndarray:
    r1, c1 = X.shape
    r2, c2 = Y.shape
    out = nm.zeros_exact((r1 + r2, c1 + c2)) if exact else np.zeros((r1 + r2, c1 + c2))
    out[:r1, :c1] = X
    out[r1:, c1:] = Y
    return out


def orthant(d: int) -> Cone:
    return Cone.from_halfspaces(-nm.eye_exact(d), d, name=f"orthant{d}")


def ray(direction) -> Cone:
    v = _as_matrix([[x] for x in direction])
    return Cone.from_generators(v, name="ray")


def halfspace(normal) -> Cone:
    a = _as_matrix([list(normal)])
    return Cone.from_halfspaces(a, name="halfspace")
