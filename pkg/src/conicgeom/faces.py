"""Face lattices of polyhedral cones, skeleton location and general position."""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from . import numerics as nm
from .cone import MEMBER_TOL, Cone, DimensionMismatch, SizeGuard

INCIDENCE_TOL = 1e-9


class NotInCone(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class Face:
    id: int
    tight_set: frozenset
    generators: frozenset
    dim: int
    span_basis: np.ndarray
    ortho: np.ndarray = field(repr=False)

    @property
    def projector(self) -> np.ndarray:
        return self.ortho @ self.ortho.T

    def perp_basis(self) -> np.ndarray:
        """Basis of the orthogonal complement of the span (exact when possible)."""
        B = self.span_basis
        if B.shape[1] == 0:
            d = B.shape[0]
            return nm.eye_exact(d) if B.dtype == object else np.eye(d)
        return nm.null_space(B.T)


class FaceLattice:
    """All faces of a cone, keyed by their (closed) sets of tight constraints."""

    def __init__(self, cone: Cone, faces: list[Face]):
        self.cone = cone
        self.faces = faces
        self._by_tight = {f.tight_set: f for f in faces}
        self._Hf = cone.H_float
        self._Vf = cone.V_float

    def __len__(self):
        return len(self.faces)

    def __iter__(self):
        return iter(self.faces)

    def by_dim(self, k: int) -> list[Face]:
        return [f for f in self.faces if f.dim == k]

    def f_vector(self) -> np.ndarray:
        f = np.zeros(self.cone.d + 1, dtype=int)
        for face in self.faces:
            f[face.dim] += 1
        return f

    def face_for_tight_set(self, tight) -> Face | None:
        return self._by_tight.get(frozenset(tight))

    @property
    def top(self) -> Face:
        return max(self.faces, key=lambda f: f.dim)

    @property
    def minimal(self) -> Face:
        return min(self.faces, key=lambda f: f.dim)

    def project_batch(self, X: np.ndarray, tol: float = MEMBER_TOL):
        """Project the rows of ``X`` onto the cone.

        Returns ``(Y, face_index, accept_count)``. A sample is resolved when
        exactly one face span ``L`` gives ``y = P_L x`` with ``y ∈ C`` and
        ``x - y ∈ C°``; ``accept_count != 1`` flags a degenerate draw.
        """
        X = np.atleast_2d(np.asarray(X, dtype=float))
        n = X.shape[0]
        Y = np.zeros_like(X)
        face_idx = np.full(n, -1, dtype=int)
        count = np.zeros(n, dtype=int)
        scale = tol * np.maximum(np.linalg.norm(X, axis=1), 1e-300)[:, None]
        Hf, Vf = self._Hf, self._Vf
        for idx, face in enumerate(self.faces):
            U = face.ortho
            if U.shape[1] == X.shape[1]:
                # full-dimensional face: keep x exactly so the dual part is exactly 0
                Yc = X.copy()
            elif U.shape[1]:
                Yc = (X @ U) @ U.T
            else:
                Yc = np.zeros_like(X)
            ok = np.ones(n, dtype=bool)
            if Hf.shape[0]:
                ok &= np.all(Yc @ Hf.T <= scale, axis=1)
            if Vf.shape[1]:
                ok &= np.all((X - Yc) @ Vf <= scale, axis=1)
            first = ok & (count == 0)
            Y[first] = Yc[first]
            face_idx[first] = idx
            count += ok
        return Y, face_idx, count

    def face_dims(self) -> np.ndarray:
        return np.array([f.dim for f in self.faces], dtype=int)

    def tight_rows(self, y) -> frozenset:
        y = np.asarray(y)
        H = self.cone.H
        if H.shape[0] == 0:
            return frozenset()
        if self.cone.exact and y.dtype == object:
            vals = H.dot(y)
            if any(v > 0 for v in vals):
                raise NotInCone("point is not in the cone")
            return frozenset(i for i, v in enumerate(vals) if v == 0)
        yf = y.astype(float)
        vals = self._Hf @ yf
        s = MEMBER_TOL * max(np.linalg.norm(yf), 1e-300)
        if np.any(vals > s):
            raise NotInCone("point is not in the cone")
        return frozenset(int(i) for i in np.nonzero(np.abs(vals) <= s)[0])

    def locate(self, y) -> Face:
        T = self.tight_rows(y)
        face = self._by_tight.get(T)
        if face is None:
            face = self._by_tight.get(self._closure(T))
        if face is None:
            raise NotInCone("no face matches the tight set of the point")
        return face

    def _closure(self, T) -> frozenset:
        Z = _incidence(self.cone)
        rows = sorted(T)
        gmask = Z[rows].all(axis=0) if rows else np.ones(Z.shape[1], dtype=bool)
        tmask = Z[:, gmask].all(axis=1)
        return frozenset(int(i) for i in np.nonzero(tmask)[0])


def _incidence(C: Cone) -> np.ndarray:
    H, V = C.H, C.V
    if C.exact:
        P = H.dot(V) if H.shape[0] and V.shape[1] else np.zeros((H.shape[0], V.shape[1]), dtype=object)
        return np.vectorize(lambda v: v == 0, otypes=[bool])(P) if P.size else np.zeros(P.shape, dtype=bool)
    return np.abs(C.H_float @ C.V_float) <= INCIDENCE_TOL


def enumerate_faces(C: Cone) -> FaceLattice:
    """Enumerate every face once, as closed sets of tight rows of the irredundant H.

    Starting from the cone itself, each face spawns children by adding one
    constraint and closing the set (rows tight on all generators that satisfy
    the enlarged set).
    """
    C.ensure_dual_rep()
    H, V = C.H, C.V
    m, k = H.shape[0], V.shape[1]
    if m > 2 * C.d + 2 * 20 or k > 2 * C.d + 2 * 20:
        raise SizeGuard("face enumeration budget exceeded")
    Z = _incidence(C)

    def closure(rows: frozenset) -> tuple[frozenset, frozenset]:
        r = sorted(rows)
        gmask = Z[r].all(axis=0) if r else np.ones(k, dtype=bool)
        tmask = Z[:, gmask].all(axis=1) if m else np.zeros(0, dtype=bool)
        return (frozenset(int(i) for i in np.nonzero(tmask)[0]),
                frozenset(int(j) for j in np.nonzero(gmask)[0]))

    found: dict[frozenset, frozenset] = {}
    start, gens = closure(frozenset())
    found[start] = gens
    stack = [start]
    while stack:
        S = stack.pop()
        for i in range(m):
            if i in S:
                continue
            T, G = closure(S | {i})
            if T not in found:
                found[T] = G
                stack.append(T)

    raw = []
    for T, G in found.items():
        cols = sorted(G)
        Vg = V[:, cols]
        if C.exact:
            basis = nm.column_space(Vg) if cols else Vg
            dim = basis.shape[1]
            ortho = nm.orthonormal_basis(nm.to_float(basis)) if dim else np.zeros((C.d, 0))
        else:
            basis = nm.column_space(Vg) if cols else np.zeros((C.d, 0))
            dim = basis.shape[1]
            ortho = basis
        raw.append((dim, tuple(sorted(T)), T, G, basis, ortho))
    raw.sort(key=lambda r: (r[0], r[1]))
    faces = [Face(i, r[2], r[3], r[0], r[4], r[5]) for i, r in enumerate(raw)]
    return FaceLattice(C, faces)


def spans_k(C: Cone, k: int) -> list[Cone]:
    """The spans of the k-dimensional faces, as subspace cones."""
    out = []
    for face in C.lattice.by_dim(k):
        B = face.span_basis
        if B.shape[1] == 0:
            out.append(Cone.zero(C.d, C.exact))
        else:
            out.append(Cone.subspace(B))
    return out


def f_vector(C: Cone) -> np.ndarray:
    return C.lattice.f_vector()


def ell_vector(C: Cone) -> np.ndarray:
    ell = np.zeros(C.d + 1, dtype=int)
    ell[C.lineality()] = 1
    return ell


def locate_skeleton(C: Cone, y) -> tuple[int, int]:
    """``(k, face_id)`` of the face whose relative interior contains ``y``."""
    y = np.asarray(y)
    if y.shape != (C.d,):
        raise DimensionMismatch("point has wrong dimension")
    face = C.lattice.locate(y)
    return face.dim, face.id


def _perp_rows(face: Face, exact: bool) -> np.ndarray:
    P = face.perp_basis()
    return P.T if exact else np.asarray(P, dtype=float).T


def intersection_dim(perps: list[np.ndarray], d: int, exact: bool, tol: float) -> int:
    stacked = np.concatenate(perps, axis=0) if perps else (nm.zeros_exact((0, d)) if exact else np.zeros((0, d)))
    if stacked.shape[0] == 0:
        return d
    return d - nm.rank(stacked, tol=tol)


def is_general_position(cones: list[Cone], tol: float = nm.GENERIC_RANK_TOL) -> bool:
    """Whether every selection of face spans meets with the generic dimension."""
    if not cones:
        return True
    d = cones[0].d
    if any(c.d != d for c in cones):
        raise DimensionMismatch("cones must share the ambient dimension")
    exact = all(c.exact for c in cones)
    per_cone = []
    for c in cones:
        items = []
        for face in c.lattice:
            P = face.perp_basis()
            if not exact:
                P = np.asarray(P, dtype=float)
            items.append((face.dim, P.T))
        per_cone.append(items)
    n = len(cones)
    for size in range(2, n + 1):
        for subset in itertools.combinations(range(n), size):
            for choice in itertools.product(*(per_cone[i] for i in subset)):
                dims = [c[0] for c in choice]
                expected = max(0, sum(dims) - (size - 1) * d)
                got = intersection_dim([c[1] for c in choice], d, exact, tol)
                if got != expected:
                    return False
    return True
