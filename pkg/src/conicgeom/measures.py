"""Monte Carlo and closed-form evaluation of the cone measures.

All estimators draw standard Gaussian points, project them onto the cone
and classify the projection by the dimension of the face whose relative
interior contains it. Draws are generated in fixed-size chunks from child
streams of the caller's :class:`~conicgeom.numerics.Rng`, so results depend
only on the seed.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from fractions import Fraction

import numpy as np

from . import numerics as nm
from .borel import BiconicSet, ConicSet, Full
from .cone import Cone

CHUNK = 100_000
MAX_RESAMPLE_ROUNDS = 20


@dataclass
class MCEstimate:
    """Sample mean with its standard error and provenance."""

    mean: float
    stderr: float
    n: int
    seed: int = 0
    degenerate_drops: int = 0
    name: str = ""
    params: dict = field(default_factory=dict)
    hits: int | None = None

    @classmethod
    def from_indicator(cls, hits, n: int, seed: int = 0, drops: int = 0, **kw) -> "MCEstimate":
        if n <= 0:
            raise ValueError("n must be positive")
        hits = int(np.sum(hits)) if np.ndim(hits) else int(hits)
        p = hits / n
        return cls(p, math.sqrt(max(p * (1 - p), 0.0) / n), n, seed, drops, hits=hits, **kw)

    @property
    def fraction(self) -> Fraction | None:
        """The estimate as an exact ratio of counts, when it came from counts."""
        return None if self.hits is None else Fraction(self.hits, self.n)

    @classmethod
    def exact(cls, value: float, n: int = 1, **kw) -> "MCEstimate":
        return cls(float(value), 0.0, n, **kw)

    def to_dict(self) -> dict:
        return {"name": self.name, "params": self.params, "mean": self.mean, "stderr": self.stderr,
                "n": self.n, "seed": self.seed}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


@dataclass
class ConeVectorEstimate:
    """One estimate per index ``k = 0..d``, all from the same sample stream."""

    entries: list

    @property
    def means(self) -> np.ndarray:
        return np.array([e.mean for e in self.entries])

    @property
    def stderrs(self) -> np.ndarray:
        return np.array([e.stderr for e in self.entries])

    @property
    def n(self) -> int:
        return self.entries[0].n

    def fractions(self) -> list:
        return [e.fraction for e in self.entries]

    @property
    def degenerate_drops(self) -> int:
        return self.entries[0].degenerate_drops

    def __len__(self):
        return len(self.entries)

    def __getitem__(self, k) -> MCEstimate:
        return self.entries[k]

    def to_dict(self) -> dict:
        return {"entries": [e.to_dict() for e in self.entries]}


# ---------------------------------------------------------------------------
# sampling core


@dataclass
class MoreauSample:
    """Gaussian draws ``X``, their projections ``Y`` and face dimensions."""

    X: np.ndarray
    Y: np.ndarray
    dims: np.ndarray
    faces: np.ndarray
    drops: int

    @property
    def Yp(self) -> np.ndarray:
        return self.X - self.Y


def _project_resolved(C: Cone, n: int, rng: nm.Rng):
    lat = C.lattice
    X = rng.normal((n, C.d))
    Y, face, status = lat.project_batch(X)
    drops = 0
    bad = np.nonzero(status != 1)[0]
    rounds = 0
    while bad.size:
        rounds += 1
        if rounds > MAX_RESAMPLE_ROUNDS:
            raise RuntimeError("projection stays ambiguous after repeated resampling")
        drops += bad.size
        Xn = rng.child(rounds).normal((bad.size, C.d))
        Yn, fn, sn = lat.project_batch(Xn)
        X[bad], Y[bad], face[bad] = Xn, Yn, fn
        status[bad] = sn
        bad = bad[sn != 1]
    return X, Y, face, drops


def moreau_sample(C: Cone, n: int, rng, chunk: int = CHUNK) -> MoreauSample:
    """``n`` Gaussian points with their Moreau decomposition and skeleton index.

    Ambiguous projections (several accepting faces) are redrawn and counted.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = nm.as_rng(rng)
    Xs, Ys, Fs = [], [], []
    drops = 0
    for i, start in enumerate(range(0, n, chunk)):
        m = min(chunk, n - start)
        X, Y, face, dr = _project_resolved(C, m, rng.child(i))
        Xs.append(X)
        Ys.append(Y)
        Fs.append(face)
        drops += dr
    faces = np.concatenate(Fs)
    dims = C.lattice.face_dims()[faces]
    return MoreauSample(np.concatenate(Xs), np.concatenate(Ys), dims, faces, drops)


def _vector_from_dims(dims: np.ndarray, mask: np.ndarray | None, d: int, n: int, seed: int, drops: int, name: str):
    counts = np.bincount(dims[mask] if mask is not None else dims, minlength=d + 1)
    return ConeVectorEstimate([MCEstimate.from_indicator(int(counts[k]), n, seed, drops, name=name, params={"k": k})
                               for k in range(d + 1)])


# ---------------------------------------------------------------------------
# intrinsic volumes and localizations


def estimate_v(C: Cone, n: int, rng) -> ConeVectorEstimate:
    """Fractions of Gaussian points whose projection lies in each k-skeleton."""
    rng = nm.as_rng(rng)
    s = moreau_sample(C, n, rng)
    return _vector_from_dims(s.dims, None, C.d, n, rng.seed, s.drops, "v")


def phi_vector(C: Cone, M: ConicSet, n: int, rng) -> ConeVectorEstimate:
    rng = nm.as_rng(rng)
    s = moreau_sample(C, n, rng)
    return _vector_from_dims(s.dims, M.contains(s.Y), C.d, n, rng.seed, s.drops, "phi")


def theta_vector(C: Cone, M: BiconicSet, n: int, rng) -> ConeVectorEstimate:
    rng = nm.as_rng(rng)
    s = moreau_sample(C, n, rng)
    return _vector_from_dims(s.dims, M.contains(s.Y, s.Yp), C.d, n, rng.seed, s.drops, "theta")


def phi_k(C: Cone, k: int, M: ConicSet, n: int, rng) -> MCEstimate:
    """``P{Π_C(g) ∈ S_k(C) ∩ M}``."""
    _check_k(C, k)
    return phi_vector(C, M, n, rng)[k]


def theta_k(C: Cone, k: int, M: BiconicSet, n: int, rng) -> MCEstimate:
    """``P{(Π_C(g), Π_{C°}(g)) ∈ 𝒮_k(C) ∩ 𝓜}``."""
    _check_k(C, k)
    return theta_vector(C, M, n, rng)[k]


def _check_k(C: Cone, k: int):
    if not 0 <= k <= C.d:
        raise ValueError(f"k={k} outside 0..{C.d}")


def _gaussian_in_face(face, n: int, rng: nm.Rng) -> np.ndarray:
    U = face.ortho
    if U.shape[1] == 0:
        return np.zeros((n, U.shape[0]))
    return rng.normal((n, U.shape[1])) @ U.T


def _face_sum(C: Cone, k: int, n_per_face: int, rng: nm.Rng, accept) -> MCEstimate:
    """``Σ_{F : dim F = k} P{g_F ∈ accept}`` with ``g_F`` Gaussian in span F."""
    total, var = 0.0, 0.0
    for face in C.lattice.by_dim(k):
        G = _gaussian_in_face(face, n_per_face, rng.child(face.id))
        p = float(np.mean(accept(G)))
        total += p
        var += p * (1 - p) / n_per_face
    return MCEstimate(total, math.sqrt(var), n_per_face, rng.seed, name="face-sum", params={"k": k})


def psi_k(C: Cone, k: int, M: ConicSet, n_per_face: int, rng) -> MCEstimate:
    """Sum over k-dimensional face spans L of the Gaussian measure of ``C ∩ L ∩ M``."""
    _check_k(C, k)
    rng = nm.as_rng(rng)
    est = _face_sum(C, k, n_per_face, rng, lambda G: C.contains_batch(G) & M.contains(G))
    est.name = "psi"
    return est


def estimate_u(C: Cone, n_per_face: int, rng) -> ConeVectorEstimate:
    """Per-dimension sums of the Gaussian volumes of the faces."""
    rng = nm.as_rng(rng)
    full = Full(C.d)
    return ConeVectorEstimate([psi_k(C, k, full, n_per_face, rng) for k in range(C.d + 1)])


def theta_k_product_form(C: Cone, k: int, M: ConicSet, Mp: ConicSet, n_per_face: int, rng) -> MCEstimate:
    """``Θ_k(C, M × M')`` computed face by face as
    ``Σ_F γ_L(F ∩ M) · γ_{L^⊥}(N_F ∩ M')`` with ``N_F`` the normal face."""
    _check_k(C, k)
    rng = nm.as_rng(rng)
    P = C.polar()
    total, var = 0.0, 0.0
    for face in C.lattice.by_dim(k):
        G = _gaussian_in_face(face, n_per_face, rng.child(face.id, 0))
        a = float(np.mean(C.contains_batch(G) & M.contains(G)))
        perp = nm.orthonormal_basis(nm.to_float(face.perp_basis())) if face.dim < C.d else np.zeros((C.d, 0))
        Z = rng.child(face.id, 1).normal((n_per_face, perp.shape[1])) @ perp.T if perp.shape[1] else np.zeros((n_per_face, C.d))
        b = float(np.mean(P.contains_batch(Z) & Mp.contains(Z)))
        total += a * b
        va, vb = a * (1 - a) / n_per_face, b * (1 - b) / n_per_face
        var += b * b * va + a * a * vb + va * vb
    return MCEstimate(total, math.sqrt(var), n_per_face, rng.seed, name="theta-product", params={"k": k})


def lin_k(C: Cone, k: int, M: ConicSet) -> float:
    """``[lineality(C) = k] · [0 ∈ M]``."""
    zero_in = bool(M.contains(np.zeros((1, C.d)))[0])
    return float(C.lineality() == k and zero_in)


# ---------------------------------------------------------------------------
# closed forms


def convolve_exact(a, b) -> list:
    out = [Fraction(0)] * (len(a) + len(b) - 1)
    for i, x in enumerate(a):
        for j, y in enumerate(b):
            out[i + j] += x * y
    return out


def exact_v(C: Cone, tol: float = 1e-9):
    """Intrinsic volumes of ``L ⊕ (orthant spanned by orthogonal rays)``.

    Covers subspaces, orthants, rays and half-spaces (any cone whose
    extreme rays are pairwise orthogonal). Returns ``None`` otherwise.
    """
    R = np.asarray(C.rays, dtype=float)
    r = R.shape[1]
    if r > 1:
        Rn = R / np.linalg.norm(R, axis=0)
        G = Rn.T @ Rn
        if np.max(np.abs(G - np.eye(r))) > tol:
            return None
    v = [Fraction(1)]
    for _ in range(r):
        v = convolve_exact(v, [Fraction(1, 2), Fraction(1, 2)])
    out = [Fraction(0)] * (C.d + 1)
    lin = C.lineality()
    for i, x in enumerate(v):
        out[lin + i] = x
    return out


def exact_u(C: Cone):
    """Closed-form u for the same family as :func:`exact_v`.

    A face spanned by ``j`` of the orthogonal rays (plus the lineality
    space) has Gaussian volume ``2^{-j}``.
    """
    if exact_v(C) is None:
        return None
    r = C.rays.shape[1]
    lin = C.lineality()
    out = [Fraction(0)] * (C.d + 1)
    for j in range(r + 1):
        out[lin + j] = Fraction(math.comb(r, j), 2**j)
    return out


def steiner_rhs(v, r: float) -> float:
    """``Σ_k P{χ²_k ≥ r} v_k``."""
    return float(sum(nm.chi2_survival(k, r) * float(vk) for k, vk in enumerate(v)))


def steiner_rhs_sigma(stderrs, r: float) -> float:
    return float(math.sqrt(sum((nm.chi2_survival(k, r) * s) ** 2 for k, s in enumerate(stderrs))))


def steiner_lhs(C: Cone, r: float, n: int, rng, M: ConicSet | None = None, MM: BiconicSet | None = None) -> MCEstimate:
    """``P{‖Π_C(g)‖² ≥ r}``, optionally restricted to ``Π_C(g) ∈ M`` or ``Π̂_C(g) ∈ 𝓜``."""
    if r < 0:
        raise ValueError("r must be nonnegative")
    rng = nm.as_rng(rng)
    s = moreau_sample(C, n, rng)
    hit = np.einsum("ij,ij->i", s.Y, s.Y) >= r
    if M is not None:
        hit &= M.contains(s.Y)
    if MM is not None:
        hit &= MM.contains(s.Y, s.Yp)
    return MCEstimate.from_indicator(int(hit.sum()), n, rng.seed, s.drops, name="steiner-lhs", params={"r": r})


def steiner_joint(C: Cone, r: float, n: int, rng, M: ConicSet | None = None, MM: BiconicSet | None = None):
    """Both sides of the Steiner identity on one sample stream.

    Returns ``(lhs, rhs, sigma)`` where ``rhs`` uses the estimated (localized)
    intrinsic volumes and ``sigma`` is the standard error of the per-sample
    difference, which accounts for the correlation between the two sides.
    """
    rng = nm.as_rng(rng)
    s = moreau_sample(C, n, rng)
    sel = np.ones(n, dtype=bool)
    if M is not None:
        sel &= M.contains(s.Y)
    if MM is not None:
        sel &= MM.contains(s.Y, s.Yp)
    lhs_i = (np.einsum("ij,ij->i", s.Y, s.Y) >= r) & sel
    weights = np.array([nm.chi2_survival(k, r) for k in range(C.d + 1)])
    rhs_i = np.where(sel, weights[s.dims], 0.0)
    diff = lhs_i - rhs_i
    return float(lhs_i.mean()), float(rhs_i.mean()), float(diff.std(ddof=1) / math.sqrt(n)) if n > 1 else 0.0


def to_json_records(estimates, name: str, params: dict | None = None) -> list:
    out = []
    for e in estimates:
        rec = e.to_dict()
        rec["name"] = name or rec["name"]
        rec["params"] = {**(params or {}), **rec["params"]}
        out.append(rec)
    return out
