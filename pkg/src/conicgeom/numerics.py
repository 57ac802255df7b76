"""Scalar handling, exact/float linear algebra, random streams and special functions.

Two regimes coexist: matrices with ``dtype=object`` holding
:class:`fractions.Fraction` entries are treated exactly, ``float64`` arrays
are treated numerically with a rank tolerance.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np
from scipy import special

FLOAT_RANK_TOL = 1e-10
GENERIC_RANK_TOL = 1e-8


class RankDeficient(ValueError):
    """Raised when a set of vectors expected to be independent is not."""


class InvalidRational(ValueError):
    pass


# ---------------------------------------------------------------------------
# scalars


def parse_rational(text) -> Fraction:
    """Parse ``"3"``, ``"-3/2"`` (ASCII or unicode minus) or an int into a Fraction."""
    if isinstance(text, Fraction):
        return text
    if isinstance(text, bool):
        raise InvalidRational(f"invalid rational {text!r}")
    if isinstance(text, int):
        return Fraction(text)
    if not isinstance(text, str):
        raise InvalidRational(f"invalid rational {text!r}")
    s = text.strip().replace("−", "-")
    if "." in s or "e" in s.lower():
        raise InvalidRational(f"invalid rational {text!r}")
    try:
        return Fraction(s)
    except (ValueError, ZeroDivisionError):
        raise InvalidRational(f"invalid rational {text!r}") from None


def exact_array(rows) -> np.ndarray:
    """Object array of Fractions from nested lists of ints/strings/Fractions."""
    arr = np.array(rows, dtype=object)
    if arr.ndim == 0:
        raise ValueError("expected a vector or matrix")
    out = np.empty(arr.shape, dtype=object)
    for idx, v in np.ndenumerate(arr):
        if isinstance(v, float):
            out[idx] = Fraction(v)
        else:
            out[idx] = parse_rational(v)
    return out


def is_exact(M: np.ndarray) -> bool:
    return M.dtype == object


def to_float(M: np.ndarray) -> np.ndarray:
    return np.asarray(M, dtype=float)


def eye_exact(d: int) -> np.ndarray:
    out = np.full((d, d), Fraction(0), dtype=object)
    for i in range(d):
        out[i, i] = Fraction(1)
    return out


def zeros_exact(shape) -> np.ndarray:
    return np.full(shape, Fraction(0), dtype=object)


# ---------------------------------------------------------------------------
# exact linear algebra


def rref(M: np.ndarray) -> tuple[np.ndarray, list[int]]:
    """Reduced row echelon form over the rationals and the pivot columns."""
    R = np.array(M, dtype=object, copy=True)
    if R.ndim != 2:
        raise ValueError("rref expects a matrix")
    for idx, v in np.ndenumerate(R):
        if not isinstance(v, Fraction):
            R[idx] = Fraction(v)
    rows, cols = R.shape
    pivots = []
    r = 0
    for c in range(cols):
        if r == rows:
            break
        p = next((i for i in range(r, rows) if R[i, c] != 0), None)
        if p is None:
            continue
        if p != r:
            R[[r, p]] = R[[p, r]]
        R[r] = R[r] / R[r, c]
        for i in range(rows):
            if i != r and R[i, c] != 0:
                R[i] = R[i] - R[i, c] * R[r]
        pivots.append(c)
        r += 1
    return R, pivots


def _float_tol(M: np.ndarray, tol: float) -> float:
    if M.size == 0:
        return tol
    scale = float(np.max(np.linalg.norm(M, axis=0)))
    return tol * max(scale, 1.0)


def rank(M: np.ndarray, tol: float = FLOAT_RANK_TOL) -> int:
    """Row rank; exact for rational input, SVD with a relative tolerance otherwise."""
    M = np.asarray(M)
    if M.ndim != 2:
        raise ValueError("rank expects a matrix")
    if M.size == 0:
        return 0
    if is_exact(M):
        return len(rref(M)[1])
    s = np.linalg.svd(M.astype(float), compute_uv=False)
    return int(np.sum(s > _float_tol(M, tol)))


def null_space(M: np.ndarray, tol: float = FLOAT_RANK_TOL) -> np.ndarray:
    """Columns spanning ``{x : Mx = 0}``; exact basis for rational input."""
    M = np.asarray(M)
    if M.ndim != 2:
        raise ValueError("null_space expects a matrix")
    rows, cols = M.shape
    if is_exact(M):
        if rows == 0:
            return eye_exact(cols)
        R, pivots = rref(M)
        free = [c for c in range(cols) if c not in pivots]
        basis = zeros_exact((cols, len(free)))
        for j, f in enumerate(free):
            basis[f, j] = Fraction(1)
            for i, p in enumerate(pivots):
                basis[p, j] = -R[i, f]
        return basis
    if rows == 0:
        return np.eye(cols)
    Mf = M.astype(float)
    _, s, vt = np.linalg.svd(Mf)
    r = int(np.sum(s > _float_tol(Mf, tol)))
    return vt[r:].T.copy()


def column_space(M: np.ndarray, tol: float = FLOAT_RANK_TOL) -> np.ndarray:
    """A basis of the column span (pivot columns when exact, orthonormal when float)."""
    M = np.asarray(M)
    if M.shape[1] == 0:
        return M[:, :0].copy()
    if is_exact(M):
        _, pivots = rref(M)
        return M[:, pivots].copy()
    u, s, _ = np.linalg.svd(M.astype(float), full_matrices=False)
    r = int(np.sum(s > _float_tol(M.astype(float), tol)))
    return u[:, :r].copy()


def canonical_span_key(M: np.ndarray) -> tuple:
    """Hashable canonical form of the column span of an exact matrix."""
    if M.shape[1] == 0:
        return (M.shape[0],)
    R, pivots = rref(M.T)
    return (M.shape[0],) + tuple(tuple(R[i]) for i in range(len(pivots)))


def inverse(M: np.ndarray) -> np.ndarray:
    """Matrix inverse; exact Gauss-Jordan for rationals."""
    M = np.asarray(M)
    n = M.shape[0]
    if M.shape != (n, n):
        raise ValueError("inverse expects a square matrix")
    if not is_exact(M):
        return np.linalg.inv(M.astype(float))
    aug = np.concatenate([M, eye_exact(n)], axis=1)
    R, pivots = rref(aug)
    if pivots[:n] != list(range(n)):
        raise np.linalg.LinAlgError("singular matrix")
    return R[:, n:].copy()


def primitive_integer(v: np.ndarray) -> np.ndarray:
    """Scale a nonzero rational vector to a primitive integer vector (same direction)."""
    from math import gcd, lcm

    den = 1
    for x in v:
        den = lcm(den, x.denominator)
    ints = [int(x * den) for x in v]
    g = 0
    for x in ints:
        g = gcd(g, abs(x))
    g = g or 1
    return np.array([Fraction(x // g) for x in ints], dtype=object)


# ---------------------------------------------------------------------------
# float helpers


def orthonormal_basis(V: np.ndarray, tol: float = FLOAT_RANK_TOL) -> np.ndarray:
    """Orthonormal columns with the same span as the (independent) columns of ``V``."""
    V = np.asarray(V, dtype=float)
    if V.ndim == 1:
        V = V[:, None]
    if V.shape[1] == 0:
        return V.copy()
    if rank(V, tol) < V.shape[1]:
        raise RankDeficient("columns are linearly dependent")
    q, r = np.linalg.qr(V)
    # fix signs so that a single positive column normalises to itself
    signs = np.sign(np.diag(r))
    signs[signs == 0] = 1.0
    return q * signs


# ---------------------------------------------------------------------------
# random streams


@dataclass
class Rng:
    """Counter-based random stream identified by ``(seed, stream)``.

    Children derived with :meth:`child` are statistically independent and
    reproducible, so parallel chunks never share draws.
    """

    seed: int
    stream: tuple[int, ...] = ()
    algorithm: str = "philox4x64"
    _gen: np.random.Generator | None = field(default=None, repr=False, compare=False)

    @property
    def generator(self) -> np.random.Generator:
        if self._gen is None:
            ss = np.random.SeedSequence(int(self.seed) & (2**64 - 1), spawn_key=self.stream)
            self._gen = np.random.Generator(np.random.Philox(ss))
        return self._gen

    def child(self, *index: int) -> "Rng":
        return Rng(self.seed, self.stream + tuple(int(i) for i in index), self.algorithm)

    def normal(self, size) -> np.ndarray:
        return self.generator.standard_normal(size)

    def uniform(self, size=None):
        return self.generator.random(size)


def as_rng(rng: Rng | int | None) -> Rng:
    if isinstance(rng, Rng):
        return rng
    if rng is None:
        rng = 0
    return Rng(int(rng))


def sample_gaussian(d: int, rng: Rng, n: int | None = None) -> np.ndarray:
    """Standard Gaussian vector in R^d (or an ``(n, d)`` batch)."""
    if d < 1:
        raise ValueError("d must be >= 1")
    rng = as_rng(rng)
    if n is None:
        return rng.normal(d)
    return rng.normal((n, d))


def sample_haar_orthogonal(d: int, rng: Rng) -> np.ndarray:
    """Haar-distributed orthogonal matrix.

    QR of a Gaussian matrix alone is biased by the sign convention of the
    factorisation, so the columns are multiplied by ``sign(diag(R))``.
    """
    if d < 1:
        raise ValueError("d must be >= 1")
    rng = as_rng(rng)
    z = rng.normal((d, d))
    q, r = np.linalg.qr(z)
    s = np.sign(np.diag(r))
    s[s == 0] = 1.0
    return q * s


def sample_haar_batch(d: int, count: int, rng: Rng) -> np.ndarray:
    """``count`` independent Haar orthogonal matrices, shape ``(count, d, d)``."""
    rng = as_rng(rng)
    z = rng.normal((count, d, d))
    q, r = np.linalg.qr(z)
    s = np.sign(np.diagonal(r, axis1=1, axis2=2))
    s[s == 0] = 1.0
    return q * s[:, None, :]


# ---------------------------------------------------------------------------
# special functions


def chi2_survival(k: int, r: float) -> float:
    """``P{chi^2_k >= r}``; ``chi^2_0`` is the point mass at zero."""
    if k < 0 or r < 0:
        raise ValueError("k and r must be nonnegative")
    if k == 0:
        return 1.0 if r == 0 else 0.0
    if r == 0:
        return 1.0
    return float(special.gammaincc(k / 2.0, r / 2.0))
