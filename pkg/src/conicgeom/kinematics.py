"""Monte Carlo verification of kinematic identities under random rotations.

Every runner draws ``R`` tuples of Haar rotations, builds the rotated cones
``T_i Q_i C_i``, evaluates a per-trial estimate of the left-hand side from
``n`` Gaussian samples and compares the trial average with a right-hand side
assembled from the measures of the individual cones. Trials are keyed by
``(seed, trial, attempt)``, so results do not depend on the thread count.
"""

from __future__ import annotations

import csv
import io
import itertools
import json
import math
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import measures as ms
from . import numerics as nm
from .borel import BiconicFull, BiconicSet, ConicSet, Full, GlImage, Image, Intersection
from .cone import MEMBER_TOL, Cone, DimensionMismatch, _as_matrix
from .faces import is_general_position

DEGENERATE_TRIAL_BUDGET = 0.01
DECOMP_TOL = 1e-8
MAX_ATTEMPTS = 50


class NotReadOnce(ValueError):
    pass


class NonOrthogonalTransform(ValueError):
    pass


class DegenerateTrial(RuntimeError):
    """A trial violated the genericity premise and had to be redrawn."""


class DecompositionSingular(ArithmeticError):
    pass


class ImageDegenerate(ArithmeticError):
    pass


# ---------------------------------------------------------------------------
# Boolean formulas


@dataclass(frozen=True)
class Var:
    index: int

    def __str__(self):
        return f"X{self.index}"


@dataclass(frozen=True)
class Not:
    arg: object

    def __str__(self):
        return f"~{_paren(self.arg)}"


@dataclass(frozen=True)
class And:
    args: tuple

    def __str__(self):
        return " & ".join(_paren(a) for a in self.args)


@dataclass(frozen=True)
class Or:
    args: tuple

    def __str__(self):
        return " | ".join(_paren(a) for a in self.args)


Formula = Var | Not | And | Or


def _paren(f) -> str:
    return str(f) if isinstance(f, (Var, Not)) else f"({f})"


def variables(F) -> list[int]:
    """Variable indices in order of occurrence (with repetitions)."""
    if isinstance(F, Var):
        return [F.index]
    if isinstance(F, Not):
        return variables(F.arg)
    return [i for a in F.args for i in variables(a)]


def is_read_once(F) -> bool:
    vs = variables(F)
    return len(vs) == len(set(vs))


def and_chain(n: int):
    return And(tuple(Var(i) for i in range(n)))


def or_chain(n: int):
    return Or(tuple(Var(i) for i in range(n)))


_TOKEN = re.compile(r"\s*(X\d+|[&|~()∧∨¬])")


def parse_formula(text: str):
    """Parse ``"~(X0 & X1) | X2"`` (also accepts ∧, ∨, ¬)."""
    pos, tokens = 0, []
    text = text.strip()
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if not m:
            raise ValueError(f"unexpected input at column {pos + 1}: {text[pos:]!r}")
        tok = m.group(1)
        tokens.append({"∧": "&", "∨": "|", "¬": "~"}.get(tok, tok))
        pos = m.end()
        while pos < len(text) and text[pos].isspace():
            pos += 1

    def expr(i):
        left, i = term(i)
        parts = [left]
        while i < len(tokens) and tokens[i] == "|":
            nxt, i = term(i + 1)
            parts.append(nxt)
        return (parts[0] if len(parts) == 1 else Or(tuple(parts))), i

    def term(i):
        left, i = factor(i)
        parts = [left]
        while i < len(tokens) and tokens[i] == "&":
            nxt, i = factor(i + 1)
            parts.append(nxt)
        return (parts[0] if len(parts) == 1 else And(tuple(parts))), i

    def factor(i):
        if i >= len(tokens):
            raise ValueError("unexpected end of formula")
        t = tokens[i]
        if t == "~":
            a, i = factor(i + 1)
            return Not(a), i
        if t == "(":
            a, i = expr(i + 1)
            if i >= len(tokens) or tokens[i] != ")":
                raise ValueError("missing closing parenthesis")
            return a, i + 1
        if t.startswith("X"):
            return Var(int(t[1:])), i + 1
        raise ValueError(f"unexpected token {t!r}")

    F, i = expr(0)
    if i != len(tokens):
        raise ValueError(f"trailing tokens in formula: {tokens[i:]}")
    return F


def eval_formula_cones(F, cones: Sequence[Cone]) -> Cone:
    """Replace variables by cones, ∧ by ∩, ∨ by + and ¬ by the polar."""
    d = cones[0].d
    if any(c.d != d for c in cones):
        raise DimensionMismatch("cones must share the ambient dimension")
    if max(variables(F)) >= len(cones):
        raise DimensionMismatch("formula uses more variables than cones given")

    def ev(G):
        if isinstance(G, Var):
            return cones[G.index]
        if isinstance(G, Not):
            return ev(G.arg).polar()
        vals = [ev(a) for a in G.args]
        out = vals[0]
        for v in vals[1:]:
            out = out.intersect(v) if isinstance(G, And) else out.minkowski_sum(v)
        return out

    return ev(F)


def dim_formula(F, d: int, ks: Sequence[int], allow_repeated: bool = False) -> int:
    """Dimension of ``F(L_0, ..., L_n)`` for subspaces in general position."""
    if not allow_repeated and not is_read_once(F):
        raise NotReadOnce(f"{F} is not read-once")
    if any(not 0 <= k <= d for k in ks):
        raise ValueError("subspace dimensions must lie in 0..d")

    def ev(G):
        if isinstance(G, Var):
            return ks[G.index]
        if isinstance(G, Not):
            return d - ev(G.arg)
        vals = [ev(a) for a in G.args]
        if isinstance(G, And):
            return max(0, sum(vals) - (len(vals) - 1) * d)
        return min(d, sum(vals))

    return ev(F)


def eval_formula_subspaces(F, bases: Sequence[np.ndarray]) -> np.ndarray:
    """Exact basis of ``F(L_0, ...)`` for subspaces given by basis columns."""
    d = bases[0].shape[0]

    def perp(B):
        if B.shape[1] == 0:
            return nm.eye_exact(d)
        return nm.null_space(B.T)

    def ev(G):
        if isinstance(G, Var):
            return bases[G.index]
        if isinstance(G, Not):
            return perp(ev(G.arg))
        vals = [ev(a) for a in G.args]
        if isinstance(G, Or):
            return nm.column_space(np.concatenate(vals, axis=1))
        rows = np.concatenate([perp(v).T for v in vals], axis=0)
        return nm.null_space(rows) if rows.shape[0] else nm.eye_exact(d)

    return ev(F)


# ---------------------------------------------------------------------------
# configuration and reports


@dataclass
class ExperimentConfig:
    cones: list
    identity: str = "kinematic-v"
    k: int | list = 1
    transforms: list | None = None
    sets: list | None = None
    rotations: int = 200
    samples_per_trial: int = 50_000
    seed: int = 0
    reference_samples: int = 1_000_000
    threads: int = 1
    formula: object = None
    codim: int = 1
    radii: list = field(default_factory=lambda: [0.5, 1.0, 2.0])
    allow_general_transforms: bool = False

    def __post_init__(self):
        if self.rotations < 1 or self.samples_per_trial < 1:
            raise ValueError("rotations and samples_per_trial must be >= 1")
        if not self.cones:
            raise ValueError("at least one cone is required")
        d = self.cones[0].d
        if any(c.d != d for c in self.cones):
            raise DimensionMismatch("cones must share the ambient dimension")
        if self.transforms is None:
            self.transforms = [np.eye(d) for _ in self.cones]
        else:
            self.transforms = [np.asarray(_as_matrix(T), dtype=float) for T in self.transforms]
            for T in self.transforms:
                if T.shape != (d, d) or abs(np.linalg.det(T)) < 1e-12:
                    raise ValueError("transforms must be nonsingular d x d matrices")

    @property
    def d(self) -> int:
        return self.cones[0].d

    @property
    def ks(self) -> list:
        return list(self.k) if isinstance(self.k, (list, tuple)) else [self.k]


@dataclass
class Report:
    identity: str
    anchor: str
    lhs: float
    lhs_stderr: float
    rhs: float
    rhs_stderr: float
    n: int
    R: int
    seed: int
    params: dict = field(default_factory=dict)
    degenerate_trials: int = 0
    degenerate_samples: int = 0
    ambiguous_projections: int = 0
    informational: bool = False
    trial_values: np.ndarray | None = field(default=None, repr=False)
    exact: bool = False

    @property
    def sigma(self) -> float:
        return math.hypot(self.lhs_stderr, self.rhs_stderr)

    @property
    def z(self) -> float:
        diff = self.lhs - self.rhs
        if self.sigma == 0:
            return 0.0 if abs(diff) <= 1e-12 else math.copysign(math.inf, diff)
        return diff / self.sigma

    @property
    def passed(self) -> bool:
        if self.exact:
            return abs(self.lhs - self.rhs) <= 1e-12
        within = abs(self.z) <= 4.0
        budget = self.degenerate_trials <= DEGENERATE_TRIAL_BUDGET * self.R
        return within and budget

    def to_dict(self) -> dict:
        return {
            "identity": self.identity,
            "anchor": self.anchor,
            "params": self.params,
            "lhs": self.lhs,
            "rhs": self.rhs,
            "stderr": self.sigma,
            "lhs_stderr": self.lhs_stderr,
            "rhs_stderr": self.rhs_stderr,
            "z": self.z if math.isfinite(self.z) else str(self.z),
            "pass": None if self.informational else self.passed,
            "n": self.n,
            "R": self.R,
            "seed": self.seed,
            "degenerate_trials": self.degenerate_trials,
            "degenerate_samples": self.degenerate_samples,
            "ambiguous_projections": self.ambiguous_projections,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    def summary(self) -> str:
        tag = "INFO" if self.informational else ("PASS" if self.passed else "FAIL")
        return (f"[{tag}] {self.identity} {self.params} lhs={self.lhs:.6f} rhs={self.rhs:.6f} "
                f"sigma={self.sigma:.2e} z={self.z:+.2f}")


CSV_COLUMNS = ["identity", "anchor", "params", "lhs", "rhs", "stderr", "z", "pass", "n", "R", "seed",
               "degenerate_trials", "degenerate_samples", "ambiguous_projections"]


def reports_to_csv(reports: Sequence[Report]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for r in reports:
        row = r.to_dict()
        row["params"] = json.dumps(row["params"], sort_keys=True)
        w.writerow([row[c] for c in CSV_COLUMNS])
    return buf.getvalue()


# ---------------------------------------------------------------------------
# right-hand sides from component vectors


@dataclass
class ComponentVector:
    """Per-index values of one cone with their standard errors."""

    values: np.ndarray
    stderrs: np.ndarray

    @classmethod
    def exact(cls, values) -> "ComponentVector":
        v = np.array([float(x) for x in values])
        return cls(v, np.zeros_like(v))

    @classmethod
    def from_estimate(cls, est: ms.ConeVectorEstimate) -> "ComponentVector":
        return cls(est.means, est.stderrs)


def tuple_sum(comps: Sequence[ComponentVector], accept: Callable[[tuple], bool]) -> tuple[float, float]:
    """``Σ_{accepted (k_0..k_n)} Π_i a_i[k_i]`` and its first-order standard error."""
    total = 0.0
    grads = [np.zeros_like(c.values) for c in comps]
    ranges = [range(len(c.values)) for c in comps]
    for idx in itertools.product(*ranges):
        if not accept(idx):
            continue
        vals = [c.values[i] for c, i in zip(comps, idx)]
        total += float(np.prod(vals))
        for j, i in enumerate(idx):
            grads[j][i] += float(np.prod(vals[:j] + vals[j + 1:]))
    var = sum(float(np.sum((g * c.stderrs) ** 2)) for g, c in zip(grads, comps))
    return total, math.sqrt(var)


def component_v(C: Cone, n_ref: int, rng) -> ComponentVector:
    ex = ms.exact_v(C)
    if ex is not None:
        return ComponentVector.exact(ex)
    return ComponentVector.from_estimate(ms.estimate_v(C, n_ref, rng))


def component_psi(C: Cone, M: ConicSet, n_ref: int, rng) -> ComponentVector:
    if isinstance(M, Full):
        ex = ms.exact_u(C)
        if ex is not None:
            return ComponentVector.exact(ex)
    ests = [ms.psi_k(C, k, M, n_ref, nm.as_rng(rng).child(k)) for k in range(C.d + 1)]
    return ComponentVector(np.array([e.mean for e in ests]), np.array([e.stderr for e in ests]))


def component_theta(C: Cone, M: BiconicSet, n_ref: int, rng) -> ComponentVector:
    if isinstance(M, BiconicFull):
        return component_v(C, n_ref, rng)
    return ComponentVector.from_estimate(ms.theta_vector(C, M, n_ref, rng))


# ---------------------------------------------------------------------------
# trial machinery


def _map_trials(fn, R: int, threads: int):
    if threads <= 1:
        return [fn(t) for t in range(R)]
    with ThreadPoolExecutor(max_workers=threads) as ex:
        return list(ex.map(fn, range(R)))


def _rotated(cones: Sequence[Cone], Ts: Sequence[np.ndarray], Qs: Sequence[np.ndarray]) -> list[Cone]:
    return [C.astype_float().linear_image(T @ Q) for C, T, Q in zip(cones, Ts, Qs)]


@dataclass
class _Trial:
    values: np.ndarray
    attempts: int
    degenerate_samples: int = 0
    ambiguous: int = 0


def _generic_trial(cfg: ExperimentConfig, t: int, body, check_generic: bool = True) -> _Trial:
    """Draw rotations for trial ``t`` until the rotated cones are in general
    position, then evaluate ``body(rotated_cones, Qs, rng)``."""
    root = nm.Rng(cfg.seed)
    d = cfg.d
    for attempt in range(MAX_ATTEMPTS):
        rng = root.child(t, attempt)
        Qs = [nm.sample_haar_orthogonal(d, rng.child(0, i)) for i in range(len(cfg.cones))]
        cones = _rotated(cfg.cones, cfg.transforms, Qs)
        if check_generic and not is_general_position(cones):
            continue
        try:
            out = body(cones, Qs, rng.child(1))
        except (DegenerateTrial, ImageDegenerate, np.linalg.LinAlgError):
            continue
        out.attempts = attempt
        return out
    raise DegenerateTrial(f"trial {t} stayed degenerate after {MAX_ATTEMPTS} attempts")


def _aggregate(values: np.ndarray) -> tuple[float, float]:
    R = values.shape[0]
    mean = float(values.mean())
    sd = float(values.std(ddof=1) / math.sqrt(R)) if R > 1 else 0.0
    return mean, sd


def _run_trials(cfg, body, check_generic=True):
    trials = _map_trials(lambda t: _generic_trial(cfg, t, body, check_generic), cfg.rotations, cfg.threads)
    values = np.stack([tr.values for tr in trials])
    counters = {
        "degenerate_trials": sum(tr.attempts for tr in trials),
        "degenerate_samples": sum(tr.degenerate_samples for tr in trials),
        "ambiguous_projections": sum(tr.ambiguous for tr in trials),
    }
    return values, counters


def _make_report(identity, anchor, cfg, trial_col, rhs, rhs_sd, counters, params, informational=False):
    lhs, lhs_sd = _aggregate(trial_col)
    return Report(identity, anchor, lhs, lhs_sd, rhs, rhs_sd, cfg.samples_per_trial, cfg.rotations, cfg.seed,
                  params=params, informational=informational, trial_values=trial_col, **counters)


def _single_or_list(cfg, reports):
    return reports[0] if not isinstance(cfg.k, (list, tuple)) else reports


def _intersection(cones: Sequence[Cone]) -> Cone:
    out = cones[0]
    for c in cones[1:]:
        out = out.intersect(c)
    return out


def _sum(cones: Sequence[Cone]) -> Cone:
    out = cones[0]
    for c in cones[1:]:
        out = out.minkowski_sum(c)
    return out


def _skeleton_counts(C: Cone, n: int, rng) -> tuple[np.ndarray, ms.MoreauSample]:
    s = ms.moreau_sample(C, n, rng)
    return np.bincount(s.dims, minlength=C.d + 1) / n, s


# ---------------------------------------------------------------------------
# kinematic formulas for u / Ψ and v


def run_kinematic_u(cfg: ExperimentConfig):
    """Average polyhedral measure of the rotated intersection against the
    convolution of the component measures."""
    d, n = cfg.d, len(cfg.cones) - 1
    sets = cfg.sets or [Full(d) for _ in cfg.cones]
    ks = cfg.ks
    if any(k <= 0 for k in ks):
        raise ValueError("the kinematic formula for u needs k > 0")

    def body(cones, Qs, rng):
        C = _intersection(cones)
        Ms = [s if isinstance(s, Full) else Image(T @ Q, s) for s, T, Q in zip(sets, cfg.transforms, Qs)]
        M = Ms[0] if len(Ms) == 1 else Intersection(Ms)
        vals = np.array([ms.psi_k(C, k, M, cfg.samples_per_trial, rng.child(k)).mean for k in ks])
        return _Trial(vals, 0)

    values, counters = _run_trials(cfg, body)
    ref = nm.Rng(cfg.seed).child(10**6)
    comps = [component_psi(C, M, cfg.reference_samples, ref.child(i)) for i, (C, M) in enumerate(zip(cfg.cones, sets))]
    reports = []
    for j, k in enumerate(ks):
        rhs, rsd = tuple_sum(comps, lambda idx, k=k: sum(idx) == n * d + k)
        reports.append(_make_report("kinematic-u", "E[Psi_k(∩ T_i Q_i C_i, ∩ T_i Q_i M_i)] = Psi_{nd+k}(C_0×…×C_n, M_0×…×M_n)",
                                    cfg, values[:, j], rhs, rsd, counters, {"k": k}))
    return _single_or_list(cfg, reports)


V_VARIANTS = {
    "intersection": ("E[v_k(∩ T_i Q_i C_i)] = v_{nd+k}(C_0×…×C_n)", False),
    "polar": ("E[v_{d-k}(Σ T_i Q_i C_i)] = v_{d-k}(C_0×…×C_n)", True),
    "boundary": ("E[v_0(∩ T_i Q_i C_i)] = Σ_{j≤nd} v_j(C_0×…×C_n)", False),
    "boundary-sum": ("E[v_d(Σ T_i Q_i C_i)] = Σ_{j≤nd} v_{d+j}(C_0×…×C_n)", True),
}


def run_kinematic_v(cfg: ExperimentConfig, variant: str = "intersection"):
    """Intrinsic-volume kinematic formula and its polar and boundary forms.

    ``variant`` selects the identity: ``"intersection"`` (k > 0),
    ``"polar"`` (index d - k of the rotated sum, k > 0), ``"boundary"``
    (v_0 of the intersection) or ``"boundary-sum"`` (v_d of the sum).
    """
    if variant not in V_VARIANTS:
        raise ValueError(f"unknown variant {variant!r}")
    anchor, use_sum = V_VARIANTS[variant]
    d, n = cfg.d, len(cfg.cones) - 1
    ks = [0] if variant.startswith("boundary") else cfg.ks
    if variant in ("intersection", "polar") and any(k <= 0 for k in ks):
        raise ValueError("k must be positive")

    def index(k):
        if variant == "intersection":
            return k
        if variant == "polar":
            return d - k
        return 0 if variant == "boundary" else d

    def body(cones, Qs, rng):
        C = _sum(cones) if use_sum else _intersection(cones)
        counts, s = _skeleton_counts(C, cfg.samples_per_trial, rng)
        return _Trial(np.array([counts[index(k)] for k in ks]), 0, ambiguous=s.drops)

    values, counters = _run_trials(cfg, body)
    ref = nm.Rng(cfg.seed).child(10**6)
    comps = [component_v(C, cfg.reference_samples, ref.child(i)) for i, C in enumerate(cfg.cones)]
    reports = []
    for j, k in enumerate(ks):
        if variant == "intersection":
            acc = lambda idx, k=k: sum(idx) == n * d + k
        elif variant == "polar":
            acc = lambda idx, k=k: sum(idx) == d - k
        elif variant == "boundary":
            acc = lambda idx: sum(idx) <= n * d
        else:
            acc = lambda idx: sum(idx) >= d
        rhs, rsd = tuple_sum(comps, acc)
        reports.append(_make_report(f"kinematic-v-{variant}" if variant != "intersection" else "kinematic-v",
                                    anchor, cfg, values[:, j], rhs, rsd, counters, {"k": k, "variant": variant}))
    if variant.startswith("boundary"):
        return reports[0]
    return _single_or_list(cfg, reports)


def run_general_formula(F, cfg: ExperimentConfig, allow_repeated: bool = False, identity: str = "general",
                        informational: bool = False):
    """``E[v_k(F(T_0Q_0C_0, ...))]`` against ``Σ_{dim^F_d(k_i) = k} Π v_{k_i}(C_i)``."""
    d = cfg.d
    if not allow_repeated and not is_read_once(F):
        raise NotReadOnce(f"{F} is not read-once")
    if max(variables(F)) >= len(cfg.cones):
        raise DimensionMismatch("formula uses more variables than cones given")
    if not cfg.allow_general_transforms:
        for T in cfg.transforms:
            if not np.allclose(T.T @ T, np.eye(d), atol=1e-12):
                raise NonOrthogonalTransform("the general formula is restricted to orthogonal transforms")
    ks = cfg.ks

    def body(cones, Qs, rng):
        C = eval_formula_cones(F, cones)
        counts, s = _skeleton_counts(C, cfg.samples_per_trial, rng)
        return _Trial(np.array([counts[k] for k in ks]), 0, ambiguous=s.drops)

    values, counters = _run_trials(cfg, body)
    ref = nm.Rng(cfg.seed).child(10**6)
    comps = [component_v(C, cfg.reference_samples, ref.child(i)) for i, C in enumerate(cfg.cones)]
    reports = []
    for j, k in enumerate(ks):
        rhs, rsd = tuple_sum(comps, lambda idx, k=k: dim_formula(F, d, idx, allow_repeated) == k)
        reports.append(_make_report(identity, f"E[v_k(F(T_i Q_i C_i))] = Σ_{{dim^F_d(k_0..k_n)=k}} Π v_{{k_i}}(C_i), F = {F}",
                                    cfg, values[:, j], rhs, rsd, counters, {"k": k, "formula": str(F)},
                                    informational=informational))
    return _single_or_list(cfg, reports)


def counterexample_probe(cfg: ExperimentConfig, F=None):
    """Both sides of the general formula for the repeated-variable formula
    ``(X0 ∨ X1) ∧ ¬X0``; reported for information only."""
    if F is None:
        F = And((Or((Var(0), Var(1))), Not(Var(0))))
    return run_general_formula(F, cfg, allow_repeated=True, identity="probe", informational=True)


# ---------------------------------------------------------------------------
# support measures


def _locate_faces(C: Cone, Y: np.ndarray, tol: float = MEMBER_TOL) -> np.ndarray:
    """Index of the face of ``C`` whose relative interior holds each row (-1 if none)."""
    lat = C.lattice
    Hf = C.H_float
    out = np.full(Y.shape[0], -1, dtype=int)
    if Hf.shape[0] == 0:
        out[:] = lat.top.id
        return out
    vals = Y @ Hf.T
    s = tol * np.maximum(np.linalg.norm(Y, axis=1), 1e-300)[:, None]
    tight = np.abs(vals) <= s
    strict = vals < -s
    for face in lat:
        mask = np.zeros(Hf.shape[0], dtype=bool)
        mask[list(face.tight_set)] = True
        ok = np.all(np.where(mask, tight, strict), axis=1) & (out < 0)
        out[ok] = face.id
    return out


def normal_decomposition(Y: np.ndarray, Yp: np.ndarray, comps: Sequence[Cone]):
    """Split each dual point ``y'`` as ``Σ y'_i`` with ``y'_i ⊥ span(F_i)``.

    ``F_i`` is the face of the ``i``-th cone whose relative interior contains
    ``y``. Returns ``(parts, ok)``; ``ok`` is false where a face could not be
    located or the linear system is singular or inconsistent.
    """
    n = Y.shape[0]
    keys = np.stack([_locate_faces(C, Y) for C in comps], axis=1)
    parts = [np.zeros_like(Y) for _ in comps]
    ok = np.all(keys >= 0, axis=1)
    if not ok.any():
        return parts, ok
    uniq = np.unique(keys[ok], axis=0)
    for key in uniq:
        sel = ok & np.all(keys == key, axis=1)
        bases = []
        for C, fid in zip(comps, key):
            face = C.lattice.faces[fid]
            P = np.asarray(face.perp_basis(), dtype=float)
            bases.append(nm.orthonormal_basis(P) if P.shape[1] else P)
        widths = [b.shape[1] for b in bases]
        B = np.concatenate(bases, axis=1) if sum(widths) else np.zeros((Y.shape[1], 0))
        T = Yp[sel]
        scale = 1.0 + np.linalg.norm(T, axis=1)
        if B.shape[1] == 0:
            good = np.linalg.norm(T, axis=1) <= DECOMP_TOL * scale
            idx = np.nonzero(sel)[0]
            ok[idx[~good]] = False
            continue
        if nm.rank(B, nm.GENERIC_RANK_TOL) < B.shape[1]:
            ok[sel] = False
            continue
        coef, *_ = np.linalg.lstsq(B, T.T, rcond=None)
        resid = np.linalg.norm(B @ coef - T.T, axis=0)
        idx = np.nonzero(sel)[0]
        ok[idx[resid > DECOMP_TOL * scale]] = False
        off = 0
        for i, w in enumerate(widths):
            if w:
                parts[i][sel] = (bases[i] @ coef[off:off + w]).T
            off += w
    return parts, ok


def _transformed_set(M: BiconicSet, T: np.ndarray) -> BiconicSet:
    return M if isinstance(M, BiconicFull) else GlImage(T, M)


def run_kinematic_theta(cfg: ExperimentConfig, polar: bool = False):
    """Support-measure kinematic formula (and its polar form with ``polar=True``).

    The left-hand side classifies Moreau pairs ``(y, y')`` of the rotated
    intersection (or sum) and decides membership in the conjunction
    (disjunction) of the rotated sets through the normal decomposition of
    ``y'`` (``y``) along the faces of the components.
    """
    d, n = cfg.d, len(cfg.cones) - 1
    sets = cfg.sets or [BiconicFull(d) for _ in cfg.cones]
    ks = cfg.ks
    if any(k <= 0 for k in ks):
        raise ValueError("k must be positive")
    trivial = all(isinstance(s, BiconicFull) for s in sets)

    def body(cones, Qs, rng):
        Ms = [_transformed_set(s, T @ Q) for s, T, Q in zip(sets, cfg.transforms, Qs)]
        C = _sum(cones) if polar else _intersection(cones)
        s = ms.moreau_sample(C, cfg.samples_per_trial, rng)
        target = np.array([d - k if polar else k for k in ks])
        interest = np.isin(s.dims, target)
        member = np.ones(cfg.samples_per_trial, dtype=bool)
        bad = 0
        if not trivial and interest.any():
            Y, Yp = s.Y[interest], s.Yp[interest]
            if polar:
                parts, ok = normal_decomposition(Yp, Y, [c.polar() for c in cones])
                sub = ok.copy()
                for M, part in zip(Ms, parts):
                    sub &= M.contains(part, Yp)
            else:
                parts, ok = normal_decomposition(Y, Yp, cones)
                sub = ok.copy()
                for M, part in zip(Ms, parts):
                    sub &= M.contains(Y, part)
            bad = int((~ok).sum())
            member[interest] = sub
        vals = np.array([np.mean((s.dims == t) & member) for t in target])
        return _Trial(vals, 0, degenerate_samples=bad, ambiguous=s.drops)

    values, counters = _run_trials(cfg, body)
    ref = nm.Rng(cfg.seed).child(10**6)
    comps = [component_theta(C, M, cfg.reference_samples, ref.child(i)) for i, (C, M) in enumerate(zip(cfg.cones, sets))]
    reports = []
    ident = "polar-theta" if polar else "theta"
    anchor = ("E[Theta_{d-k}(Σ T_i Q_i C_i, ∨ T_i Q_i M_i)] = Theta_{d-k}(C_0×…×C_n, M_0 ⊗ … ⊗ M_n)" if polar
              else "E[Theta_k(∩ T_i Q_i C_i, ∧ T_i Q_i M_i)] = Theta_{nd+k}(C_0×…×C_n, M_0 ⊗ … ⊗ M_n)")
    for j, k in enumerate(ks):
        target = d - k if polar else n * d + k
        rhs, rsd = tuple_sum(comps, lambda idx, t=target: sum(idx) == t)
        reports.append(_make_report(ident, anchor, cfg, values[:, j], rhs, rsd, counters, {"k": k}))
    return _single_or_list(cfg, reports)


def _formula_membership(G, cones, sets, Y, Yp):
    """Membership of Moreau pairs of ``G(cones)`` in ``G(sets)``.

    ``∧`` splits ``y'`` over the normal spaces of the children (wedge), ``∨``
    splits ``y`` over the children's polars (vee), ``¬`` swaps the pair (rev).
    Returns ``(cone, member, ok)``.
    """
    if isinstance(G, Var):
        return cones[G.index], sets[G.index].contains(Y, Yp), np.ones(Y.shape[0], dtype=bool)
    if isinstance(G, Not):
        C, member, ok = _formula_membership(G.arg, cones, sets, Yp, Y)
        return C.polar(), member, ok
    kids = [eval_formula_cones(a, cones) for a in G.args]
    if isinstance(G, And):
        C = _intersection(kids)
        parts, ok = normal_decomposition(Y, Yp, kids)
        pairs = [(Y, p) for p in parts]
    else:
        C = _sum(kids)
        parts, ok = normal_decomposition(Yp, Y, [k.polar() for k in kids])
        pairs = [(p, Yp) for p in parts]
    member = ok.copy()
    for a, (y, yp) in zip(G.args, pairs):
        _, sub, sub_ok = _formula_membership(a, cones, sets, y, yp)
        member &= sub
        ok &= sub_ok
    return C, member, ok


def run_general_formula_theta(F, cfg: ExperimentConfig):
    """``E[Θ_k(F(T_iQ_iC_i), F(T_iQ_i𝓜_i))]`` against ``Σ_{dim^F_d(k_i) = k} Π Θ_{k_i}(C_i, 𝓜_i)``.

    Restricted to orthogonal ``T_i`` unless ``cfg.allow_general_transforms``
    is set, in which case the reports are informational.
    """
    d = cfg.d
    if not is_read_once(F):
        raise NotReadOnce(f"{F} is not read-once")
    if max(variables(F)) >= len(cfg.cones):
        raise DimensionMismatch("formula uses more variables than cones given")
    orthogonal = all(np.allclose(T.T @ T, np.eye(d), atol=1e-12) for T in cfg.transforms)
    if not orthogonal and not cfg.allow_general_transforms:
        raise NonOrthogonalTransform("the support-measure general formula is restricted to orthogonal transforms")
    ks = cfg.ks
    if any(not 0 < k < d for k in ks):
        raise ValueError("need 0 < k < d")
    sets = cfg.sets or [BiconicFull(d) for _ in cfg.cones]

    def body(cones, Qs, rng):
        Ms = [_transformed_set(s, T @ Q) for s, T, Q in zip(sets, cfg.transforms, Qs)]
        C = eval_formula_cones(F, cones)
        s = ms.moreau_sample(C, cfg.samples_per_trial, rng)
        interest = np.isin(s.dims, ks)
        member = np.ones(cfg.samples_per_trial, dtype=bool)
        bad = 0
        if interest.any():
            _, sub, ok = _formula_membership(F, cones, Ms, s.Y[interest], s.Yp[interest])
            member[interest] = sub & ok
            bad = int((~ok).sum())
        vals = np.array([np.mean((s.dims == k) & member) for k in ks])
        return _Trial(vals, 0, degenerate_samples=bad, ambiguous=s.drops)

    values, counters = _run_trials(cfg, body)
    ref = nm.Rng(cfg.seed).child(10**6)
    comps = [component_theta(C, M, cfg.reference_samples, ref.child(i)) for i, (C, M) in enumerate(zip(cfg.cones, sets))]
    reports = []
    for j, k in enumerate(ks):
        rhs, rsd = tuple_sum(comps, lambda idx, k=k: dim_formula(F, d, idx) == k)
        reports.append(_make_report("general-theta",
                                    f"E[Theta_k(F(T_i Q_i C_i), F(T_i Q_i M_i))] = Σ_{{dim^F_d(k_0..k_n)=k}} Π Theta_{{k_i}}(C_i, M_i), F = {F}",
                                    cfg, values[:, j], rhs, rsd, counters, {"k": k, "formula": str(F)},
                                    informational=not orthogonal))
    return _single_or_list(cfg, reports)


# ---------------------------------------------------------------------------
# lineality vector


def run_ell_kinematic(cfg: ExperimentConfig) -> Report:
    """Lineality vector of the rotated intersection against the product
    formula, required to hold on every trial."""
    d, n = cfg.d, len(cfg.cones) - 1
    lins = [C.lineality() for C in cfg.cones]
    total = sum(lins)
    expected = np.zeros(d + 1)
    for k in range(1, d + 1):
        expected[k] = float(total == n * d + k)
    expected[0] = float(total <= n * d)

    def body(cones, Qs, rng):
        bases = [c.lineality_basis for c in cones]
        perps = []
        for B in bases:
            B = np.asarray(B, dtype=float)
            perps.append((nm.null_space(B.T) if B.shape[1] else np.eye(d)).T)
        stacked = np.concatenate(perps, axis=0)
        lin = d - nm.rank(stacked, nm.GENERIC_RANK_TOL) if stacked.shape[0] else d
        got = np.zeros(d + 1)
        got[lin] = 1.0
        return _Trial(np.array([float(np.array_equal(got, expected))]), 0)

    values, counters = _run_trials(cfg, body, check_generic=False)
    agree = values[:, 0]
    rep = Report("ell", "l_k(∩ T_i Q_i C_i) = l_{nd+k}(C_0×…×C_n), l_0 = Σ_{j≤nd} l_j, every trial",
                 float(agree.min()), 0.0, 1.0, 0.0, 1, cfg.rotations, cfg.seed,
                 params={"lineality": lins, "d": d}, trial_values=agree, exact=True, **counters)
    return rep


# ---------------------------------------------------------------------------
# projection formula


def run_projection_formula(C: Cone, M: ConicSet | None, codim: int, cfg: ExperimentConfig):
    """Curvature measures of the projection onto a random subspace of
    codimension ``codim`` against those of the cone itself."""
    d = C.d
    M = M or Full(d)
    ks = cfg.ks
    if any(not 0 <= k <= d - codim - 1 for k in ks):
        raise ValueError("need 0 <= k <= d - codim - 1")
    Cf = C.astype_float()
    V = Cf.V
    localized = not isinstance(M, Full)

    def body(cones, Qs, rng):
        Q = Qs[0]
        U = Q[:, : d - codim]
        W = U.T @ V
        P = Cone.from_generators(W, d - codim)
        s = ms.moreau_sample(P, cfg.samples_per_trial, rng)
        member = np.ones(cfg.samples_per_trial, dtype=bool)
        if localized:
            lat = P.lattice
            Hp = P.H_float
            Wn = W / np.maximum(np.linalg.norm(W, axis=0), 1e-300)
            for face in lat:
                if face.dim not in ks:
                    continue
                sel = s.faces == face.id
                if not sel.any():
                    continue
                rows = sorted(face.tight_set)
                on = np.all(np.abs(Hp[rows] @ Wn) <= 1e-9, axis=0) if rows else np.ones(W.shape[1], dtype=bool)
                G = V[:, on]
                B = nm.column_space(G) if G.shape[1] else np.zeros((d, 0))
                if B.shape[1] != face.dim or (B.shape[1] and nm.rank(U.T @ B, nm.GENERIC_RANK_TOL) != B.shape[1]):
                    raise ImageDegenerate("preimage of a projected face is not unique")
                if B.shape[1] == 0:
                    X = np.zeros((int(sel.sum()), d))
                else:
                    coef, *_ = np.linalg.lstsq(U.T @ B, s.Y[sel].T, rcond=None)
                    X = (B @ coef).T
                member[sel] = M.contains(X)
        vals = np.array([np.mean((s.dims == k) & member) for k in ks])
        return _Trial(vals, 0, ambiguous=s.drops)

    pcfg = ExperimentConfig([C], identity="projection", k=cfg.k, rotations=cfg.rotations,
                            samples_per_trial=cfg.samples_per_trial, seed=cfg.seed, threads=cfg.threads)
    values, counters = _run_trials(pcfg, body, check_generic=False)
    ref = nm.Rng(cfg.seed).child(10**6)
    if localized:
        comp = ComponentVector.from_estimate(ms.phi_vector(C, M, cfg.reference_samples, ref))
    else:
        comp = component_v(C, cfg.reference_samples, ref)
    reports = []
    for j, k in enumerate(ks):
        reports.append(_make_report("projection", "E[Phi_k(Pi_L C, Pi_L M)] = Phi_k(C, M), L uniform of codim m",
                                    cfg, values[:, j], float(comp.values[k]), float(comp.stderrs[k]), counters,
                                    {"k": k, "codim": codim, "localized": localized}))
    return _single_or_list(cfg, reports)


# ---------------------------------------------------------------------------
# Crofton formula


def nonzero_intersection_batch(C: Cone, D: Cone, Qs: np.ndarray, tol: float = 1e-9) -> np.ndarray:
    """Whether ``C ∩ Q D`` contains a nonzero point, for a stack of rotations.

    The intersection is ``{x : H_C x <= 0, H_D Q^T x <= 0}``. It is nonzero
    iff its constraint matrix has a nontrivial kernel or some ``d - 1`` of its
    rows cut out a line that is feasible in one direction.
    """
    d = C.d
    Hc = C.H_float
    Hd = D.H_float
    R = Qs.shape[0]
    rows = [np.broadcast_to(Hc, (R,) + Hc.shape)] if Hc.shape[0] else []
    if Hd.shape[0]:
        rows.append(np.einsum("mj,rij->rmi", Hd, Qs))
    if not rows:
        return np.ones(R, dtype=bool)
    A = np.concatenate(rows, axis=1)
    m = A.shape[1]
    if m < d:
        return np.ones(R, dtype=bool)
    sv = np.linalg.svd(A, compute_uv=False)
    out = sv[:, -1] <= nm.GENERIC_RANK_TOL * sv[:, 0]
    for S in itertools.combinations(range(m), d - 1):
        K = A[:, list(S), :]
        if d - 1 == 0:
            continue
        _, s, vt = np.linalg.svd(K)
        full = s[:, -1] > nm.GENERIC_RANK_TOL * s[:, 0]
        v = vt[:, -1, :]
        vals = np.einsum("rmi,ri->rm", A, v)
        feas = np.all(vals <= tol, axis=1) | np.all(vals >= -tol, axis=1)
        out |= full & feas
    if d == 1:
        for sign in (1.0, -1.0):
            out |= np.all(A[:, :, 0] * sign <= tol, axis=1)
    return out


def crofton_probability(C: Cone, D: Cone, cfg: ExperimentConfig, chunk: int = 20_000) -> Report:
    """Probability that ``C ∩ QD ≠ {0}`` against ``2 Σ_{j odd} v_{d+j}(C × D)``.

    For a cone ``K`` that is not a nonzero subspace, the Euler relation gives
    ``Σ_{j odd} v_j(K) = 1/2 · [K ≠ {0}]``; combined with the kinematic
    formula for ``v`` this turns the intersection probability into a sum of
    intrinsic volumes of the product.
    """
    if C.is_subspace() and D.is_subspace():
        raise ValueError("Crofton needs at least one cone that is not a subspace")
    d = C.d
    R = cfg.rotations
    root = nm.Rng(cfg.seed)
    hits = 0
    for i, start in enumerate(range(0, R, chunk)):
        m = min(chunk, R - start)
        Qs = nm.sample_haar_batch(d, m, root.child(i))
        hits += int(nonzero_intersection_batch(C, D, Qs).sum())
    p = hits / R
    lhs_sd = math.sqrt(max(p * (1 - p), 0.0) / R)
    ref = root.child(10**6)
    comps = [component_v(C, cfg.reference_samples, ref.child(0)), component_v(D, cfg.reference_samples, ref.child(1))]
    rhs, rsd = tuple_sum(comps, lambda idx: sum(idx) > d and (sum(idx) - d) % 2 == 1)
    rhs, rsd = 2 * rhs, 2 * rsd
    return Report("crofton", "P{C ∩ QD ≠ {0}} = 2 Σ_{j odd} v_{d+j}(C×D)", p, lhs_sd, rhs, rsd, 1, R, cfg.seed,
                  params={"d": d})


# ---------------------------------------------------------------------------
# Steiner formula


def run_steiner(C: Cone, r: float, cfg: ExperimentConfig, M: ConicSet | None = None) -> Report:
    """Tail of ``‖Π_C(g)‖²`` against the chi-squared mixture of intrinsic volumes.

    With closed-form intrinsic volumes the right-hand side is exact; otherwise
    it is estimated on the same sample stream and the paired difference
    supplies the standard error.
    """
    rng = nm.Rng(cfg.seed)
    n = cfg.samples_per_trial
    ex = ms.exact_v(C) if M is None else None
    if ex is not None:
        lhs = ms.steiner_lhs(C, r, n, rng)
        rhs = ms.steiner_rhs(ex, r)
        return Report("steiner", "P{‖Pi_C(g)‖² ≥ r} = Σ_k P{χ²_k ≥ r} v_k(C)", lhs.mean, lhs.stderr, rhs, 0.0, n, 1,
                      cfg.seed, params={"r": r, "rhs": "exact"}, ambiguous_projections=lhs.degenerate_drops)
    lhs, rhs, sd = ms.steiner_joint(C, r, n, rng, M=M)
    anchor = ("P{Pi_C(g) ∈ M, ‖Pi_C(g)‖² ≥ r} = Σ_k P{χ²_k ≥ r} Phi_k(C, M)" if M is not None
              else "P{‖Pi_C(g)‖² ≥ r} = Σ_k P{χ²_k ≥ r} v_k(C)")
    # the paired standard error is attributed to the left side; the right side shares the stream
    return Report("steiner", anchor, lhs, sd, rhs, 0.0, n, 1, cfg.seed,
                  params={"r": r, "rhs": "estimated", "localized": M is not None})
