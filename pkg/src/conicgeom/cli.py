"""Command-line front end: ``conicgeom faces | ivols | verify``.

Exit codes: 0 success, 1 an identity failed, 2 input could not be parsed or
validated, 3 a size guard tripped.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import math
import os
import sys
import time
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

from . import __version__
from . import borel as b
from . import kinematics as km
from . import measures as ms
from . import numerics as nm
from .cone import Cone, SizeGuard
from .faces import ell_vector

EXIT_OK, EXIT_FAIL, EXIT_PARSE, EXIT_SIZE = 0, 1, 2, 3
SEED_ENV = "CONICGEOM_SEED"

IDENTITIES = ("kinematic-u", "kinematic-v", "general", "general-theta", "theta", "polar-theta", "boundary", "ell",
              "projection", "steiner", "crofton", "probe")


class ConfigError(ValueError):
    """Invalid input file; the message carries a location (line/col or a key path)."""


# ---------------------------------------------------------------------------
# cone files


def _locate(text: str, token: str) -> tuple[int, int]:
    pos = text.find(json.dumps(token))
    if pos < 0:
        pos = text.find(token)
    if pos < 0:
        return 0, 0
    line = text.count("\n", 0, pos) + 1
    col = pos - (text.rfind("\n", 0, pos) + 1) + 1
    return line, col


def _load_json(path: str | Path):
    text = Path(path).read_text()
    try:
        return json.loads(text), text
    except json.JSONDecodeError as err:
        raise ConfigError(f"{path}:{err.lineno}:{err.colno}: {err.msg}") from None


def _rational_matrix(rows, where: str, text: str, src: str, width: int | None = None) -> np.ndarray:
    if not isinstance(rows, list) or not all(isinstance(r, list) for r in rows):
        raise ConfigError(f"{src}: {where} must be a list of rows")
    out = []
    for i, row in enumerate(rows):
        if width is not None and len(row) != width:
            raise ConfigError(f"{src}: {where}[{i}] has {len(row)} entries, expected {width}")
        parsed = []
        for v in row:
            try:
                parsed.append(nm.parse_rational(v))
            except nm.InvalidRational:
                line, col = _locate(text, str(v))
                raise ConfigError(f"{src}:{line}:{col}: invalid rational {v!r} in {where}") from None
        out.append(parsed)
    arr = np.empty((len(out), width or (len(out[0]) if out else 0)), dtype=object)
    for i, row in enumerate(out):
        arr[i, :] = row
    return arr


def cone_from_dict(obj: dict, text: str = "", src: str = "<cone>") -> Cone:
    """Build a cone from a ConeFile mapping (rational strings, generators as rows)."""
    if not isinstance(obj, dict):
        raise ConfigError(f"{src}: cone definition must be an object")
    try:
        d = int(obj["d"])
        rep = obj.get("rep", "H" if "H" in obj else "V")
    except (KeyError, TypeError, ValueError):
        raise ConfigError(f"{src}: missing or invalid 'd'") from None
    if d < 1:
        raise ConfigError(f"{src}: 'd' must be >= 1")
    if rep not in ("H", "V", "both"):
        raise ConfigError(f"{src}: 'rep' must be one of H, V, both")
    name = obj.get("name")
    C = Cv = None
    if rep in ("H", "both"):
        if "H" not in obj:
            raise ConfigError(f"{src}: rep {rep} requires 'H'")
        C = Cone.from_halfspaces(_rational_matrix(obj["H"], "H", text, src, d).reshape(-1, d), d, name=name)
    if rep in ("V", "both"):
        if "V" not in obj:
            raise ConfigError(f"{src}: rep {rep} requires 'V'")
        Cv = Cone.from_generators(_rational_matrix(obj["V"], "V", text, src, d).reshape(-1, d).T, d, name=name)
    if C is not None and Cv is not None and not C.equals(Cv):
        raise ConfigError(f"{src}: H and V describe different cones")
    C = C if C is not None else Cv
    if "transform" in obj:
        T = _rational_matrix(obj["transform"], "transform", text, src, d)
        if T.shape != (d, d) or nm.rank(T) != d:
            raise ConfigError(f"{src}: transform must be a nonsingular {d}x{d} matrix")
        C = C.linear_image(T)
        C.name = name
    return C


def zoo_names() -> list[str]:
    return sorted(p.name[:-5] for p in resources.files("conicgeom").joinpath("zoo").iterdir()
                  if p.name.endswith(".json"))


def load_cone(ref: str | dict, where: str = "cone", base: Path | None = None) -> Cone:
    """A cone from a zoo name, a file path, or an inline ConeFile mapping."""
    if isinstance(ref, dict):
        return cone_from_dict(ref, json.dumps(ref), where)
    if not isinstance(ref, str):
        raise ConfigError(f"{where}: expected a zoo name, a path or an object")
    candidates = [Path(ref)]
    if base is not None:
        candidates.append(base / ref)
    for p in candidates:
        if p.is_file():
            obj, text = _load_json(p)
            return cone_from_dict(obj, text, str(p))
    zoo = resources.files("conicgeom").joinpath("zoo", f"{ref}.json")
    if zoo.is_file():
        text = zoo.read_text()
        return cone_from_dict(json.loads(text), text, f"zoo/{ref}.json")
    raise ConfigError(f"{where}: unknown cone {ref!r} (zoo: {', '.join(zoo_names())})")


# ---------------------------------------------------------------------------
# sets


def _vec(v, where: str) -> np.ndarray:
    try:
        return np.array([float(nm.parse_rational(x)) if isinstance(x, str) else float(x) for x in v])
    except (TypeError, ValueError):
        raise ConfigError(f"{where}: expected a numeric vector") from None


def conic_set(spec, d: int, cone: Cone | None, where: str) -> b.ConicSet:
    if spec in (None, "full"):
        return b.Full(d)
    if spec == "zero":
        return b.ZeroOnly(d)
    if not isinstance(spec, dict) or "kind" not in spec:
        raise ConfigError(f"{where}: set must be 'full', 'zero' or an object with 'kind'")
    kind = spec["kind"]
    if kind == "full":
        return b.Full(d)
    if kind == "zero":
        return b.ZeroOnly(d)
    if kind == "star":
        return b.Star(d)
    if kind == "cap":
        axis = _vec(spec.get("axis", []), f"{where}.axis")
        if axis.shape != (d,):
            raise ConfigError(f"{where}.axis: expected length {d}")
        return b.Cap(axis, float(spec.get("cos", 0.9)))
    if kind == "cone":
        if spec.get("cone") in (None, "self"):
            if cone is None:
                raise ConfigError(f"{where}: no component cone to refer to")
            return b.FromCone(cone.astype_float())
        return b.FromCone(load_cone(spec["cone"], f"{where}.cone").astype_float())
    if kind in ("union", "intersection"):
        parts = spec.get("parts")
        if not isinstance(parts, list) or not parts:
            raise ConfigError(f"{where}.parts: expected a non-empty list")
        sets = [conic_set(p, d, cone, f"{where}.parts[{i}]") for i, p in enumerate(parts)]
        return b.Union(sets) if kind == "union" else b.Intersection(sets)
    if kind == "complement":
        return b.Complement(conic_set(spec.get("of"), d, cone, f"{where}.of"))
    raise ConfigError(f"{where}: unknown set kind {kind!r}")


def biconic_set(spec, d: int, cone: Cone, where: str) -> b.BiconicSet:
    if spec in (None, "full"):
        return b.BiconicFull(d)
    if spec == "lift":
        return b.Lift(cone.astype_float())
    if not isinstance(spec, dict) or "kind" not in spec:
        raise ConfigError(f"{where}: biconic set must be 'full', 'lift' or an object with 'kind'")
    kind = spec["kind"]
    if kind == "full":
        return b.BiconicFull(d)
    if kind == "lift":
        return b.Lift(cone.astype_float())
    if kind == "product":
        first = conic_set(spec.get("first"), d, cone, f"{where}.first")
        second = conic_set(spec.get("second"), d, cone, f"{where}.second")
        M = b.ProductForm(first, second)
        return M & b.Lift(cone.astype_float()) if spec.get("on_lift", True) else M
    if kind == "intersection":
        parts = spec.get("parts")
        if not isinstance(parts, list) or not parts:
            raise ConfigError(f"{where}.parts: expected a non-empty list")
        out = biconic_set(parts[0], d, cone, f"{where}.parts[0]")
        for i, p in enumerate(parts[1:], 1):
            out = out & biconic_set(p, d, cone, f"{where}.parts[{i}]")
        return out
    raise ConfigError(f"{where}: unknown biconic set kind {kind!r}")


# ---------------------------------------------------------------------------
# experiments


@dataclass
class Experiment:
    identity: str
    config: km.ExperimentConfig
    options: dict
    where: str

    def run(self) -> list[km.Report]:
        cfg, opt = self.config, self.options
        ident = self.identity
        if ident == "kinematic-u":
            out = km.run_kinematic_u(cfg)
        elif ident == "kinematic-v":
            out = km.run_kinematic_v(cfg, opt.get("variant", "intersection"))
        elif ident == "boundary":
            out = km.run_kinematic_v(cfg, "boundary-sum" if opt.get("sum") else "boundary")
        elif ident in ("general", "probe"):
            F = km.parse_formula(opt["formula"]) if opt.get("formula") else None
            out = km.counterexample_probe(cfg, F) if ident == "probe" else km.run_general_formula(F, cfg)
        elif ident == "general-theta":
            out = km.run_general_formula_theta(km.parse_formula(opt["formula"]), cfg)
        elif ident in ("theta", "polar-theta"):
            out = km.run_kinematic_theta(cfg, polar=ident == "polar-theta")
        elif ident == "ell":
            out = km.run_ell_kinematic(cfg)
        elif ident == "projection":
            out = km.run_projection_formula(cfg.cones[0], opt.get("set"), cfg.codim, cfg)
        elif ident == "steiner":
            out = [km.run_steiner(cfg.cones[0], float(r), cfg, opt.get("set")) for r in cfg.radii]
        elif ident == "crofton":
            out = km.crofton_probability(cfg.cones[0], cfg.cones[1], cfg)
        else:  # pragma: no cover - validated on load
            raise ConfigError(f"{self.where}: unknown identity {ident!r}")
        return out if isinstance(out, list) else [out]


def _int(obj: dict, key: str, default, where: str, minimum: int = 0):
    v = obj.get(key, default)
    if isinstance(v, bool) or not isinstance(v, int) or v < minimum:
        raise ConfigError(f"{where}.{key}: expected an integer >= {minimum}")
    return v


def build_experiment(obj: dict, where: str, seed: int, threads: int, base: Path | None = None) -> Experiment:
    if not isinstance(obj, dict):
        raise ConfigError(f"{where}: experiment must be an object")
    ident = obj.get("identity")
    if ident not in IDENTITIES:
        raise ConfigError(f"{where}.identity: expected one of {', '.join(IDENTITIES)}, got {ident!r}")
    refs = obj.get("cones")
    if not isinstance(refs, list) or not refs:
        raise ConfigError(f"{where}.cones: expected a non-empty list")
    cones = [load_cone(r, f"{where}.cones[{i}]", base) for i, r in enumerate(refs)]
    d = cones[0].d
    if any(c.d != d for c in cones):
        raise ConfigError(f"{where}.cones: cones must share the ambient dimension")
    if ident == "crofton" and len(cones) != 2:
        raise ConfigError(f"{where}.cones: crofton needs exactly two cones")
    transforms = None
    if obj.get("transforms") is not None:
        ts = obj["transforms"]
        if not isinstance(ts, list) or len(ts) != len(cones):
            raise ConfigError(f"{where}.transforms: expected one entry per cone")
        transforms = []
        for i, T in enumerate(ts):
            if T is None:
                transforms.append(np.eye(d))
                continue
            Tm = _rational_matrix(T, f"transforms[{i}]", json.dumps(T), where, d)
            if Tm.shape != (d, d):
                raise ConfigError(f"{where}.transforms[{i}]: expected a {d}x{d} matrix")
            transforms.append(nm.to_float(Tm))
    k = obj.get("k", 1)
    if isinstance(k, bool) or not (isinstance(k, int) or (isinstance(k, list) and all(isinstance(x, int) for x in k))):
        raise ConfigError(f"{where}.k: expected an integer or a list of integers")
    options: dict = {}
    sets = None
    if ident in ("theta", "polar-theta", "general-theta"):
        specs = obj.get("sets", ["full"] * len(cones))
        if not isinstance(specs, list) or len(specs) != len(cones):
            raise ConfigError(f"{where}.sets: expected one biconic set per cone")
        sets = [biconic_set(s, d, c, f"{where}.sets[{i}]") for i, (s, c) in enumerate(zip(specs, cones))]
    elif ident in ("projection", "steiner") and obj.get("set") not in (None, "full"):
        options["set"] = conic_set(obj["set"], d, cones[0], f"{where}.set")
    if ident == "kinematic-v":
        options["variant"] = obj.get("variant", "intersection")
        if options["variant"] not in ("intersection", "polar"):
            raise ConfigError(f"{where}.variant: expected 'intersection' or 'polar'")
    if ident == "boundary":
        options["sum"] = bool(obj.get("sum", False))
    if ident in ("general", "general-theta", "probe"):
        options["formula"] = obj.get("formula")
        if ident != "probe" and not options["formula"]:
            raise ConfigError(f"{where}.formula: required for the {ident} identity")
        if options["formula"]:
            try:
                km.parse_formula(options["formula"])
            except ValueError as err:
                raise ConfigError(f"{where}.formula: {err}") from None
    radii = obj.get("radii", [0.5, 1.0, 2.0])
    if not isinstance(radii, list) or not all(isinstance(r, (int, float)) and r >= 0 for r in radii):
        raise ConfigError(f"{where}.radii: expected a list of nonnegative numbers")
    try:
        cfg = km.ExperimentConfig(
            cones, identity=ident, k=k, transforms=transforms, sets=sets,
            rotations=_int(obj, "rotations", 200, where, 1),
            samples_per_trial=_int(obj, "samples_per_trial", 50_000, where, 1),
            seed=_int(obj, "seed", seed, where),
            reference_samples=_int(obj, "reference_samples", 1_000_000, where, 1),
            threads=threads, codim=_int(obj, "codim", 1, where), radii=radii,
            allow_general_transforms=bool(obj.get("allow_general_transforms", False)))
    except ValueError as err:
        raise ConfigError(f"{where}: {err}") from None
    return Experiment(ident, cfg, options, where)


def load_suite(path: str | Path, seed: int | None, threads: int) -> tuple[list[Experiment], dict]:
    """Experiments from a config file holding one experiment or ``{"experiments": [...]}``."""
    obj, _ = _load_json(path)
    if not isinstance(obj, dict):
        raise ConfigError(f"{path}: top level must be an object")
    base_seed = seed if seed is not None else obj.get("seed", default_seed())
    if isinstance(base_seed, bool) or not isinstance(base_seed, int) or base_seed < 0:
        raise ConfigError("seed: expected a nonnegative integer")
    base = Path(path).parent
    if "experiments" in obj:
        items = obj["experiments"]
        if not isinstance(items, list):
            raise ConfigError("experiments: expected a list")
        where = [f"experiments[{i}]" for i in range(len(items))]
    else:
        items, where = [obj], ["$"]
    exps = []
    for item, w in zip(items, where):
        if seed is not None and isinstance(item, dict):
            item = {**item, "seed": seed}
        exps.append(build_experiment(item, w, base_seed, threads, base))
    return exps, obj


def default_seed() -> int:
    raw = os.environ.get(SEED_ENV)
    if raw is None:
        return 0
    try:
        return int(raw)
    except ValueError:
        raise ConfigError(f"{SEED_ENV}: expected an integer, got {raw!r}") from None


# ---------------------------------------------------------------------------
# commands


def _fmt_vec(v) -> str:
    return "[" + ",".join(str(int(x)) for x in v) + "]"


def cmd_faces(args) -> int:
    C = load_cone(args.cone)
    lat = C.lattice
    f = lat.f_vector()
    ell = ell_vector(C)
    payload = {
        "name": C.name, "d": C.d, "f": [int(x) for x in f], "ell": [int(x) for x in ell],
        "faces": [{"id": fc.id, "dim": fc.dim, "tight": sorted(int(i) for i in fc.tight_set),
                   "generators": sorted(int(j) for j in fc.generators)} for fc in lat],
    }
    if args.json:
        print(json.dumps(payload, sort_keys=True))
        return EXIT_OK
    print(f"cone {C.name or args.cone}  d={C.d}  f={_fmt_vec(f)}  ell={_fmt_vec(ell)}")
    print(f"{'id':>3} {'dim':>3}  tight rows        generators")
    for fc in payload["faces"]:
        print(f"{fc['id']:>3} {fc['dim']:>3}  {str(fc['tight']):<17} {fc['generators']}")
    return EXIT_OK


def cmd_ivols(args) -> int:
    if args.n < 1:
        raise ConfigError("--n must be >= 1")
    C = load_cone(args.cone)
    seed = args.seed if args.seed is not None else default_seed()
    rng = nm.Rng(seed)
    v = ms.estimate_v(C, args.n, rng.child(0))
    rows = [{"k": k, "v": float(v.means[k]), "v_stderr": float(v.stderrs[k])} for k in range(C.d + 1)]
    status = EXIT_OK
    if args.exact:
        ex = ms.exact_v(C)
        for r in rows:
            if ex is None:
                r["v_exact"] = None
                r["z"] = None
                continue
            r["v_exact"] = float(ex[r["k"]])
            diff = r["v"] - r["v_exact"]
            z = 0.0 if r["v_stderr"] == 0 and diff == 0 else (diff / r["v_stderr"] if r["v_stderr"] else math.inf)
            r["z"] = z
            if abs(z) > 4:
                status = EXIT_FAIL
    if args.u:
        u = ms.estimate_u(C, max(1, args.n // max(1, len(C.lattice))), rng.child(1))
        for r in rows:
            r["u"] = float(u.means[r["k"]])
            r["u_stderr"] = float(u.stderrs[r["k"]])
    payload = {"name": C.name, "d": C.d, "n": args.n, "seed": seed,
               "sum_v": str(sum(v.fractions())), "degenerate_drops": v.degenerate_drops, "rows": rows}
    if args.json:
        print(json.dumps(payload, sort_keys=True))
        return status
    cols = list(rows[0].keys())
    print(f"cone {C.name or args.cone}  d={C.d}  n={args.n}  seed={seed}  sum(v)={payload['sum_v']}")
    print("  ".join(f"{c:>10}" for c in cols))
    for r in rows:
        print("  ".join(f"{'-':>10}" if r[c] is None else (f"{r[c]:>10d}" if c == "k" else f"{r[c]:>10.6f}")
                        for c in cols))
    return status


def reports_payload(reports: list[km.Report]) -> str:
    """The deterministic part of a verify run: reports only, canonical JSON."""
    return json.dumps([r.to_dict() for r in reports], sort_keys=True, indent=1)


def cmd_verify(args) -> int:
    exps, raw = load_suite(args.config, args.seed, args.threads)
    t0 = time.perf_counter()
    reports: list[km.Report] = []
    for exp in exps:
        for rep in exp.run():
            reports.append(rep)
            if not args.quiet:
                print(rep.summary(), file=sys.stderr)
    gating = [r for r in reports if not r.informational]
    n_fail = sum(not r.passed for r in gating)
    manifest = {
        "command": "verify",
        "config": str(args.config),
        "config_hash": hashlib.sha256(json.dumps(raw, sort_keys=True).encode()).hexdigest(),
        "seed": exps[0].config.seed if exps else None,
        "version": __version__,
        "seconds": round(time.perf_counter() - t0, 3),
        "reports": len(reports),
        "failed": n_fail,
        "pass": n_fail == 0,
    }
    payload = reports_payload(reports)
    if args.json:
        Path(args.json).write_text(json.dumps({"manifest": manifest, "reports": json.loads(payload)},
                                              sort_keys=True, indent=1) + "\n")
    if args.csv:
        Path(args.csv).write_text(km.reports_to_csv(reports))
    if not args.json and not args.csv:
        sys.stdout.write(km.reports_to_csv(reports))
    print(f"{len(gating) - n_fail}/{len(gating)} identities passed"
          f" ({len(reports) - len(gating)} informational)", file=sys.stderr)
    return EXIT_OK if n_fail == 0 else EXIT_FAIL


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="conicgeom", description="Polyhedral cone geometry and kinematic identities.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    f = sub.add_parser("faces", help="face lattice, f- and lineality vectors")
    f.add_argument("cone", help="cone file path or zoo name")
    f.add_argument("--json", action="store_true", help="print JSON instead of a table")
    f.set_defaults(func=cmd_faces)

    v = sub.add_parser("ivols", help="Monte Carlo intrinsic volumes")
    v.add_argument("cone", help="cone file path or zoo name")
    v.add_argument("--n", type=int, default=100_000, help="number of Gaussian samples")
    v.add_argument("--seed", type=int, default=None, help=f"seed (default ${SEED_ENV} or 0)")
    v.add_argument("--exact", action="store_true", help="add closed-form values and z-scores when available")
    v.add_argument("--u", action="store_true", help="also estimate the u-vector")
    v.add_argument("--json", action="store_true", help="print JSON instead of a table")
    v.set_defaults(func=cmd_ivols)

    r = sub.add_parser("verify", help="run identity experiments from a config file")
    r.add_argument("config", help="experiment or suite JSON file")
    r.add_argument("--seed", type=int, default=None, help=f"override every seed (default: config, ${SEED_ENV}, 0)")
    r.add_argument("--threads", type=int, default=1, help="worker threads for trials")
    r.add_argument("--csv", default=None, help="write the report CSV here")
    r.add_argument("--json", default=None, help="write manifest and reports JSON here")
    r.add_argument("--quiet", action="store_true", help="no per-report lines on stderr")
    r.set_defaults(func=cmd_verify)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, nm.InvalidRational, km.NotReadOnce, km.NonOrthogonalTransform) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_PARSE
    except SizeGuard as err:
        print(f"error: size guard: {err}", file=sys.stderr)
        return EXIT_SIZE


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
