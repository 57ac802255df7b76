import json
from pathlib import Path

import pytest

from conicgeom import cli

ROOT = Path(__file__).resolve().parents[1]
SUITE = ROOT / "suites" / "zoo.json"


def run(capsys, *argv):
    code = cli.main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


@pytest.mark.parametrize("name, f", [
    ("orthant3", [1, 3, 3, 1]),
    ("subspace2in3", [0, 0, 1, 0]),
    ("squarebase3", [1, 4, 4, 1]),
    ("halfspace3", [0, 0, 1, 1]),
])
def test_faces(capsys, name, f):
    code, out, _ = run(capsys, "faces", name, "--json")
    assert code == 0
    assert json.loads(out)["f"] == f
    code, out, _ = run(capsys, "faces", name)
    assert code == 0 and "f=[" in out


def test_zoo_files_parse(zoo):
    assert {"orthant2", "orthant3", "orthant4", "ray2", "halfspace3", "subspace2in3", "squarebase3"} <= set(zoo)
    assert zoo["orthant2_scaled"].contains([2.0, 1.0])


def test_malformed_rational_exit_2(tmp_path, capsys):
    p = tmp_path / "bad.json"
    p.write_text('{\n  "d": 2,\n  "rep": "H",\n  "H": [["1", "0"],\n        ["1/0", "-1"]]\n}\n')
    code, _, err = run(capsys, "faces", str(p))
    assert code == 2
    assert "invalid rational" in err
    assert ":5:10:" in err


def test_bad_json_and_unknown_cone(tmp_path, capsys):
    p = tmp_path / "broken.json"
    p.write_text('{"d": 2,, }')
    code, _, err = run(capsys, "faces", str(p))
    assert code == 2 and ":1:" in err
    code, _, err = run(capsys, "faces", "no_such_cone")
    assert code == 2 and "unknown cone" in err


def test_inconsistent_both_rep(tmp_path, capsys):
    p = tmp_path / "both.json"
    p.write_text(json.dumps({"d": 2, "rep": "both", "H": [["-1", "0"], ["0", "-1"]], "V": [["1", "0"]]}))
    code, _, err = run(capsys, "faces", str(p))
    assert code == 2 and "different cones" in err


def test_size_guard_exit_3(tmp_path, capsys):
    d = 11
    p = tmp_path / "big.json"
    p.write_text(json.dumps({"d": d, "rep": "H",
                             "H": [["-1" if i == j else "0" for j in range(d)] for i in range(d)]}))
    code, _, err = run(capsys, "faces", str(p))
    assert code == 3 and "size guard" in err


def test_ivols_sum_and_exact(capsys):
    code, out, _ = run(capsys, "ivols", "squarebase3", "--n", "3000", "--seed", "4", "--json")
    assert code == 0
    assert json.loads(out)["sum_v"] == "1"
    code, out, _ = run(capsys, "ivols", "halfspace3", "--n", "20000", "--exact", "--json")
    assert code == 0
    rows = json.loads(out)["rows"]
    assert all(abs(r["z"]) <= 4 for r in rows)
    code, out, _ = run(capsys, "ivols", "orthant3", "--n", "2000", "--u")
    assert code == 0 and "u_stderr" in out


def test_ivols_seed_from_env(monkeypatch, capsys):
    monkeypatch.setenv(cli.SEED_ENV, "17")
    _, out, _ = run(capsys, "ivols", "orthant2", "--n", "500", "--json")
    assert json.loads(out)["seed"] == 17
    monkeypatch.setenv(cli.SEED_ENV, "x")
    code, _, err = run(capsys, "ivols", "orthant2", "--n", "500")
    assert code == 2


def test_ivols_rejects_bad_n(capsys):
    code, _, _ = run(capsys, "ivols", "orthant2", "--n", "0")
    assert code == 2


def _write(tmp_path, obj):
    p = tmp_path / "exp.json"
    p.write_text(json.dumps(obj))
    return str(p)


def test_verify_steiner_orthant2(tmp_path, capsys):
    path = _write(tmp_path, {"identity": "steiner", "cones": ["orthant2"], "radii": [1],
                             "samples_per_trial": 50000, "seed": 3})
    code, out, _ = run(capsys, "verify", path)
    assert code == 0
    header, row = out.strip().splitlines()
    assert header.split(",")[:3] == ["identity", "anchor", "params"]
    assert row.startswith("steiner,")


def test_verify_probe_never_fails_exit(tmp_path, capsys):
    path = _write(tmp_path, {"identity": "probe", "cones": ["orthant2", "halfplane2"], "k": [0, 1, 2],
                             "rotations": 60, "samples_per_trial": 2000, "reference_samples": 20000})
    out_json = tmp_path / "out.json"
    code, _, _ = run(capsys, "verify", path, "--json", str(out_json), "--quiet")
    assert code == 0
    reps = json.loads(out_json.read_text())["reports"]
    assert all(r["pass"] is None for r in reps)
    assert all("z" in r for r in reps)


def test_verify_failure_exit_1(tmp_path, capsys):
    # shifting every right-hand side by 1 must turn a passing run into exit code 1
    path = _write(tmp_path, {"identity": "steiner", "cones": ["squarebase3"], "radii": [1],
                             "samples_per_trial": 2000, "seed": 1})
    code, _, _ = run(capsys, "verify", path)
    assert code == 0
    orig = cli.Experiment.run

    def broken(self):
        reps = orig(self)
        for r in reps:
            r.rhs += 1.0
        return reps

    cli.Experiment.run = broken
    try:
        code, _, _ = run(capsys, "verify", path)
    finally:
        cli.Experiment.run = orig
    assert code == 1


@pytest.mark.parametrize("obj, needle", [
    ({"identity": "nope", "cones": ["orthant2"]}, "$.identity"),
    ({"identity": "ell", "cones": []}, "$.cones"),
    ({"identity": "ell", "cones": ["orthant2", "orthant3"]}, "ambient dimension"),
    ({"identity": "general", "cones": ["orthant2"]}, "$.formula"),
    ({"identity": "general", "formula": "X0 &", "cones": ["orthant2"]}, "$.formula"),
    ({"identity": "general-theta", "cones": ["orthant2", "orthant2"]}, "$.formula"),
    ({"identity": "theta", "cones": ["orthant2"], "sets": [{"kind": "bogus"}]}, "$.sets[0]"),
    ({"identity": "ell", "cones": ["orthant2"], "rotations": 0}, "$.rotations"),
    ({"identity": "ell", "cones": ["orthant2"], "transforms": [[["1", "x"], ["0", "1"]]]}, "invalid rational"),
    ({"identity": "crofton", "cones": ["orthant2"]}, "crofton"),
])
def test_verify_config_errors(tmp_path, capsys, obj, needle):
    code, _, err = run(capsys, "verify", _write(tmp_path, obj))
    assert code == 2
    assert needle in err


def test_verify_suite_paths(tmp_path, capsys):
    obj = {"experiments": [{"identity": "ell", "cones": ["orthant2"]}, {"identity": "ell", "cones": [7]}]}
    code, _, err = run(capsys, "verify", _write(tmp_path, obj))
    assert code == 2 and "experiments[1].cones[0]" in err


def test_zoo_suite_all_pass_and_deterministic(tmp_path, capsys):
    a, c = tmp_path / "a.json", tmp_path / "c.json"
    code, _, _ = run(capsys, "verify", str(SUITE), "--json", str(a), "--csv", str(tmp_path / "a.csv"), "--quiet")
    assert code == 0
    data = json.loads(a.read_text())
    idents = {r["identity"].split("-v-")[0] if r["identity"].startswith("kinematic-v-") else r["identity"]
              for r in data["reports"]}
    for ident in cli.IDENTITIES:
        if ident == "boundary":
            assert any(r["identity"].startswith("kinematic-v-boundary") for r in data["reports"])
        else:
            assert ident in idents or any(r["identity"].startswith(ident) for r in data["reports"]), ident
    assert data["manifest"]["pass"] is True
    code, _, _ = run(capsys, "verify", str(SUITE), "--json", str(c), "--threads", "3", "--quiet")
    assert code == 0
    assert json.dumps(json.loads(c.read_text())["reports"]) == json.dumps(data["reports"])
