import csv
import hashlib
import json
import subprocess
import sys
from types import SimpleNamespace

import numpy as np
import pytest

from pluripot.cli import env_overrides, load_config, main, merge, parse_config
from pluripot.errors import ValidationError

MIXED = """\
# a = 0.3 + cos(2 pi x)
[grid]
n = 1
N = 64
[alpha]
beta = [[0.3]]
q = [[[1, 0], -0.3183098861837907, 0]]
dims = [0]
"""

FLAT = """\
[grid]
N = 32
[alpha]
beta = [[1.0]]
dims = [0]
"""


@pytest.fixture
def cfgs(tmp_path):
    (tmp_path / "mixed.cfg").write_text(MIXED)
    (tmp_path / "flat.cfg").write_text(FLAT)
    return tmp_path


def values(path):
    with open(path) as fh:
        return np.array([float(r["value"]) for r in csv.DictReader(fh)])


def report(out):
    return json.loads((out / "report.json").read_text())


def test_grammar():
    tree = parse_config("a = 1\n[s]\nb = [1, 2]  # note\nc.d = hello\n\n[t.u]\nv = true\n")
    assert tree == {"a": 1, "s": {"b": [1, 2], "c": {"d": "hello"}}, "t": {"u": {"v": True}}}
    with pytest.raises(ValidationError):
        parse_config("[s]\nnot a pair\n")
    with pytest.raises(ValidationError):
        parse_config("a = 1\na.b = 2\n")


def test_environment_and_flag_precedence(cfgs):
    env = {"PLURIPOT__GRID__N": "128", "PLURIPOT__GRID__n": "2", "PLURIPOT__SOLVER__MAX_ITER": "9", "HOME": "/x"}
    assert env_overrides(env) == {"grid": {"N": 128, "n": 2}, "solver": {"max_iter": 9}}
    args = SimpleNamespace(seed=None, threads=None, out=None, flag_alpha=None, flag_N=256, flag_n=None,
                           flag_method=None)
    cfg = load_config("envelope", str(cfgs / "mixed.cfg"), args,
                      environ={"PLURIPOT__SEED": "7", "PLURIPOT__GRID__N": "128"})
    assert (cfg.N, cfg.seed) == (256, 7)
    cfg = load_config("envelope", str(cfgs / "mixed.cfg"), SimpleNamespace(seed=None, threads=None, out=None),
                      environ={"PLURIPOT__GRID__N": "128"})
    assert cfg.N == 128
    assert merge({"a": {"b": 1, "c": 2}}, {"a": {"c": 3}}) == {"a": {"b": 1, "c": 3}}


def test_envelope_of_flat_class_is_zero(cfgs):
    out = cfgs / "flat"
    assert main(["envelope", "--config", str(cfgs / "flat.cfg"), "--out", str(out)]) == 0
    assert np.all(values(out / "phi.csv") == 0.0)
    assert np.all(values(out / "contact.csv") == 1.0)
    rep = report(out)
    assert rep["class_mass"] == 1.0 and rep["envelope"]["contact_fraction"] == 1.0


def test_volume_of_mixed_class(cfgs, capsys):
    out = cfgs / "vol"
    assert main(["volume", "--alpha", str(cfgs / "mixed.cfg"), "--N", "128", "--out", str(out)]) == 0
    printed = float(capsys.readouterr().out.strip().splitlines()[-1])
    assert printed == pytest.approx(0.3, abs=1e-3)
    rep = report(out)
    assert rep["volume"] == printed
    assert rep["provenance"]["grid"] == {"n": 1, "N": 128}


def test_ma_check_consumes_envelope_output(cfgs):
    env, ma = cfgs / "env", cfgs / "ma"
    assert main(["envelope", "--alpha", str(cfgs / "mixed.cfg"), "--out", str(env)]) == 0
    assert main(["ma-check", "--alpha", str(cfgs / "mixed.cfg"), "--phi", str(env / "phi.csv"),
                 "--contact", str(env / "contact.csv"), "--out", str(ma)]) == 0
    rep = report(ma)["ma"]
    assert rep["total_mass"] == pytest.approx(0.3, abs=1e-9)
    assert rep["contact_mass"] == pytest.approx(0.3, abs=1e-3)
    assert not (ma / "phi.csv").exists()


def test_geodesic_slices_and_csv_boundary_data(cfgs):
    (cfgs / "f1.cfg").write_text("[geodesic.f1]\nmodes = [[[1, 0], 0.2864788975654116, 0]]\ndims = [0]\n")
    a, b = cfgs / "geo", cfgs / "geo2"
    assert main(["geodesic", "--alpha", str(cfgs / "flat.cfg"), "--config", str(cfgs / "f1.cfg"), "--Nt", "8",
                 "--out", str(a)]) == 0
    slices = sorted(p.name for p in a.glob("phi_t*.csv"))
    assert slices == [f"phi_t{k:03d}.csv" for k in range(8)]
    rep = report(a)["geodesic"]
    assert rep["boundary_error"] == 0.0 and rep["convexity_violations"] == 0
    assert main(["geodesic", "--alpha", str(cfgs / "flat.cfg"), "--f0", str(a / "phi_t000.csv"),
                 "--f1", str(a / "phi_t007.csv"), "--Nt", "8", "--out", str(b)]) == 0
    assert np.max(np.abs(values(a / "phi_t003.csv") - values(b / "phi_t003.csv"))) < 1e-12


def test_regularize_field_file(cfgs):
    env = cfgs / "env"
    main(["envelope", "--alpha", str(cfgs / "mixed.cfg"), "--out", str(env)])
    out = cfgs / "reg"
    assert main(["regularize", "--alpha", str(cfgs / "mixed.cfg"), "--field", str(env / "phi.csv"),
                 "--t", "0.05", "--c", "0.5", "--delta", "0.2", "--K", "4", "--out", str(out)]) == 0
    rep = report(out)
    assert rep["K"] == 4.0 and rep["t"] == 0.05
    assert set(rep["floor"]) >= {"argmin_histogram", "worst_node", "worst_violation"}
    assert (out / "kiselman.csv").exists() and (out / "rho_t.csv").exists()


def test_supercanonical_report_and_klt_guard(cfgs, capsys):
    out = cfgs / "sc"
    assert main(["supercanonical", "--N", "32", "--gamma", "[[[16, 16], 1.2]]", "--out", str(out)]) == 3
    err = json.loads((out / "error.json").read_text())
    assert err["exit_code"] == 3 and "klt" in err["message"]
    assert main(["supercanonical", "--N", "32", "--gamma", "[[[16, 16], 0.5]]", "--p", "2", "--out",
                 str(out)]) == 0
    assert not (out / "error.json").exists()
    rep = report(out)
    assert set(rep) >= {"constraint_residual", "green_gap", "rho_support", "duality_gap"}
    assert rep["constraint_residual"] < 1e-9


def test_exit_codes(cfgs, monkeypatch):
    assert main(["envelope", "--bogus"]) == 1
    assert main(["envelope", "--config", str(cfgs / "missing.cfg")]) == 1
    assert main(["envelope", "--config", str(cfgs / "flat.cfg"), "--method", "foo", "--out",
                 str(cfgs / "x")]) == 1
    monkeypatch.setenv("PLURIPOT__SOLVER__MAX_ITER", "1")
    out = cfgs / "nc"
    assert main(["envelope", "--config", str(cfgs / "mixed.cfg"), "--method", "disc", "--out", str(out)]) == 2
    assert json.loads((out / "error.json").read_text())["error"] == "ConvergenceError"


def test_manifest_hashes_and_determinism(cfgs):
    runs = [cfgs / "r1", cfgs / "r2"]
    for out in runs:
        assert main(["envelope", "--alpha", str(cfgs / "mixed.cfg"), "--seed", "3", "--out", str(out)]) == 0
    man = json.loads((runs[0] / "manifest.json").read_text())
    assert man["schema_version"] == "1" and man["run"]["seed"] == 3
    for entry in man["files"]:
        data = (runs[0] / entry["path"]).read_bytes()
        assert hashlib.sha256(data).hexdigest() == entry["sha256"]
        assert data == (runs[1] / entry["path"]).read_bytes()


def test_console_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "pluripot.cli", "envelope", "--N", "16", "--out",
                           str(tmp_path / "o")], capture_output=True, text=True, timeout=300)
    assert proc.returncode == 0, proc.stderr
    assert (tmp_path / "o" / "manifest.json").exists()
