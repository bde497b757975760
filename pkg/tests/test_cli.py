import csv
import io
import json

import pytest

from toltest.cli import main
from toltest.distributions import dump_pmf, make_uniform, paninski_perturbation, zipf_pmf
from toltest.rng import RngStream


@pytest.fixture
def files(tmp_path):
    q = make_uniform(64)
    far = paninski_perturbation(64, 0.9, RngStream(1))
    paths = {}
    for name, pmf in (("q", q), ("same", q), ("far", far), ("zipf", zipf_pmf(32))):
        paths[name] = tmp_path / f"{name}.txt"
        dump_pmf(pmf, paths[name])
    return paths


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out = capsys.readouterr()
    return code, out.out, out.err


def test_identity_close_and_far(files, capsys):
    code, out, _ = run(capsys, "test-identity", "--p-file", files["same"], "--q-file", files["q"],
                       "--m", 4000, "--seed", 1)
    assert code == 0 and json.loads(out)["decision"] == "close"
    code, out, _ = run(capsys, "test-identity", "--p-file", files["far"], "--q-file", files["q"],
                       "--m", 4000, "--seed", 1)
    assert code == 3 and json.loads(out)["decision"] == "far"


def test_identity_csv(files, capsys):
    code, out, _ = run(capsys, "test-identity", "--p-file", files["far"], "--n", 64, "--m", 4000,
                       "--format", "csv")
    rows = list(csv.DictReader(io.StringIO(out)))
    assert code == 3 and rows[0]["decision"] == "far"


def test_closeness(files, capsys):
    code, out, _ = run(capsys, "test-closeness", "--p-file", files["far"], "--q-file", files["q"],
                       "--m", 4000)
    assert code == 3 and json.loads(out)["decision"] == "far"


def test_io_test_outputs(files, capsys):
    code, out, _ = run(capsys, "io-test", "--p-file", files["zipf"], "--q-file", files["zipf"], "--eps2", 0.5)
    d = json.loads(out)
    assert code in (0, 3) and {"decision", "subtests", "ell"} <= set(d)
    code, out, _ = run(capsys, "io-test", "--p-file", files["zipf"], "--q-file", files["zipf"],
                       "--eps2", 0.5, "--format", "csv")
    rows = list(csv.DictReader(io.StringIO(out)))
    assert rows and {"overall", "kind", "decision"} <= set(rows[0])


def test_simulate_writes_file(tmp_path, capsys):
    out = tmp_path / "sim.csv"
    code, _, _ = run(capsys, "simulate", "--n", 32, "--m", "200,400", "--trials", 10,
                     "--format", "csv", "--out", out)
    rows = list(csv.DictReader(out.open()))
    assert code == 0 and [float(r["m"]) for r in rows] == [200, 400]


def test_phase_diagram_csv(capsys):
    code, out, _ = run(capsys, "phase-diagram", "--n", 16, "--eps1", "0,0.05", "--eps2", "0.5",
                       "--trials", 20, "--format", "csv")
    rows = list(csv.DictReader(io.StringIO(out)))
    assert code == 0 and len(rows) == 2 and rows[0]["label"] == "sqrt(n)/eps2^2"


def test_lower_bound(capsys):
    code, out, _ = run(capsys, "lower-bound", "--n", 64, "--m", 16, "--eps1", 0.05, "--L", 8,
                       "--kappa", 4, "--M", 4)
    d = json.loads(out)
    assert code == 0 and d["moment_gap"] <= 1e-8 and d["certified_tv"] <= d["tv_bound"]
    code, out, _ = run(capsys, "lower-bound", "--n", 64, "--m", 16, "--L", 4, "--format", "csv")
    assert code == 0 and out.splitlines()[0] == "s,w,w_prime"


def test_embed(files, capsys):
    code, out, _ = run(capsys, "embed", "--q-file", files["q"], "--format", "json")
    d = json.loads(out)
    assert code == 0 and d["rat"] == 32 and len(d["pmf"]) == 64
    code, out, _ = run(capsys, "embed", "--q-file", files["q"], "--format", "csv")
    assert code == 0 and len([ln for ln in out.splitlines() if ln.strip()]) == 64


def test_calibrate_failure_is_runtime_error(capsys):
    # on 4 symbols the null and far ratio clouds overlap at every c
    code, _, err = run(capsys, "calibrate", "--n", 4, "--eps2", 0.5, "--trials", 200)
    assert code == 2 and "no threshold" in err


def test_calibrate(capsys):
    code, out, _ = run(capsys, "calibrate", "--n", 200, "--eps2", 0.5, "--trials", 200, "--seed", 7)
    assert code == 0 and 0.2 < json.loads(out)["c"] < 1.0


@pytest.mark.parametrize("argv", [
    ["test-identity", "--p-file", "x.txt", "--eps1", "0.6", "--eps2", "0.5"],
    ["no-such-command"],
    ["simulate", "--trials", "5"],
    ["lower-bound", "--n", "64"],
])
def test_usage_errors(argv, capsys):
    with pytest.raises(SystemExit) as info:
        raise SystemExit(main(argv))
    assert info.value.code == 1


def test_missing_file_is_runtime_error(tmp_path, capsys):
    code, _, err = run(capsys, "test-identity", "--p-file", tmp_path / "nope.txt", "--n", 4)
    assert code == 2 and err


def test_bad_pmf_is_usage_error(tmp_path, capsys):
    bad = tmp_path / "bad.txt"
    bad.write_text("0.5\n0.7\n")
    code, _, _ = run(capsys, "test-identity", "--p-file", bad, "--n", 2)
    assert code == 1
