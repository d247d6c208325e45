from __future__ import annotations

import json

import numpy as np
import pytest

from channelnl.cli import RunConfig, UsageError, main, panel_sets, parse_mu
from channelnl.core import U_CN, choi_from_unitary, save_choi
from channelnl.polytope import CondDist, local_vertices, pr_box, save_csv


def _json_out(capsys):
    return json.loads(capsys.readouterr().out)


def test_measure_pr_box(tmp_path, capsys):
    p = tmp_path / "pr.csv"
    save_csv(p, pr_box())
    assert main(["measure", "--dist", str(p), "--which", "nu1"]) == 0
    doc = _json_out(capsys)
    assert doc["value"] > 0 and doc["status"] == "optimal"


def test_measure_local_vertex(tmp_path, capsys):
    p = tmp_path / "v.csv"
    save_csv(p, CondDist(local_vertices((2, 2, 2, 2)).vertices[6], (2, 2, 2, 2)))
    assert main(["measure", "--dist", str(p), "--which", "nudiamond"]) == 0
    assert _json_out(capsys)["value"] == pytest.approx(0.0, abs=1e-7)


def test_measure_cnot(tmp_path, capsys):
    p = tmp_path / "cnot.json"
    save_choi(p, choi_from_unitary(U_CN))
    assert main(["measure", "--choi", str(p), "--which", "nu1"]) == 0
    doc = _json_out(capsys)
    assert doc["value"] == pytest.approx(4.0, abs=1e-6)
    assert doc["bound_ge_nu1"] and doc["channel_lower_bound"]["value"] >= doc["value"] - 1e-5
    assert doc["decohered_distance"]["value"] == pytest.approx(doc["value"], abs=1e-5)


def test_measure_cnot_bounds(tmp_path, capsys):
    p = tmp_path / "cnot.json"
    save_choi(p, choi_from_unitary(U_CN))
    assert main(["measure", "--choi", str(p), "--which", "n1-bounds", "--restarts", "2"]) == 0
    doc = _json_out(capsys)
    assert 0 < doc["lower"] <= doc["direct"] + 1e-6 <= doc["upper"] + 2e-6


def test_figure_panel_c(tmp_path, capsys):
    out = tmp_path / "c.csv"
    assert main(["figure", "c", "--mu", "0:1:0.5", "--out", str(out)]) == 0
    lines = out.read_text().splitlines()
    assert lines[0] == "task,mu,set,value,status,seconds"
    assert len(lines) == 1 + 3 * len(panel_sets("c"))
    meta = json.loads((tmp_path / "c.csv.json").read_text())
    assert meta["seed"] == 7 and meta["grid"] == [0.0, 1.0, 0.5]
    cptpp = [l for l in lines[1:] if ",cptpp," in l]
    assert all(abs(float(l.split(",")[3]) - 1) < 1e-7 for l in cptpp)


def test_figure_deterministic(tmp_path):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    args = ["figure", "b", "--mu", "0.9:1:0.1", "--set", "losr1+lda,cptp"]
    assert main(args + ["--out", str(a)]) == 0
    assert main(args + ["--out", str(b)]) == 0
    assert a.read_bytes() == b.read_bytes()


def test_panel_level_substitution():
    assert "losr2+lda" in panel_sets("a", level=2)
    assert "losr1+npa1ab" in panel_sets("a", npa_level="1ab")


def test_verify_prop3(capsys):
    assert main(["verify", "prop3"]) == 0
    doc = _json_out(capsys)
    assert doc["passed"] and doc["suites"]["prop3"]["passed"]


def test_simulate(capsys):
    assert main(["simulate", "prop3"]) == 0
    assert _json_out(capsys)["chsh"] == pytest.approx(2 * np.sqrt(2))
    assert main(["simulate", "classical", "--seed", "3"]) == 0
    assert _json_out(capsys)["needs_communication"] is False


@pytest.mark.parametrize("argv", [
    ["measure"],
    ["measure", "--dist", "x.csv", "--which", "n1-bounds"],
    ["figure", "a", "--mu", "0.9:0.1:0.1"],
    ["figure", "a", "--set", "bogus"],
    ["figure", "a", "--npa-level", "9"],
    ["measure", "--dist", "/nonexistent.csv"],
])
def test_usage_errors(argv):
    assert main(argv) == 2


def test_argparse_errors_exit_2():
    with pytest.raises(SystemExit) as e:
        main(["figure", "z"])
    assert e.value.code == 2


def test_parse_mu():
    assert parse_mu("0.7") == (0.7, 0.7, 1.0)
    assert parse_mu("0:1:0.25") == (0.0, 1.0, 0.25)
    with pytest.raises(UsageError):
        parse_mu("a:b")
    with pytest.raises(UsageError):
        RunConfig("figure", tol=2.0).validate()
