import io
import json
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from cfs_lab import cli
from cfs_lab import operator_core as oc
from systems import random_measure

TETRA = Path(__file__).resolve().parents[1] / "examples" / "data" / "tetrahedron.json"


def run(*argv):
    out, err = io.StringIO(), io.StringIO()
    code = cli.main(list(argv), out, err)
    return code, out.getvalue(), err.getvalue()


def error_of(err):
    lines = err.strip().splitlines()
    assert len(lines) == 1
    return json.loads(lines[0])


def test_system_json_round_trip(rng, tmp_path):
    m = random_measure(rng, 3, 3)
    path = tmp_path / "sys.json"
    cli.save_system(m, path)
    back = cli.load_system(path)
    assert back.spin_dim == m.spin_dim
    for a, b in zip(back.points, m.points):
        np.testing.assert_array_equal(a.entries, b.entries)
    np.testing.assert_array_equal(back.weights, m.weights)
    assert oc.action(back).action_S == oc.action(m).action_S


def test_action_eval_on_tetrahedron():
    code, out, _ = run("action-eval", "--input", str(TETRA))
    assert code == 0
    rep = json.loads(out)
    assert rep["S"] == pytest.approx(4.0, abs=1e-10)
    assert rep["T"] == pytest.approx(12.0, abs=1e-10)


def test_malformed_json_reports_position(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text('{"spin_dim": 1,\n  "points": [1, }\n')
    code, out, err = run("action-eval", "--input", str(bad))
    assert code == 2 and out == ""
    e = error_of(err)
    assert e["error"] == "ParseError"
    assert e["line"] == 2 and e["column"] > 1


def test_missing_input():
    code, _, err = run("action-eval", "--input", "/nonexistent/system.json")
    assert code == 2
    assert error_of(err)["error"] == "InputNotFound"


def test_dimension_mismatch_in_system(tmp_path):
    p = tmp_path / "s.json"
    p.write_text(json.dumps({"spin_dim": 1, "particle_dim": 2,
                             "points": [{"weight": 1, "matrix": [[1, 0]]}]}))
    code, _, err = run("action-eval", "--input", str(p))
    assert code == 2
    assert error_of(err)["error"] == "DimensionMismatch"


def test_unwritable_output_directory(tmp_path):
    code, _, err = run("mink-correlate", "--xi", "2,1,0,0", "--out", str(tmp_path / "missing"))
    assert code == 2
    assert error_of(err)["error"] == "OutputPathUnwritable"


@pytest.mark.parametrize("argv", [
    ("sphere-minimize", "--tau", "1.5", "--m", "0"),
    ("sphere-minimize", "--tau", "0.5", "--m", "4"),
    ("sweep", "--tau", "1.2,x", "--m", "2"),
    ("mink-correlate", "--xi", "1,2"),
    ("geometry-check", "--pair", "0,1"),
    ("no-such-command",),
])
def test_invalid_options(argv):
    code, out, err = run(*argv)
    assert code == 2 and out == ""
    assert error_of(err)["error"] == "InvalidOptions"


def test_light_cone_separation_is_rejected():
    code, _, err = run("mink-correlate", "--xi", "1,1,0,0")
    assert code == 2
    assert error_of(err)["error"] == "NearLightCone"


def test_mink_correlate_classes(tmp_path):
    code, out, _ = run("mink-correlate", "--xi", "2,1,0,0", "--out", str(tmp_path))
    assert code == 0
    assert json.loads(out)["written"] == [str(tmp_path / "mink_correlate.json")]
    rep = json.loads((tmp_path / "mink_correlate.json").read_text())
    assert rep["class"] == "Timelike"
    code, out, _ = run("mink-correlate", "--xi", "1,2,0,0")
    assert json.loads(out)["class"] == "Spacelike"


def test_sphere_minimize_writes_json_and_csv(tmp_path):
    code, _, _ = run("sphere-minimize", "--tau", "1.3", "--m", "3", "--restarts", "1",
                     "--out", str(tmp_path))
    assert code == 0
    rep = json.loads((tmp_path / "sphere_minimize.json").read_text())
    assert rep["action"] == pytest.approx(min(rep["restart_actions"]))
    lines = (tmp_path / "sphere_minimize.csv").read_text().splitlines()
    assert len(lines) == 2
    assert lines[1].startswith("1.3,3,0,")


def test_sweep_is_sorted_and_reproducible(tmp_path):
    argv = ("sweep", "--tau", "1.5,1,1.2", "--m", "3,2,1", "--restarts", "1", "--seed", "5")
    a = tmp_path / "a"
    b = tmp_path / "b"
    a.mkdir()
    b.mkdir()
    assert run(*argv, "--out", str(a))[0] == 0
    assert run(*argv, "--out", str(b))[0] == 0
    ta, tb = (a / "sweep.csv").read_bytes(), (b / "sweep.csv").read_bytes()
    assert ta == tb
    rows = ta.decode().splitlines()
    assert rows[0] == "tau,m,seed,min_action,support_size,constraint_T"
    keys = [(float(r.split(",")[0]), int(r.split(",")[1])) for r in rows[1:]]
    assert len(keys) == 9 and keys == sorted(keys)
    code, out, _ = run(*argv, "--format", "json")
    data = json.loads(out)
    assert [(r["tau"], r["m"]) for r in data] == keys


def test_geometry_check_vacuum_report():
    code, out, _ = run("geometry-check", "--events", "0,0,0,0;1,0.3,0,0;2.1,0.5,0.3,0",
                       "--pair", "0,1", "--triple", "0,1,2", "--chain", "0,1,2")
    assert code == 0
    rep = json.loads(out)
    pair = rep["pairs"][0]
    assert pair["spin_connectable"] and max(pair["residuals"].values()) <= 1e-8
    assert pair["phase"] == pytest.approx(-pair["phase_reverse"])
    assert rep["triples"][0]["curvature_deviation"] <= 1e-8
    assert rep["chains"][0]["metric_deviation_from_identity"] <= 1e-8


def test_geometry_check_records_unconnectable_pair():
    code, out, _ = run("geometry-check", "--events", "0,0,0,0;1,0,0,0", "--pair", "0,1")
    assert code == 0
    pair = json.loads(out)["pairs"][0]
    assert not pair["spin_connectable"]
    assert pair["error"]["reason"] == "NotGenericallySeparated"


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "cfs_lab", "mink-correlate", "--xi", "1,2,0,0"],
                          capture_output=True, text=True, check=False)
    assert proc.returncode == 0
    assert json.loads(proc.stdout)["class"] == "Spacelike"
