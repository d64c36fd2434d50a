import csv
import json
import math
import subprocess
import sys

import numpy as np
import pytest

from incstab.cli import canonical_json, run_command

SCHEMA_KEYS = {"verdict", "rate_estimate", "margin", "violations", "bracket", "flf", "config",
               "tool_version"}


@pytest.fixture
def files(tmp_path):
    def write(name, text):
        p = tmp_path / name
        p.write_text(text)
        return str(p)

    return {
        "damped": write("damped.sys", 'name = "damped"\nstate = ["x1"]\nf = ["-x1 - x1^3"]\n'
                        "domain.lower = [-2]\ndomain.upper = [2]\n"),
        "rotation": write("rotation.sys", 'state = ["x1", "x2"]\nf = ["x2", "-x1"]\n'),
        "decay": write("decay.sys", 'state = ["x"]\nf = ["-x"]\n'),
        "periodic": write("periodic.sys", 'state = ["x"]\nf = ["-(2 + sin(t))*x"]\n'),
        "broken": write("broken.sys", 'state = ["x"]\nf = ["-x +"]\n'),
        "blowup": write("blowup.sys", 'state = ["x"]\nf = ["x^2"]\n'),
        "P": write("P.json", "[[1.0]]"),
        "Q": write("Q.json", "[[2.0]]"),
        "dir": tmp_path,
    }


def _report(files, argv):
    out = str(files["dir"] / "report.json")
    code = run_command(argv + ["--out", out])
    with open(out, encoding="utf-8") as fh:
        text = fh.read()
    return code, text, json.loads(text)


class TestExitCodes:
    def test_unknown_option_is_usage(self, capsys):
        assert run_command(["check", "--bogus"]) == 2
        assert "usage" in capsys.readouterr().err

    def test_missing_file(self, files):
        assert run_command(["check", "--system", str(files["dir"] / "nope.sys"),
                            "--mode", "demidovich"]) == 3

    def test_parse_error(self, files, capsys):
        assert run_command(["check", "--system", files["broken"], "--mode", "demidovich"]) == 3
        assert "error" in capsys.readouterr().err

    def test_numerical_failure(self, files):
        code = run_command(["simulate", "--system", files["blowup"], "--x0", "1", "--tf", "5",
                            "--out", str(files["dir"] / "t.csv")])
        assert code == 4

    def test_inconclusive_verdict_exits_zero(self, files):
        code, _, rep = _report(files, ["check", "--system", files["rotation"], "--mode",
                                       "demidovich", "--rate", "0.5", "--samples", "10"])
        assert code == 0 and rep["verdict"] == "inconclusive"

    def test_fail_on_verdict(self, files):
        code, _, _ = _report(files, ["check", "--system", files["rotation"], "--mode",
                                     "demidovich", "--rate", "0.5", "--samples", "10",
                                     "--fail-on-verdict"])
        assert code == 1

    def test_unwritable_output(self, files):
        code = run_command(["check", "--system", files["damped"], "--mode", "demidovich",
                            "--out", str(files["dir"] / "missing" / "r.json")])
        assert code == 3


class TestCheck:
    def test_demidovich_damped(self, files):
        code, _, rep = _report(files, ["check", "--system", files["damped"], "--mode",
                                       "demidovich", "--rate", "1.0"])
        assert code == 0 and rep["verdict"] == "IES" and rep["margin"] <= 0
        assert SCHEMA_KEYS <= rep.keys() and rep["violations"] == []
        assert set(rep["rate_estimate"]) == {"K", "lambda", "r_squared"}

    def test_empirical_rotation(self, files):
        _, _, rep = _report(files, ["check", "--system", files["rotation"], "--mode", "empirical"])
        assert rep["verdict"] == "IS" and abs(rep["rate_estimate"]["lambda"]) < 0.01

    def test_flf_finite(self, files):
        _, _, rep = _report(files, ["check", "--system", files["periodic"], "--mode", "flf",
                                    "--rate", "2", "--samples", "10", "--T", "3"])
        flf = rep["flf"]
        assert {"kind", "p", "delta", "c1", "c2", "k"} <= flf.keys()
        assert flf["kind"] == "integral-finite" and rep["verdict"] == "IES"

    def test_flf_delta_auto(self, files):
        _, _, rep = _report(files, ["check", "--system", files["decay"], "--mode", "flf",
                                    "--rate", "1", "--K", "2", "--delta", "auto",
                                    "--samples", "5"])
        assert rep["flf"]["delta"] == pytest.approx(max(1.0, math.log(8) / 2), rel=1e-11)

    def test_matrix_measure(self, files):
        _, _, rep = _report(files, ["check", "--system", files["damped"], "--mode",
                                    "matrix-measure", "--norm", "inf"])
        assert rep["verdict"] == "IES"

    def test_config_echo(self, files):
        _, _, rep = _report(files, ["check", "--system", files["damped"], "--mode",
                                    "demidovich", "--seed", "3", "--samples", "17"])
        run = rep["config"]["run"]
        for key in ("seed", "samples", "rate", "rtol", "atol", "mode", "p", "delta", "tol"):
            assert key in run
        assert run["seed"] == 3 and run["samples"] == 17

    def test_curves_exact_decay(self, files):
        curves = str(files["dir"] / "c.csv")
        _report(files, ["check", "--system", files["decay"], "--mode", "empirical",
                        "--T", "3", "--curves", curves])
        with open(curves, newline="") as fh:
            rows = list(csv.DictReader(fh))
        assert list(rows[0]) == ["t", "series_id", "value"]
        by = {}
        for r in rows:
            by.setdefault(r["series_id"], []).append((float(r["t"]), float(r["value"])))
        assert len(by) >= 10
        for pts in by.values():
            t, d = np.array(pts).T
            np.testing.assert_allclose(d, d[0] * np.exp(-(t - t[0])), rtol=1e-5)

    def test_deterministic(self, files):
        argv = ["check", "--system", files["damped"], "--mode", "empirical", "--seed", "7",
                "--T", "3"]
        _, a, _ = _report(files, argv)
        _, b, _ = _report(files, argv)
        assert a == b

    def test_round_trip(self, files):
        _, text, rep = _report(files, ["check", "--system", files["damped"], "--mode",
                                       "empirical", "--T", "3"])
        assert canonical_json(json.loads(text)) == text
        assert text.endswith("\n") and not text.endswith("\n\n")


class TestSimulate:
    def test_plain(self, files):
        out = str(files["dir"] / "traj.csv")
        assert run_command(["simulate", "--system", files["decay"], "--x0", "1", "--t0", "0",
                            "--tf", "2", "--points", "5", "--out", out]) == 0
        rows = list(csv.DictReader(open(out, newline="")))
        vals = [float(r["value"]) for r in rows]
        np.testing.assert_allclose(vals, np.exp(-np.linspace(0, 2, 5)), rtol=1e-6)  # 100 x default rtol

    def test_lifted(self, files):
        out = str(files["dir"] / "traj.csv")
        assert run_command(["simulate", "--system", files["rotation"], "--x0", "1,0",
                            "--v0", "0,1", "--tf", "1", "--points", "3", "--out", out]) == 0
        ids = {r["series_id"] for r in csv.DictReader(open(out, newline=""))}
        assert ids == {"x1", "x2", "v_x1", "v_x2"}

    def test_wrong_dimension(self, files):
        assert run_command(["simulate", "--system", files["rotation"], "--x0", "1",
                            "--tf", "1"]) == 3


class TestKrasovskii:
    def test_h_equals_f(self, files):
        code, _, rep = _report(files, ["krasovskii", "--system", files["decay"], "--h-equals-f",
                                       "--samples", "3", "--T", "3"])
        assert code == 0 and rep["verdict"] == "IES"
        assert rep["bracket"]["commuting"] and rep["bracket"]["max_residual"] <= 1e-12

    def test_classical(self, files):
        _, _, rep = _report(files, ["krasovskii", "--system", files["decay"], "--P", files["P"],
                                    "--Q", files["Q"], "--samples", "3", "--T", "3"])
        assert rep["verdict"] == "IES" and rep["rate_estimate"]["lambda"] == pytest.approx(1.0)

    def test_time_varying_needs_h(self, files):
        assert run_command(["krasovskii", "--system", files["periodic"], "--h-equals-f"]) == 3


def test_canonical_json_format():
    text = canonical_json({"b": [1.0, float("nan"), 1 / 3], "a": {"z": True, "y": None}})
    assert text == '{"a":{"y":null,"z":true},"b":[1,null,0.333333333333]}\n'


def test_module_entry_point(files):
    proc = subprocess.run([sys.executable, "-m", "incstab", "check", "--system", files["damped"],
                           "--mode", "demidovich", "--rate", "1.0", "--samples", "20"],
                          capture_output=True, text=True, check=False)
    assert proc.returncode == 0 and json.loads(proc.stdout)["verdict"] == "IES"
