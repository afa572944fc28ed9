import csv
import json

import numpy as np
import pytest

from lagflow.cli import main
from lagflow.constants import ConstantsReport
from lagflow.problem import Problem, register_problem


def degenerate_circle():
    return Problem("degenerate_circle", 2, 1, lambda x: float(x @ x), lambda x: 2 * x,
                   lambda x: np.array([(x @ x - 1.0) ** 2]),
                   lambda x: (4 * (x @ x - 1.0) * x)[None, :], np.array([[-2.0, 2.0]] * 2))


class TestRun:
    def test_fl_needs_k(self, tmp_path, capsys):
        assert main(["run", "--flow", "fl", "--out", str(tmp_path)]) == 1
        assert "--k" in capsys.readouterr().err

    def test_bad_flag_exit_1(self, capsys):
        assert_exit = pytest.raises(SystemExit)
        with assert_exit as info:
            main(["run", "--flow", "nope"])
        assert info.value.code == 1

    def test_fl_run_writes_files(self, tmp_path):
        code = main(["run", "--problem", "illustrative_2d", "--flow", "fl", "--k", "10", "--inits", "3",
                     "--seed", "7", "--out", str(tmp_path)])
        assert code == 0
        csvs = sorted(p.name for p in tmp_path.glob("fl_k10_*.csv"))
        assert csvs == ["fl_k10_00.csv", "fl_k10_01.csv", "fl_k10_02.csv"]
        summary = json.loads((tmp_path / "summary.json").read_text())
        assert summary["outcomes"] == ["converged"] * 3
        rows = list(csv.DictReader((tmp_path / "classification.csv").open()))
        assert len(rows) == 3 and all(r["outcome"] == "converged" for r in rows)

    def test_pdgd_expect_diverge(self, tmp_path):
        args = ["run", "--problem", "illustrative_2d", "--flow", "pdgd", "--inits", "8", "--seed", "7",
                "--out", str(tmp_path)]
        assert main(args + ["--expect", "diverge"]) == 0
        assert main(args) == 2

    def test_pi_explicit_points(self, tmp_path):
        code = main(["run", "--problem", "quadratic_affine", "--flow", "pi", "--kp", "2", "--ki", "1",
                     "--x0", "3,2;0,0", "--out", str(tmp_path)])
        assert code == 0
        head = (tmp_path / "pi_k_p2_k_i1_00.csv").read_text().splitlines()[0]
        assert head == "t,x_1,x_2,z_1,stationarity,feasibility"

    def test_config_file_and_override(self, tmp_path):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"problem": "quadratic_affine", "flow": "fl", "k": 1.0, "inits": 2}))
        out = tmp_path / "o"
        assert main(["run", "--config", str(cfg), "--k", "5", "--out", str(out)]) == 0
        assert json.loads((out / "summary.json").read_text())["flow"] == "FL(k=5)"

    def test_config_errors_name_line(self, tmp_path, capsys):
        cfg = tmp_path / "cfg.json"
        cfg.write_text('{\n  "flow": "fl",\n  "speed": 3\n}\n')
        assert main(["run", "--config", str(cfg)]) == 1
        assert "cfg.json:3" in capsys.readouterr().err
        cfg.write_text('{\n  "flow": "fl",\n  "k": \n}\n')
        assert main(["run", "--config", str(cfg)]) == 1
        assert "cfg.json:4" in capsys.readouterr().err


class TestConstants:
    def test_affine_shorthand(self, tmp_path, capsys):
        out = tmp_path / "c.json"
        assert main(["constants", "--problem", "quadratic_affine:I,0,[1 0],1", "--grid", "41x41",
                     "--out", str(out)]) == 0
        r = ConstantsReport.from_json(out.read_text())
        assert (r.m_lower, r.rho_eta, r.L_h) == (1.0, 1.0, 0.0)
        assert "k_p_star" in capsys.readouterr().out

    def test_roundtrip_bytes(self, tmp_path):
        out = tmp_path / "c.json"
        main(["constants", "--problem", "graph_quadratic", "--grid", "41x41", "--out", str(out)])
        text = out.read_text()
        assert ConstantsReport.from_json(text).to_json() == text

    def test_rank_failure_exit_3(self, tmp_path, capsys):
        register_problem("degenerate_circle", degenerate_circle)
        code = main(["constants", "--problem", "degenerate_circle", "--grid", "41x41",
                     "--out", str(tmp_path / "c.json")])
        assert code == 3
        err = capsys.readouterr().err
        assert "witness x=" in err

    def test_unknown_problem_exit_1(self, capsys):
        assert main(["constants", "--problem", "nowhere"]) == 1

    def test_certify(self, tmp_path, capsys):
        out = tmp_path / "c.json"
        main(["constants", "--problem", "quadratic_affine", "--grid", "41x41", "--out", str(out)])
        capsys.readouterr()
        assert main(["certify", "--problem", "quadratic_affine", "--report", str(out), "--kp", "4"]) == 0
        assert json.loads(capsys.readouterr().out)["passed"] is True
        assert main(["certify", "--problem", "quadratic_affine", "--report", str(out), "--kp", "0.5"]) == 2


def test_reproduce_deterministic(tmp_path):
    dirs = [tmp_path / "a", tmp_path / "b"]
    for d in dirs:
        assert main(["reproduce", "fig2", "--inits", "1", "--grid", "41x41", "--out", str(d)]) == 0
    names = sorted(p.relative_to(dirs[0]) for p in dirs[0].rglob("*.csv"))
    assert len(names) == 5 + 3
    for name in names:
        assert (dirs[0] / name).read_bytes() == (dirs[1] / name).read_bytes()
    rows = list(csv.DictReader((dirs[0] / "classification.csv").open()))
    assert {r["outcome"] for r in rows if r["kind"] == "PDGD"} == {"diverged"}
    assert {r["outcome"] for r in rows if r["kind"] != "PDGD"} == {"converged"}
    grid = list(csv.reader((dirs[0] / "plot_grid.csv").open()))
    assert grid[0] == ["x1", "x2", "f"]
    xs = np.array([[float(v) for v in row[:2]] for row in grid[1:]])
    np.testing.assert_array_equal(xs.min(axis=0), [-3.0, -2.5])
    np.testing.assert_array_equal(xs.max(axis=0), [3.0, 2.5])
