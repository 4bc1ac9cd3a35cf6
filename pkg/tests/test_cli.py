"""Tests for config parsing, the expression language, and the CLI entry point."""

import io

import numpy as np
import pytest

from admmpde import cli
from admmpde.metrics_report import CSV_HEADER, ITERATIONS_HEADER


MINIMAL = "problem.name = example1\nmesh.i = 3\n"


class TestConfigParsing:
    def test_minimal(self):
        cfg = cli.parse_config_text(MINIMAL)
        assert cfg.problem_name == "example1"
        assert cfg.mesh_i == 3
        assert cfg.mode == "adaptive"

    def test_comments_and_blank_lines(self):
        text = "# a comment\n\nproblem.name = example2  # trailing\n\nadmm.beta = 3\n"
        cfg = cli.parse_config_text(text)
        assert cfg.problem_name == "example2"
        assert cfg.beta == 3.0

    def test_unknown_key(self):
        with pytest.raises(ValueError, match="unknown config key"):
            cli.parse_config_text(MINIMAL + "admm.momentum = 0.9\n")

    def test_duplicate_key(self):
        with pytest.raises(ValueError, match="duplicate config key"):
            cli.parse_config_text("problem.name = example1\nproblem.name = example2\n")

    def test_bad_value(self):
        with pytest.raises(ValueError, match="bad int value"):
            cli.parse_config_text("problem.name = example1\nmesh.i = five\n")

    def test_missing_name(self):
        with pytest.raises(ValueError, match="problem.name"):
            cli.parse_config_text("mesh.i = 4\n")

    def test_not_key_value(self):
        with pytest.raises(ValueError, match="line 1"):
            cli.parse_config_text("just words\n")

    def test_round_trip(self):
        cfg = cli.parse_config_text(
            "problem.name = example3\nmesh.i = 4\nadmm.beta = 5\n"
            "admm.tol = 1e-5\nadmm.mode = fixed\nadmm.inner_eps = 1e-6\n"
            "output.label = trial\n"
        )
        text = cli.serialize_config(cfg)
        assert cli.parse_config_text(text) == cfg

    def test_serialized_keys_are_sorted_by_section(self):
        text = cli.serialize_config(cli.parse_config_text(MINIMAL))
        keys = [line.split(" = ")[0] for line in text.strip().split("\n")]
        assert keys.index("problem.name") < keys.index("mesh.i") < keys.index("admm.sigma_factor")


class TestExpressionLanguage:
    def test_basic_field(self):
        fn = cli.compile_expression("sin(pi*x1)*sin(pi*x2)*exp(-t) + 1/2")
        x = np.array([0.5, 0.25])
        got = fn(x, x, 0.0)
        want = np.sin(np.pi * x) ** 2 + 0.5
        np.testing.assert_allclose(got, want, atol=1e-15)
        assert fn.source.startswith("sin")

    def test_scalar_broadcast(self):
        fn = cli.compile_expression("3/4")
        out = fn(np.zeros(7), np.zeros(7), 0.0)
        assert out.shape == (7,)
        assert np.all(out == 0.75)

    def test_time_argument(self):
        fn = cli.compile_expression("t*x1")
        np.testing.assert_allclose(fn(np.array([2.0]), np.array([0.0]), 0.5), [1.0])

    @pytest.mark.parametrize(
        "bad",
        [
            "__import__('os')",
            "x3 + 1",
            "2 ** 3",
            "lambda: 1",
            "x1.real",
            "sin(x1, x2)",
            "open('f')",
            "[1, 2]",
            "x1 if t else x2",
            "sin()",
        ],
    )
    def test_rejected(self, bad):
        with pytest.raises(ValueError):
            cli.compile_expression(bad)

    def test_syntax_error(self):
        with pytest.raises(ValueError, match="cannot parse"):
            cli.compile_expression("sin(")


class TestBuildCase:
    def test_named_example_with_overrides(self):
        cfg = cli.parse_config_text(
            "problem.name = example1\nmesh.i = 3\nproblem.alpha = 1e-3\n"
            "admm.beta = 2\nadmm.tol = 1e-3\n"
        )
        spec, disc, admm_cfg = cli.build_case(cfg)
        assert spec.alpha == 1e-3
        assert admm_cfg.beta == 2.0
        assert admm_cfg.tol == 1e-3
        assert disc.grid.i == 3

    def test_defaults_come_from_example(self):
        spec, _, admm_cfg = cli.build_case(cli.parse_config_text(MINIMAL))
        assert admm_cfg.beta == spec.default_beta
        assert admm_cfg.tol == spec.default_tol

    def test_custom_problem_requires_target(self):
        cfg = cli.parse_config_text(
            "problem.name = custom\nproblem.kind = parabolic\n"
            "problem.alpha = 1e-4\nproblem.lower = -1\nproblem.upper = 1\n"
        )
        with pytest.raises(ValueError, match="problem.y_d"):
            cli.build_case(cfg)

    def test_custom_problem_builds(self):
        cfg = cli.parse_config_text(
            "problem.name = custom\nproblem.kind = elliptic\n"
            "problem.alpha = 1e-2\nproblem.lower = -2\nproblem.upper = 2\n"
            "problem.y_d = sin(pi*x1)*sin(pi*x2)\nmesh.i = 3\n"
        )
        spec, disc, _ = cli.build_case(cfg)
        assert spec.kind == "elliptic"
        assert disc.data.y_d.shape == (1, disc.grid.n_interior)

    def test_omega_override(self):
        cfg = cli.parse_config_text(
            MINIMAL + "problem.omega = 0,0.5,0,0.5\n"
        )
        _, disc, _ = cli.build_case(cfg)
        assert disc.mask.count < disc.grid.n_interior


class TestRunCommand:
    def write_config(self, tmp_path, extra=""):
        path = tmp_path / "case.cfg"
        path.write_text(MINIMAL + extra)
        return path

    def test_run_and_outputs(self, tmp_path):
        cfg_path = self.write_config(tmp_path)
        out = tmp_path / "out"
        code = cli.main(["run", "--config", str(cfg_path), "--out", str(out)])
        assert code == 0
        report_text = (out / "report.csv").read_text()
        assert report_text.startswith(CSV_HEADER + "\n")
        row = report_text.strip().split("\n")[1].split(",")
        assert row[0] == "3"
        assert row[1] == "adaptive"
        assert row[9] == "true"
        iters_text = (out / "iterations.csv").read_text()
        assert iters_text.startswith(ITERATIONS_HEADER + "\n")
        for name in ("history.png", "control.png", "state.png"):
            assert (out / name).stat().st_size > 0

    def test_determinism(self, tmp_path):
        cfg_path = self.write_config(tmp_path)
        out1, out2 = tmp_path / "a", tmp_path / "b"
        assert cli.main(["run", "--config", str(cfg_path), "--out", str(out1)]) == 0
        assert cli.main(["run", "--config", str(cfg_path), "--out", str(out2)]) == 0
        for name in ("report.csv", "iterations.csv"):
            assert (out1 / name).read_bytes() == (out2 / name).read_bytes()

    def test_snapshots_default_stride(self, tmp_path):
        cfg_path = self.write_config(tmp_path)
        out = tmp_path / "out"
        code = cli.main(["run", "--config", str(cfg_path), "--out", str(out), "--snapshots"])
        assert code == 0
        u_files = sorted(out.glob("u_t*.txt"))
        y_files = sorted(out.glob("y_t*.txt"))
        assert len(u_files) == 8  # every level of the i=3 mesh with tau = h
        assert len(y_files) == 8
        lines = u_files[0].read_text().strip().split("\n")
        assert lines[0] == "x1 x2 value"
        assert all(len(line.split()) == 3 for line in lines[1:])

    def test_snapshots_stride(self, tmp_path):
        cfg_path = self.write_config(tmp_path)
        out = tmp_path / "out"
        code = cli.main(
            ["run", "--config", str(cfg_path), "--out", str(out), "--snapshots", "4"]
        )
        assert code == 0
        names = sorted(p.name for p in out.glob("u_t*.txt"))
        assert names == ["u_t001.txt", "u_t005.txt"]

    def test_bad_mesh_level_exits_2(self, tmp_path, capsys):
        cfg_path = self.write_config(tmp_path)
        cfg_path.write_text("problem.name = example1\nmesh.i = 99\n")
        code = cli.main(["run", "--config", str(cfg_path), "--out", str(tmp_path / "o")])
        assert code == 2
        assert "config error" in capsys.readouterr().err

    def test_bad_mode_exits_2(self, tmp_path, capsys):
        cfg_path = self.write_config(tmp_path, "admm.mode = turbo\n")
        code = cli.main(["run", "--config", str(cfg_path), "--out", str(tmp_path / "o")])
        assert code == 2
        assert "config error" in capsys.readouterr().err

    def test_missing_config_file_exits_2(self, tmp_path, capsys):
        code = cli.main(["run", "--config", str(tmp_path / "nope.cfg")])
        assert code == 2
        assert "config error" in capsys.readouterr().err

    def test_custom_problem_run(self, tmp_path):
        cfg_path = tmp_path / "custom.cfg"
        cfg_path.write_text(
            "problem.name = custom\nproblem.kind = parabolic\n"
            "problem.alpha = 1e-4\nproblem.lower = -1\nproblem.upper = 1\n"
            "problem.y_d = sin(pi*x1)*sin(pi*x2)*exp(-t)\nmesh.i = 3\n"
            "admm.beta = 3\nadmm.tol = 1e-3\n"
        )
        out = tmp_path / "out"
        code = cli.main(["run", "--config", str(cfg_path), "--out", str(out)])
        assert code == 0
        row = (out / "report.csv").read_text().strip().split("\n")[1].split(",")
        assert row[7] == "" and row[8] == ""  # no exact solution to compare against


class TestReproduce:
    def test_beta_sweep_table(self, tmp_path):
        reports = cli.reproduce(1, out_dir=tmp_path, table1_i=3)
        assert len(reports) == len(cli._BETA_SWEEP)
        text = (tmp_path / "table1.csv").read_text()
        assert "adaptive[beta=0.1]" in text
        assert "adaptive[beta=5]" in text
        assert (tmp_path / "table1.png").stat().st_size > 0
        # slower for the weakest coupling, fastest in the middle of the sweep
        by_beta = {cli._BETA_SWEEP[j]: reports[j].outer_iters for j in range(len(reports))}
        assert by_beta[0.1] > by_beta[2.0]

    def test_inner_policy_table(self, tmp_path):
        reports = cli.reproduce(2, min_i=3, max_i=3, out_dir=tmp_path)
        assert len(reports) == 1 + len(cli._FIXED_EPS)
        labels = [r.algorithm for r in reports]
        assert labels[0] == "adaptive"
        assert "fixed(1e-02)" in labels
        assert "fixed(1e-10)" in labels
        assert (tmp_path / "table2.csv").exists()

    def test_mesh_study_table(self, tmp_path):
        reports = cli.reproduce(6, min_i=3, max_i=4, out_dir=tmp_path)
        assert [r.mesh_i for r in reports] == [3, 4]
        assert all(r.err_u is not None for r in reports)
        assert reports[1].err_u < reports[0].err_u
        assert (tmp_path / "table6.png").stat().st_size > 0

    def test_unknown_table(self, tmp_path):
        with pytest.raises(ValueError):
            cli.reproduce(9, out_dir=tmp_path)

    def test_cli_entry(self, tmp_path, monkeypatch):
        calls = {}

        def fake(table, max_i, out_dir, workers):
            calls.update(table=table, max_i=max_i, out_dir=out_dir, workers=workers)
            return []

        monkeypatch.setattr(cli, "reproduce", fake)
        code = cli.main(["reproduce", "--table", "4", "--max-i", "5", "--out", "x", "--workers", "2"])
        assert code == 0
        assert calls == {"table": 4, "max_i": 5, "out_dir": "x", "workers": 2}


class TestOracleCheck:
    @pytest.mark.parametrize("level", ["linalg", "adjoint", "subproblem"])
    def test_clean_pass(self, level):
        stream = io.StringIO()
        assert cli.oracle_check(level=level, stream=stream)
        text = stream.getvalue()
        assert "FAIL" not in text
        assert "all checks passed" in text

    @pytest.mark.parametrize("level", ["linalg", "adjoint", "subproblem"])
    def test_fault_is_caught(self, level):
        stream = io.StringIO()
        assert not cli.oracle_check(level=level, inject_fault=True, stream=stream)
        assert "FAIL" in stream.getvalue()

    def test_bad_level(self):
        with pytest.raises(ValueError):
            cli.oracle_check(level="everything")

    def test_exit_codes(self, capsys):
        assert cli.main(["oracle-check", "--level", "linalg"]) == 0
        assert cli.main(["oracle-check", "--level", "linalg", "--inject-fault"]) == 1
        capsys.readouterr()
