"""Command-line interface: subcommands, outputs, exit codes."""

import pytest

from peftlab.cli import main

GOOD = """
methods = lora, trilora
ranks = 2
seeds = 0, 1
steps = 50
task.n = 10
task.m = 8
task.planted_rank = 2
"""


@pytest.fixture
def good_config(tmp_path):
    path = tmp_path / "exp.cfg"
    path.write_text(GOOD)
    return path


class TestRun:
    def test_run_writes_outputs_and_exits_zero(self, good_config, tmp_path, capsys):
        out = tmp_path / "out"
        code = main(["run", str(good_config), "--out", str(out)])
        captured = capsys.readouterr()
        assert code == 0
        assert (out / "results.csv").exists()
        assert (out / "report.json").exists()
        assert "rank 2" in captured.out
        assert "win" in captured.out
        assert "[timing]" in captured.err

    def test_rerun_is_byte_identical_at_any_threads(self, good_config, tmp_path):
        paths = []
        for name, threads in (("one", "1"), ("three", "3")):
            out = tmp_path / name
            assert main(["run", str(good_config), "--out", str(out), "--threads", threads]) == 0
            paths.append(out)
        assert (paths[0] / "results.csv").read_bytes() == (paths[1] / "results.csv").read_bytes()
        assert (paths[0] / "report.json").read_bytes() == (paths[1] / "report.json").read_bytes()

    def test_config_error_exits_two(self, tmp_path, capsys):
        bad = tmp_path / "bad.cfg"
        bad.write_text("methods = lora\nsteps = banana\n")
        assert main(["run", str(bad)]) == 2
        assert "line 2" in capsys.readouterr().err

    def test_missing_config_exits_two(self, tmp_path, capsys):
        assert main(["run", str(tmp_path / "absent.cfg")]) == 2
        assert "config error" in capsys.readouterr().err

    def test_failed_cells_exit_one(self, tmp_path, capsys):
        cfg = tmp_path / "diverge.cfg"
        cfg.write_text(
            "methods = lora\nranks = 2\nseeds = 0\nsteps = 40\n"
            "optimizer = sgd\nlr = 1e12\ntask.n = 8\ntask.m = 8\n"
        )
        assert main(["run", str(cfg), "--out", str(tmp_path / "o")]) == 1
        assert "FAILED cell" in capsys.readouterr().err


class TestOtherCommands:
    def test_gradcheck_single_kind(self, capsys):
        assert main(["gradcheck", "--kind", "ia3", "--instances", "2"]) == 0
        out = capsys.readouterr().out
        assert "ok" in out and "ia3/d2" in out

    def test_params_mlp_table(self, capsys):
        assert main(["params", "mlp:2,256,256,2", "--rank", "4"]) == 0
        out = capsys.readouterr().out
        assert "backbone 67074" in out
        assert "ssb" in out

    def test_params_encoder_placement(self, capsys):
        code = main(
            [
                "params",
                "768x768,768x768,768x3072",
                "--repeat",
                "12",
                "--rank",
                "8",
                "--backbone",
                "125000000",
            ]
        )
        assert code == 0
        out = capsys.readouterr().out
        assert "0.6636" in out  # the ssb per-mille on this placement

    def test_params_bad_shape_exits_two(self, capsys):
        assert main(["params", "axb"]) == 2
        assert "error" in capsys.readouterr().err

    def test_report_roundtrip(self, good_config, tmp_path, capsys):
        out = tmp_path / "out"
        main(["run", str(good_config), "--out", str(out)])
        capsys.readouterr()
        assert main(["report", str(out / "results.csv")]) == 0
        printed = capsys.readouterr().out
        assert "lora" in printed and "trilora" in printed and "win" in printed

    def test_report_missing_file_exits_one(self, tmp_path, capsys):
        assert main(["report", str(tmp_path / "none.csv")]) == 1
        assert "error" in capsys.readouterr().err
