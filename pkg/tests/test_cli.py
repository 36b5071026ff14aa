import subprocess
import sys

import pytest

from polycv.cli import main


@pytest.fixture
def config(tmp_path):
    path = tmp_path / "exp.ini"
    path.write_text("[experiment]\nintegrand = gaussian-2d\ntotal_evals = 200\nruns = 2\ncheckpoints = 50\n")
    return path


class TestCLI:
    def test_bench_list(self, capsys):
        assert main(["bench-list"]) == 0
        out = capsys.readouterr().out
        assert "gaussian-2d" in out and "bump" in out

    def test_run_to_stdout(self, config, capsys):
        assert main(["run", "--config", str(config)]) == 0
        lines = capsys.readouterr().out.strip().splitlines()
        assert lines[0].startswith("run,n_cv_evals")
        assert len(lines) == 1 + 2 * 2

    def test_overrides(self, config, tmp_path):
        out = tmp_path / "o.csv"
        assert main(["run", "--config", str(config), "--runs", "3", "--seed", "4", "--threads", "2", "--out-csv", str(out)]) == 0
        assert len(out.read_text().strip().splitlines()) == 1 + 3 * 2

    def test_bucketed_image(self, tmp_path):
        cfg = tmp_path / "b.ini"
        cfg.write_text("[experiment]\nmode = bucketed\nruns = 1\n[bucketed]\nresolution = 4 4\nspp = 8\n")
        img = tmp_path / "img.pfm"
        assert main(["run", "--config", str(cfg), "--out-csv", str(tmp_path / "b.csv"), "--out-image", str(img)]) == 0
        assert img.is_file() and (tmp_path / "img_error.pfm").is_file()

    def test_sweep(self, tmp_path, capsys):
        cfg = tmp_path / "s.ini"
        cfg.write_text("[experiment]\nintegrand = quadratic-2d\nruns = 2\n[sweep]\ncv_axis = 0 9\nresidual_axis = 0 8\n")
        assert main(["sweep", "--config", str(cfg), "--out-csv", str(tmp_path / "sw")]) == 0
        assert (tmp_path / "sw_efficiency.csv").is_file()
        assert "cv fraction" in capsys.readouterr().out

    def test_bad_config_exit_code(self, tmp_path, capsys):
        cfg = tmp_path / "bad.ini"
        cfg.write_text("[experiment]\nruns = -1\n")
        assert main(["run", "--config", str(cfg)]) != 0
        assert "runs" in capsys.readouterr().err

    def test_missing_config(self, tmp_path):
        assert main(["run", "--config", str(tmp_path / "none.ini")]) != 0

    def test_console_entry(self, config):
        proc = subprocess.run([sys.executable, "-m", "polycv.cli", "run", "--config", str(config)], capture_output=True, text=True)
        assert proc.returncode == 0
        assert proc.stdout.startswith("run,")
