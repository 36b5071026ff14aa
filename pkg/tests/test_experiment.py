import csv
import io

import numpy as np
import pytest

from polycv.experiment import (
    CSV_COLUMNS,
    ConfigError,
    ExperimentConfig,
    default_checkpoints,
    run_experiment,
    sweep_allocation,
    write_csv,
    write_outputs,
    write_sweep,
)
from polycv.pfm import read_pfm, write_pfm


def csv_text(result, drop=("wall_time_ms",)):
    buf = io.StringIO()
    write_csv(result.rows, buf, tuple(c for c in CSV_COLUMNS if c not in drop))
    return buf.getvalue()


class TestPFM:
    def test_single_gray_pixel(self, tmp_path):
        path = tmp_path / "a.pfm"
        write_pfm(np.array([[0.5]]), path)
        data = path.read_bytes()
        assert data == b"Pf\n1 1\n-1.0\n" + bytes([0x00, 0x00, 0x00, 0x3F])

    def test_rows_bottom_to_top(self, tmp_path):
        path = tmp_path / "b.pfm"
        write_pfm(np.array([[1.0, 2.0], [3.0, 4.0]]), path)
        body = np.frombuffer(path.read_bytes()[len(b"Pf\n2 2\n-1.0\n"):], dtype="<f4")
        np.testing.assert_array_equal(body, [3, 4, 1, 2])

    @pytest.mark.parametrize("shape", [(3, 5), (4, 2, 3)])
    def test_round_trip(self, tmp_path, shape):
        img = np.random.default_rng(0).random(shape).astype(np.float32)
        path = tmp_path / "c.pfm"
        write_pfm(img, path)
        np.testing.assert_array_equal(read_pfm(path), img)

    def test_color_header(self, tmp_path):
        path = tmp_path / "d.pfm"
        write_pfm(np.zeros((1, 2, 3)), path)
        assert path.read_bytes().startswith(b"PF\n2 1\n")

    def test_rejects_empty(self, tmp_path):
        with pytest.raises(ValueError):
            write_pfm(np.zeros((0, 3)), tmp_path / "e.pfm")

    def test_io_error_names_path(self, tmp_path):
        with pytest.raises(OSError, match="missing"):
            write_pfm(np.zeros((1, 1)), tmp_path / "missing" / "x.pfm")


class TestConfig:
    def test_defaults(self):
        cfg = ExperimentConfig()
        assert cfg.fraction == pytest.approx(1 / 3)
        assert cfg.epsilon == 1e-5
        assert cfg.n_star == 4
        assert ExperimentConfig(mode="bucketed").fraction == pytest.approx(1 / 16)

    def test_parse(self):
        cfg = ExperimentConfig.from_string(
            "[experiment]\nmode = bucketed\nintegrand = spike-2d\nalpha = 0.5\ncheckpoints = 4, 8\n"
            "[bucketed]\nresolution = 8 4\nspp = 16\n[output]\ncsv = out.csv\n"
        )
        assert cfg.mode == "bucketed"
        assert cfg.alpha == 0.5
        assert cfg.resolution == (8, 4)
        assert cfg.checkpoints == (4, 8)
        assert cfg.csv == "out.csv"

    @pytest.mark.parametrize(
        "text,field",
        [
            ("[experiment]\nruns = 0\n", "runs"),
            ("[experiment]\nruns = many\n", "runs"),
            ("[experiment]\ncv_fraction = 1.5\n", "cv_fraction"),
            ("[experiment]\nmode = partial\n", "mode"),
            ("[experiment]\nalpha = best\n", "alpha"),
            ("[experiment]\nspeed = 3\n", "speed"),
            ("[colors]\nred = 1\n", "colors"),
            ("[bucketed]\nresolution = 0 4\n", "resolution"),
        ],
    )
    def test_errors_name_field(self, text, field):
        with pytest.raises(ConfigError, match=field):
            ExperimentConfig.from_string(text)

    def test_unknown_integrand(self):
        with pytest.raises(ConfigError, match="integrand"):
            run_experiment(ExperimentConfig(integrand="nope-2d"))

    def test_checkpoints(self):
        assert default_checkpoints(100) == [16, 32, 64, 100]
        assert default_checkpoints(0) == [0]


class TestRunExperiment:
    def test_constant_integrand_exact(self):
        result = run_experiment(ExperimentConfig(integrand="constant-2d", total_evals=300, runs=3))
        assert np.all(result.column("abs_error") < 1e-14)

    def test_accounting(self):
        for mode, name in [("full", "gaussian-2d"), ("highdim", "hd-peak-6d"), ("bucketed", "gaussian-2d")]:
            cfg = ExperimentConfig(mode=mode, integrand=name, total_evals=1000, runs=2, resolution=(4, 4), spp=32)
            for r in run_experiment(cfg).rows:
                assert r["n_cv_evals"] + r["n_residual_evals"] == r["integrand_evals"]

    def test_budget_identity_in_rows(self):
        result = run_experiment(ExperimentConfig(integrand="gaussian-3d", total_evals=2000, runs=1))
        n_cv = result.rows[0]["n_cv_evals"]
        assert (n_cv - 27) % 18 == 0

    def test_transmittance_accounting(self):
        cfg = ExperimentConfig(mode="transmittance", total_evals=200, runs=2, medium="bump", estimator="adaptive")
        rows = run_experiment(cfg).rows
        assert rows[0]["n_cv_evals"] == 9 + 1024
        assert all(r["n_cv_evals"] + r["n_residual_evals"] == r["integrand_evals"] for r in rows)

    def test_pure_mc_when_budget_small(self):
        rows = run_experiment(ExperimentConfig(integrand="gaussian-2d", total_evals=20, runs=1)).rows
        assert rows[-1]["n_cv_evals"] == 0
        assert rows[-1]["n_residual_evals"] == 20

    @pytest.mark.parametrize("mode", ["full", "bucketed", "highdim", "transmittance"])
    def test_thread_count_does_not_matter(self, mode):
        name = "hd-product-6d" if mode == "highdim" else "gaussian-2d"
        cfg = ExperimentConfig(mode=mode, integrand=name, total_evals=500, runs=5, seed=11, resolution=(4, 4), spp=16)
        assert csv_text(run_experiment(cfg, threads=1)) == csv_text(run_experiment(cfg, threads=3))

    def test_seed_changes_output(self):
        cfg = ExperimentConfig(total_evals=300, runs=2)
        other = ExperimentConfig(total_evals=300, runs=2, seed=1)
        assert csv_text(run_experiment(cfg)) != csv_text(run_experiment(other))

    def test_missing_bucket_reference(self):
        cfg = ExperimentConfig(mode="bucketed", integrand="disk-2d", resolution=(4, 4), spp=16, runs=1)
        result = run_experiment(cfg)
        assert result.rows[0]["rmse"] is None
        assert result.error_image is None
        assert "," * 2 in csv_text(result)

    def test_outputs(self, tmp_path):
        cfg = ExperimentConfig(mode="bucketed", integrand="gaussian-2d", resolution=(8, 4), spp=16, runs=2)
        result = run_experiment(cfg)
        paths = write_outputs(result, tmp_path / "r.csv", tmp_path / "img.pfm")
        assert [p.name for p in paths] == ["r.csv", "img.pfm", "img_error.pfm"]
        assert read_pfm(tmp_path / "img.pfm").shape == (8, 4)
        with open(tmp_path / "r.csv", newline="") as fh:
            rows = list(csv.reader(fh))
        assert tuple(rows[0]) == CSV_COLUMNS
        assert len(rows) == 3

    def test_cv_cache(self, tmp_path):
        cfg = ExperimentConfig(integrand="gaussian-2d", total_evals=600, runs=2, cv_cache=str(tmp_path / "cv.bin"))
        first = run_experiment(cfg)
        second = run_experiment(cfg)
        assert (tmp_path / "cv.bin").is_file()
        assert csv_text(first) == csv_text(second)


class TestSweep:
    def test_quadrature_row_exact_on_quadratic(self):
        cfg = ExperimentConfig(integrand="quadratic-2d", runs=8)
        res = sweep_allocation(cfg, [0, 9, 33, 99], [0, 16])
        assert np.isnan(res.error[0, 0])
        assert np.all(res.error[0, 1:] < 1e-14)
        np.testing.assert_array_equal(res.cost[1], res.cv_evals + 16)

    def test_pure_mc_column_rate(self):
        cfg = ExperimentConfig(integrand="gaussian-2d", runs=256)
        res = sweep_allocation(cfg, [0], [64, 256])
        assert res.error[1, 0] / res.error[0, 0] == pytest.approx(0.5, rel=0.2)

    def test_bucketed_and_files(self, tmp_path):
        cfg = ExperimentConfig(mode="bucketed", integrand="gaussian-2d", runs=2, resolution=(4, 4))
        res = sweep_allocation(cfg, [0, 33], [0, 4])
        paths = write_sweep(res, tmp_path / "s")
        assert [p.name for p in paths] == ["s_error.csv", "s_cost.csv", "s_efficiency.csv"]
        assert 0.0 <= res.best_ratio <= 1.0

    def test_rejects_other_modes(self):
        with pytest.raises(ConfigError):
            sweep_allocation(ExperimentConfig(mode="transmittance"), [0], [1])
