import os
from dataclasses import replace

import numpy as np
import pytest
from PIL import Image

from comptomo import cli, cstb
from comptomo.config import (
    RunConfig,
    apply_overrides,
    config_hash,
    desk_config,
    load_config,
    save_config,
)


def tiny_config(**overrides):
    base = replace(
        desk_config(),
        grid_n=16,
        n_s=2,
        n_d=4,
        n_energies=10,
        photons_per_source=20_000,
        max_sweeps=60,
        landweber_iterations=40,
        tv_iterations=40,
        seed=11,
    )
    return replace(base, **overrides)


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    wd = str(tmp_path_factory.mktemp("pipeline"))
    cfg = tiny_config()
    cli.cmd_phantom(cfg, wd)
    cli.cmd_assemble(cfg, wd, which="prior")
    cli.cmd_assemble(cfg, wd, which="exact")
    cli.cmd_simulate(cfg, wd)
    cli.cmd_noise(cfg, wd)
    for scenario in ("i", "ii", "iii", "iv"):
        cli.cmd_uncertainty(cfg, wd, scenario)
    return cfg, wd


class TestConfig:
    def test_round_trip(self, tmp_path):
        cfg = desk_config()
        path = tmp_path / "run.cfg"
        save_config(cfg, path)
        assert load_config(path) == cfg

    def test_overrides(self):
        cfg = apply_overrides(RunConfig(), ["grid_n=32", "rho=12.5", "seed=9"])
        assert cfg.grid_n == 32
        assert cfg.rho == "12.5"
        assert cfg.rho_value(None) == 12.5
        assert cfg.seed == 9

    def test_unknown_key_rejected(self):
        with pytest.raises(KeyError):
            apply_overrides(RunConfig(), ["nope=1"])

    def test_rho_auto(self):
        cfg = RunConfig()
        assert cfg.rho_value(10.0) == pytest.approx(11.0)
        with pytest.raises(ValueError):
            cfg.rho_value(None)

    def test_desk_preset_values(self):
        cfg = desk_config()
        assert (cfg.grid_n, cfg.n_s, cfg.n_d, cfg.n_energies) == (64, 10, 10, 40)
        assert cfg.photons_per_source == 10_000_000

    def test_hash_changes_with_values(self):
        a = config_hash(RunConfig())
        b = config_hash(replace(RunConfig(), seed=2))
        assert a != b


class TestPhantomCommand:
    def test_written_range(self, pipeline):
        _, wd = pipeline
        raster = cstb.read_cstb(os.path.join(wd, "phantom.cstb"))
        nonzero = raster[raster > 0]
        assert nonzero.min() == pytest.approx(1.36, abs=0.01)
        assert raster.max() == pytest.approx(5.66, abs=0.01)

    def test_prior_interior_constant(self, pipeline):
        # the configured interior is relative to water; rasters are in
        # 1e23 e/cm^3 units, so 0.67 lands at 0.67 * 3.23
        _, wd = pipeline
        prior = cstb.read_cstb(os.path.join(wd, "prior.cstb"))
        values = np.unique(np.round(prior, 9))
        assert 0.0 in values
        assert np.round(0.67 * 3.23, 9) in values
        assert values.size == 3  # background, interior, hull ring

    def test_rerun_is_byte_identical(self, pipeline, tmp_path):
        cfg, wd = pipeline
        other = str(tmp_path / "again")
        cli.cmd_phantom(cfg, other)
        for name in ("phantom.cstb", "prior.cstb"):
            assert (
                open(os.path.join(wd, name), "rb").read()
                == open(os.path.join(other, name), "rb").read()
            )

    def test_raster_shape(self, pipeline):
        cfg, wd = pipeline
        raster = cstb.read_cstb(os.path.join(wd, "phantom.cstb"))
        assert raster.shape == (2 * cfg.grid_n, 2 * cfg.grid_n)


class TestAssembleCommand:
    def test_matrix_dimensions(self, pipeline):
        cfg, wd = pipeline
        matrix = cstb.read_cstb(os.path.join(wd, "matrix_prior.cstb"))
        assert matrix.shape == (
            cfg.n_energies * cfg.n_s * cfg.n_d,
            cfg.grid_n**2,
        )

    def test_exact_and_prior_differ(self, pipeline):
        _, wd = pipeline
        prior = cstb.read_cstb(os.path.join(wd, "matrix_prior.cstb"))
        exact = cstb.read_cstb(os.path.join(wd, "matrix_exact.cstb"))
        assert np.linalg.norm(exact - prior) > 0

    def test_tampered_phantom_refused(self, pipeline, tmp_path):
        cfg, wd = pipeline
        broken = str(tmp_path / "broken")
        cli.cmd_phantom(cfg, broken)
        raster = cstb.read_cstb(os.path.join(broken, "phantom.cstb"))
        cstb.write_cstb(os.path.join(broken, "phantom.cstb"), raster * 1.5)
        with pytest.raises(cstb.HashMismatchError):
            cli.cmd_assemble(cfg, broken, which="prior")


class TestSimulateCommand:
    def test_rerun_byte_identical(self, pipeline, tmp_path):
        cfg, wd = pipeline
        other = str(tmp_path / "sim")
        cli.cmd_phantom(cfg, other)
        cli.cmd_simulate(cfg, other)
        for name in ("g1.cstb", "g1_mc.cstb", "g2_mc.cstb"):
            assert (
                open(os.path.join(wd, name), "rb").read()
                == open(os.path.join(other, name), "rb").read()
            )

    def test_spectra_nonnegative(self, pipeline):
        _, wd = pipeline
        for name in ("g1.cstb", "g1_mc.cstb", "g2_mc.cstb"):
            assert cstb.read_cstb(os.path.join(wd, name)).min() >= 0.0


class TestReconstructCommand:
    def test_resesop_tv_with_zero_lambda_matches_resesop(self, pipeline, tmp_path):
        cfg, wd = pipeline
        plain = cli.reconstruct(cfg, wd, "i", "resesop")
        zero_tv = cli.reconstruct(
            replace(cfg, lambda_tv=0.0), wd, "i", "resesop_tv"
        )
        assert np.array_equal(plain.coef_, zero_tv.coef_)

    def test_metrics_row_appended(self, pipeline):
        cfg, wd = pipeline
        report = cli.cmd_reconstruct(cfg, wd, "i", "landweber")
        csv = open(os.path.join(wd, "metrics.csv")).read().splitlines()
        assert csv[0] == "scenario,method,snr,psnr,ssim,nmse"
        assert any(line.startswith("i,landweber") for line in csv[1:])
        assert report.nmse >= 0

    def test_scenario_iv_shapes(self, pipeline):
        cfg, wd = pipeline
        data = cli.scenario_data(cfg, wd, "iv")
        assert data.shape == (cfg.n_energies - 1, cfg.n_s * cfg.n_d)

    def test_tampered_matrix_refused(self, pipeline, tmp_path):
        cfg, wd = pipeline
        spoiled = str(tmp_path / "spoiled")
        cli.cmd_phantom(cfg, spoiled)
        cli.cmd_assemble(cfg, spoiled, which="prior")
        cli.cmd_simulate(cfg, spoiled)
        cli.cmd_uncertainty(cfg, spoiled, "i")
        matrix = cstb.read_cstb(os.path.join(spoiled, "matrix_prior.cstb"))
        cstb.write_cstb(os.path.join(spoiled, "matrix_prior.cstb"), 2.0 * matrix)
        with pytest.raises(cstb.HashMismatchError):
            cli.reconstruct(cfg, spoiled, "i", "resesop")


class TestExportPng:
    def test_constant_image_uniform_gray(self, tmp_path):
        path = tmp_path / "c.cstb"
        cstb.write_cstb(path, np.full((8, 8), 3.0))
        out = tmp_path / "c.png"
        cli.cmd_export_png(str(path), str(out))
        pixels = np.asarray(Image.open(out))
        assert pixels.shape == (8, 8)
        assert np.unique(pixels).size == 1

    def test_ground_truth_quantisation(self, pipeline, tmp_path):
        _, wd = pipeline
        src = os.path.join(wd, "phantom.cstb")
        out = tmp_path / "p.png"
        cli.cmd_export_png(src, str(out))
        pixels = np.asarray(Image.open(out))
        assert pixels.max() == 255
        # linear windowing: round-trip error below one quantisation step
        raster = cstb.read_cstb(src)
        lo, hi = raster.min(), raster.max()
        step = (hi - lo) / 255.0
        oriented = raster.T[::-1]  # the export flips y upward
        back = lo + pixels.astype(float) * step
        assert np.abs(back - oriented).max() <= step

    def test_non_2d_rejected(self, tmp_path):
        path = tmp_path / "v.cstb"
        cstb.write_cstb(path, np.arange(4.0))
        with pytest.raises(ValueError):
            cli.cmd_export_png(str(path), str(tmp_path / "v.png"))


class TestMainEntry:
    def test_phantom_via_argv(self, tmp_path, capsys):
        wd = str(tmp_path / "m")
        code = cli.main(
            [
                "--preset",
                "desk",
                "--workdir",
                wd,
                "--set",
                "grid_n=8",
                "--set",
                "n_s=1",
                "--set",
                "n_d=2",
                "--set",
                "n_energies=4",
                "phantom",
            ]
        )
        assert code == 0
        assert os.path.exists(os.path.join(wd, "phantom.cstb"))


class TestScaleArithmetic:
    def test_full_scale_matrix_file_size(self, tmp_path):
        # 16000 x 10000 at full scale: header + 1.28e9 payload bytes,
        # reserved up front by the streaming writer
        cfg = RunConfig()
        rows = cfg.n_energies * cfg.n_s * cfg.n_d
        cols = cfg.grid_n**2
        assert (rows, cols) == (16000, 10000)
        path = tmp_path / "full.cstb"
        writer = cstb.CstbWriter(path, (rows, cols))
        assert os.path.getsize(path) == 20 + 8 * rows * cols
        with pytest.raises(cstb.CstbFormatError):
            writer.close()

    def test_desk_scale_dimensions(self):
        cfg = desk_config()
        rows = cfg.n_energies * cfg.n_s * cfg.n_d
        cols = cfg.grid_n**2
        assert (rows, cols) == (4000, 4096)
