import dataclasses

import numpy as np
import pytest

from wcrr.checkpoint import load_model, save_model
from wcrr.cli import main
from wcrr.imageio import read_image, write_pgm
from wcrr.phantoms import shepp_logan
from helpers import random_model


@pytest.fixture(scope="module")
def checkpoint(tmp_path_factory):
    path = tmp_path_factory.mktemp("ckpt") / "model.wcrr"
    save_model(random_model(0), path, norm_size=16, norm_iters=200)
    return path


@pytest.fixture(scope="module")
def zero_reg_checkpoint(tmp_path_factory):
    model = random_model(1)
    model.c_plus_raw = np.zeros_like(model.c_plus_raw)
    model.c_minus_raw = np.zeros_like(model.c_minus_raw)
    model = dataclasses.replace(model)
    path = tmp_path_factory.mktemp("ckpt0") / "zero.wcrr"
    save_model(model, path, norm_size=16, norm_iters=200)
    return path


@pytest.fixture()
def clean_image(tmp_path):
    img = shepp_logan(32)
    path = tmp_path / "clean.pgm"
    write_pgm(path, img)
    return path


class TestDenoise:
    def test_zero_regularizer_identity(self, tmp_path, zero_reg_checkpoint, clean_image):
        out = tmp_path / "run"
        rc = main([
            "denoise", "--checkpoint", str(zero_reg_checkpoint),
            "--input", str(clean_image), "--sigma", "0.05", "--out", str(out),
        ])
        assert rc == 0
        result = out / "denoised.pgm"
        assert result.read_bytes() == clean_image.read_bytes()
        assert (out / "trace.csv").exists()
        assert (out / "config.txt").exists()

    def test_sigma_zero_near_identity(self, tmp_path, checkpoint, clean_image, capsys):
        out = tmp_path / "run"
        rc = main([
            "denoise", "--checkpoint", str(checkpoint),
            "--input", str(clean_image), "--sigma", "0.0",
            "--reference", str(clean_image), "--out", str(out),
        ])
        assert rc == 0
        printed = capsys.readouterr().out
        psnr_val = float(printed.split("psnr_denoised=")[1].split()[0])
        assert psnr_val >= 60.0

    def test_out_of_range_sigma_clamped(self, tmp_path, checkpoint, clean_image, capsys):
        out = tmp_path / "run"
        rc = main([
            "denoise", "--checkpoint", str(checkpoint),
            "--input", str(clean_image), "--sigma", "0.5", "--out", str(out),
        ])
        assert rc == 0
        assert "clamping" in capsys.readouterr().err

    def test_missing_checkpoint_fails(self, tmp_path, clean_image, capsys):
        rc = main([
            "denoise", "--checkpoint", str(tmp_path / "nope.wcrr"),
            "--input", str(clean_image), "--out", str(tmp_path / "run"),
        ])
        assert rc == 1
        assert capsys.readouterr().err.startswith("error:")


class TestReconstruct:
    def test_identity_matches_denoise(self, tmp_path, checkpoint, clean_image):
        out1 = tmp_path / "recon"
        rc = main([
            "reconstruct", "--checkpoint", str(checkpoint), "--problem", "identity",
            "--ground-truth", str(clean_image), "--lam", "1.0", "--sigma", "0.05",
            "--tol", "1e-8", "--max-iters", "4000", "--out", str(out1),
        ])
        assert rc == 0
        recon = read_image(out1 / "reconstruction.pfm")
        out2 = tmp_path / "den"
        main([
            "denoise", "--checkpoint", str(checkpoint), "--input", str(clean_image),
            "--sigma", "0.05", "--tol", "1e-8", "--max-iters", "4000",
            "--out", str(out2),
        ])
        den = read_image(out2 / "denoised.pgm")
        assert np.max(np.abs(recon - den)) <= 1e-3

    def test_ct_simulation_run(self, tmp_path, checkpoint, clean_image, capsys):
        out = tmp_path / "ct"
        rc = main([
            "reconstruct", "--checkpoint", str(checkpoint), "--problem", "ct",
            "--ground-truth", str(clean_image), "--num-angles", "12",
            "--num-detectors", "47", "--noise-sigma", "0.2", "--lam", "0.1",
            "--sigma", "0.05", "--max-iters", "300", "--out", str(out),
        ])
        assert rc == 0
        printed = capsys.readouterr().out
        assert "psnr=" in printed and "ssim=" in printed
        assert (out / "measurements.npy").exists()
        assert (out / "reconstruction.pfm").exists()

    def test_mri_masked_fourier(self, tmp_path, checkpoint, clean_image):
        out = tmp_path / "mri"
        rc = main([
            "reconstruct", "--checkpoint", str(checkpoint), "--problem", "mri",
            "--ground-truth", str(clean_image), "--acceleration", "4",
            "--center-fraction", "0.08", "--noise-sigma", "1e-3",
            "--lam", "0.05", "--sigma", "0.03", "--max-iters", "300",
            "--out", str(out),
        ])
        assert rc == 0


class TestTuneEvalInspect:
    def test_tune_single_point(self, tmp_path, checkpoint, capsys):
        val_dir = tmp_path / "val"
        val_dir.mkdir()
        write_pgm(val_dir / "a.pgm", shepp_logan(24))
        out = tmp_path / "tune"
        rc = main([
            "tune", "--checkpoint", str(checkpoint), "--problem", "identity",
            "--validation-dir", str(val_dir), "--noise-sigma", "0.05",
            "--lam-min", "0.5", "--lam-max", "0.5",
            "--sigma-min", "0.05", "--sigma-max", "0.05",
            "--grid-size", "1", "--rounds", "0", "--max-iters", "200",
            "--out", str(out),
        ])
        assert rc == 0
        printed = capsys.readouterr().out
        assert "lam=0.5" in printed
        assert (out / "tuning.csv").exists()
        assert (out / "best.txt").exists()

    def test_eval_identical(self, clean_image, capsys):
        rc = main([
            "eval", "--reference", str(clean_image), "--candidate", str(clean_image)
        ])
        assert rc == 0
        printed = capsys.readouterr().out
        assert printed.startswith("psnr=99")
        assert "ssim=1.0" in printed

    def test_eval_constant_offset(self, tmp_path, capsys):
        a = np.full((16, 16), 0.4)
        b = np.full((16, 16), 0.5)
        pa, pb = tmp_path / "a.pfm", tmp_path / "b.pfm"
        from wcrr.imageio import write_pfm

        write_pfm(pa, a)
        write_pfm(pb, b)
        rc = main(["eval", "--reference", str(pa), "--candidate", str(pb)])
        assert rc == 0
        psnr_val = float(capsys.readouterr().out.split("psnr=")[1].split()[0])
        assert psnr_val == pytest.approx(20.0, abs=1e-4)

    def test_inspect_outputs(self, tmp_path, zero_reg_checkpoint, capsys):
        out = tmp_path / "inspect"
        rc = main([
            "inspect", "--checkpoint", str(zero_reg_checkpoint), "--out", str(out)
        ])
        assert rc == 0
        printed = capsys.readouterr().out
        assert "weak_convexity_bound = 0.0" in printed
        for name in ("filters.csv", "activation.csv", "alpha.csv", "report.txt"):
            assert (out / name).exists()
        assert (out / "filter00.pgm").exists()

    def test_inspect_initial_model_curve(self, tmp_path):
        from wcrr.regularizer import WcrrModel

        model = WcrrModel.initial(
            channels=(2, 3, 4), kernel_size=3, norm_size=16, norm_iters=200
        )
        ckpt = tmp_path / "init.wcrr"
        save_model(model, ckpt, norm_size=16, norm_iters=200)
        out = tmp_path / "inspect"
        rc = main(["inspect", "--checkpoint", str(ckpt), "--out", str(out)])
        assert rc == 0
        rows = (out / "activation.csv").read_text().strip().splitlines()[1:]
        data = np.array([[float(v) for v in row.split(",")] for row in rows])
        grid_max = model.plus_spline.knots[-1]
        inside = np.abs(data[:, 0]) <= grid_max
        np.testing.assert_allclose(data[inside, 1], -data[inside, 0], atol=1e-6)


class TestTrainCommand:
    def test_tiny_synthetic_run(self, tmp_path):
        out = tmp_path / "train"
        rc = main([
            "train", "--synthetic-images", "2", "--synthetic-size", "32",
            "--patch-size", "16", "--stride", "16", "--steps", "2",
            "--batch-size", "4", "--channels", "2,3,4", "--kernel-size", "3",
            "--num-knots", "21", "--delta", "0.05",
            "--export-norm-size", "16", "--export-norm-iters", "50",
            "--out", str(out),
        ])
        assert rc == 0
        model = load_model(out / "model.wcrr")
        assert model.conv.num_channels == 4
        log = (out / "training_log.csv").read_text().strip().splitlines()
        assert len(log) == 3

    def test_requires_data_source(self, tmp_path, capsys):
        rc = main(["train", "--steps", "1", "--out", str(tmp_path / "x")])
        assert rc == 1
        assert "data_dir" in capsys.readouterr().err


class TestRunConfig:
    def test_config_file_and_override(self, tmp_path, capsys):
        cfg = tmp_path / "cfg.txt"
        cfg.write_text("# comment\nreference = a.pgm\ncandidate = b.pgm\n")
        a = shepp_logan(16)
        write_pgm(tmp_path / "a.pgm", a)
        write_pgm(tmp_path / "b.pgm", a)
        import os

        cwd = os.getcwd()
        os.chdir(tmp_path)
        try:
            rc = main(["eval", "--config", str(cfg)])
        finally:
            os.chdir(cwd)
        assert rc == 0
        assert capsys.readouterr().out.startswith("psnr=99")

    def test_unknown_key_rejected(self, tmp_path, capsys):
        cfg = tmp_path / "bad.txt"
        cfg.write_text("nonsense_key = 1\n")
        rc = main(["eval", "--config", str(cfg)])
        assert rc == 1
        assert "unknown key" in capsys.readouterr().err

    def test_resolved_config_written(self, tmp_path, zero_reg_checkpoint, clean_image):
        out = tmp_path / "run"
        main([
            "denoise", "--checkpoint", str(zero_reg_checkpoint),
            "--input", str(clean_image), "--sigma", "0.03", "--out", str(out),
        ])
        text = (out / "config.txt").read_text()
        assert "sigma = 0.03" in text
        assert "checkpoint = " in text
