"""Command-line surface: train, denoise, reconstruct, tune, eval, inspect.

Every command resolves its settings from built-in defaults, an optional
plain-text ``key = value`` config file, and command-line flags named
after the keys (flags win). Unknown keys in a config file are rejected.
Commands that produce files write them into a run directory together
with the fully resolved configuration; on failure the process prints a
single ``error: ...`` line to stderr and exits nonzero.
"""

from __future__ import annotations

import argparse
import csv
import sys
from pathlib import Path

import numpy as np

from .checkpoint import load_model, save_model
from .conv import spectral_norm_power
from .imageio import read_image, write_pfm, write_pgm
from .metrics import psnr, ssim
from .operators import (
    DenseOperator,
    Identity,
    MaskedFourier,
    Radon,
    make_cartesian_mask,
    simulate,
)
from .solvers import SolveOptions, prox_denoise, sagd_solve
from .training import PatchDataset, TrainConfig, train, write_training_log
from .tuning import coarse_to_fine


class CommandError(Exception):
    """User-facing failure with a one-line message."""


# ---------------------------------------------------------------------------
# run configuration


def _parse_value(text, default):
    if isinstance(default, bool):
        if text.lower() in ("1", "true", "yes", "on"):
            return True
        if text.lower() in ("0", "false", "no", "off"):
            return False
        raise CommandError(f"expected a boolean, got {text!r}")
    if isinstance(default, int) and not isinstance(default, bool):
        return int(text)
    if isinstance(default, float):
        return float(text)
    return text


def resolve_config(defaults, config_path=None, overrides=None):
    """Defaults <- config file <- flag overrides, with unknown keys rejected."""
    values = dict(defaults)
    if config_path:
        for lineno, raw in enumerate(
            Path(config_path).read_text().splitlines(), start=1
        ):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise CommandError(f"{config_path}:{lineno}: expected key = value")
            key, text = (part.strip() for part in line.split("=", 1))
            if key not in values:
                raise CommandError(f"{config_path}:{lineno}: unknown key {key!r}")
            values[key] = _parse_value(text, defaults[key])
    for key, value in (overrides or {}).items():
        if value is None:
            continue
        values[key] = (
            _parse_value(value, defaults[key]) if isinstance(value, str) else value
        )
    return values


def write_config(values, path) -> None:
    with open(path, "w") as fh:
        for key in sorted(values):
            fh.write(f"{key} = {values[key]}\n")


def _make_run_dir(values):
    out = Path(values["out"])
    out.mkdir(parents=True, exist_ok=True)
    write_config(values, out / "config.txt")
    return out


def _load_unit_image(path):
    img = read_image(path)
    if img.min() < -1e-6 or img.max() > 1 + 1e-6:
        print(f"warning: {path} values outside [0, 1]; clipping", file=sys.stderr)
    return np.clip(img, 0.0, 1.0)


def _write_like(path, image, reference_suffix):
    if reference_suffix == ".pfm":
        write_pfm(path.with_suffix(".pfm"), image)
        return path.with_suffix(".pfm")
    write_pgm(path.with_suffix(".pgm"), image)
    return path.with_suffix(".pgm")


# ---------------------------------------------------------------------------
# operators from geometry settings


def build_operator(values, shape):
    problem = values["problem"]
    if problem == "identity":
        return Identity(shape)
    if problem == "mri":
        mask = make_cartesian_mask(
            shape[1],
            values["acceleration"],
            values["center_fraction"],
            values["mask_seed"],
        )
        return MaskedFourier(shape, mask)
    if problem == "ct":
        return Radon(shape, values["num_angles"], values["num_detectors"])
    if problem == "dense":
        if not values["matrix"]:
            raise CommandError("dense problem requires matrix=<path to .npy>")
        return DenseOperator(np.load(values["matrix"]), shape)
    raise CommandError(f"unknown problem {problem!r}")


_GEOMETRY_DEFAULTS = {
    "problem": "ct",
    "acceleration": 4.0,
    "center_fraction": 0.08,
    "mask_seed": 0,
    "num_angles": 60,
    "num_detectors": 95,
    "matrix": "",
    "noise_sigma": 0.0,
    "noise_seed": 0,
}


# ---------------------------------------------------------------------------
# commands


TRAIN_DEFAULTS = {
    "out": "run",
    "data_dir": "",
    "synthetic_images": 0,
    "synthetic_size": 64,
    "stride": 8,
    "sigma_max": 30.0 / 255.0,
    "patch_size": 40,
    "batch_size": 32,
    "steps": 500,
    "lr_mu": 5e-2,
    "lr_conv": 5e-3,
    "lr_alpha": 5e-3,
    "lr_splines": 5e-4,
    "lr_decay": 0.75,
    "lr_decay_every": 500,
    "forward_tol": 1e-4,
    "backward_tol": 1e-6,
    "seed": 0,
    "channels": "4,8,60",
    "kernel_size": 5,
    "num_knots": 101,
    "delta": 2e-3,
    "alpha_init": 5.0,
    "export_norm_size": 64,
    "export_norm_iters": 1000,
    "checkpoint_every": 0,
}


def cmd_train(values) -> int:
    out = _make_run_dir(values)
    if values["data_dir"]:
        dataset = PatchDataset.from_directory(
            values["data_dir"], values["patch_size"], values["stride"]
        )
    elif values["synthetic_images"] > 0:
        dataset = PatchDataset.synthetic(
            values["synthetic_images"],
            values["synthetic_size"],
            values["patch_size"],
            values["stride"],
            seed=values["seed"],
        )
    else:
        raise CommandError("set data_dir=<pgm directory> or synthetic_images=<n>")
    channels = tuple(int(c) for c in str(values["channels"]).split(","))
    config = TrainConfig(
        sigma_max=values["sigma_max"],
        patch_size=values["patch_size"],
        batch_size=values["batch_size"],
        steps=values["steps"],
        lr_mu=values["lr_mu"],
        lr_conv=values["lr_conv"],
        lr_alpha=values["lr_alpha"],
        lr_splines=values["lr_splines"],
        lr_decay=values["lr_decay"],
        lr_decay_every=values["lr_decay_every"],
        forward_tol=values["forward_tol"],
        backward_tol=values["backward_tol"],
        seed=values["seed"],
        channels=channels,
        kernel_size=values["kernel_size"],
        num_knots=values["num_knots"],
        delta=values["delta"],
        alpha_init=values["alpha_init"],
        export_norm_size=values["export_norm_size"],
        export_norm_iters=values["export_norm_iters"],
        checkpoint_every=values["checkpoint_every"],
    )
    model, log = train(dataset, config, checkpoint_dir=out)
    save_model(
        model,
        out / "model.wcrr",
        norm_size=values["export_norm_size"],
        norm_iters=values["export_norm_iters"],
    )
    write_training_log(log, out / "training_log.csv")
    print(f"trained {config.steps} steps on {len(dataset)} patches")
    print(f"checkpoint: {out / 'model.wcrr'}")
    return 0


DENOISE_DEFAULTS = {
    "out": "run",
    "checkpoint": "",
    "input": "",
    "reference": "",
    "sigma": 0.1,
    "tol": 1e-4,
    "max_iters": 2000,
}


def cmd_denoise(values) -> int:
    out = _make_run_dir(values)
    if not values["checkpoint"] or not values["input"]:
        raise CommandError("denoise requires checkpoint=<file> and input=<image>")
    model = load_model(values["checkpoint"])
    noisy = _load_unit_image(values["input"])
    sigma = values["sigma"]
    if not 0.0 <= sigma <= model.sigma_max:
        clamped = min(max(sigma, 0.0), model.sigma_max)
        print(
            f"warning: sigma {sigma} outside [0, {model.sigma_max:.6f}]; "
            f"clamping to {clamped}",
            file=sys.stderr,
        )
        sigma = clamped
    opts = SolveOptions(tol=values["tol"], max_iters=values["max_iters"])
    denoised, report = prox_denoise(model, noisy, sigma, opts)
    written = _write_like(out / "denoised", denoised, Path(values["input"]).suffix)
    report.to_csv(out / "trace.csv")
    print(f"denoised: {written} ({report.iterations} iterations, {report.stop_reason})")
    if values["reference"]:
        ref = _load_unit_image(values["reference"])
        print(f"psnr_noisy={psnr(ref, noisy):.4f} psnr_denoised={psnr(ref, denoised):.4f}")
    return 0


RECONSTRUCT_DEFAULTS = {
    "out": "run",
    "checkpoint": "",
    "ground_truth": "",
    "measurements": "",
    "height": 64,
    "width": 64,
    "lam": 1.0,
    "sigma": 0.05,
    "tol": 1e-4,
    "max_iters": 2000,
    "safeguard": 2.0,
    **_GEOMETRY_DEFAULTS,
}


def cmd_reconstruct(values) -> int:
    out = _make_run_dir(values)
    if not values["checkpoint"]:
        raise CommandError("reconstruct requires checkpoint=<file>")
    model = load_model(values["checkpoint"])
    truth = None
    if values["ground_truth"]:
        truth = _load_unit_image(values["ground_truth"])
        shape = truth.shape
    else:
        shape = (values["height"], values["width"])
    op = build_operator(values, shape)
    if values["measurements"]:
        y = np.load(values["measurements"])
    elif truth is not None:
        y = simulate(op, truth, values["noise_sigma"], values["noise_seed"])
        np.save(out / "measurements.npy", y)
    else:
        raise CommandError("provide measurements=<.npy> or ground_truth=<image>")
    opts = SolveOptions(
        tol=values["tol"], max_iters=values["max_iters"], a=values["safeguard"]
    )
    recon, report = sagd_solve(op, y, values["lam"], model, values["sigma"], opts=opts)
    recon = np.clip(recon, 0.0, 1.0)
    write_pfm(out / "reconstruction.pfm", recon)
    write_pgm(out / "reconstruction.pgm", recon)
    report.to_csv(out / "trace.csv")
    print(
        f"reconstruction: {out / 'reconstruction.pfm'} "
        f"({report.iterations} iterations, {report.stop_reason}, "
        f"{report.restart_count} restarts)"
    )
    if truth is not None:
        print(f"psnr={psnr(truth, recon):.4f} ssim={ssim(truth, recon):.4f}")
    return 0


TUNE_DEFAULTS = {
    "out": "run",
    "checkpoint": "",
    "validation_dir": "",
    "lam_min": 1e-3,
    "lam_max": 1e1,
    "sigma_min": 1.0 / 255.0,
    "sigma_max": 30.0 / 255.0,
    "grid_size": 4,
    "rounds": 3,
    "tol": 1e-4,
    "max_iters": 1000,
    **_GEOMETRY_DEFAULTS,
}


def cmd_tune(values) -> int:
    out = _make_run_dir(values)
    if not values["checkpoint"] or not values["validation_dir"]:
        raise CommandError("tune requires checkpoint=<file> and validation_dir=<dir>")
    model = load_model(values["checkpoint"])
    val_dir = Path(values["validation_dir"])
    files = sorted(
        p for p in val_dir.iterdir() if p.suffix.lower() in (".pgm", ".pfm")
    )
    if not files:
        raise CommandError(f"no validation images in {val_dir}")
    images = [_load_unit_image(p) for p in files]
    ops = [build_operator(values, img.shape) for img in images]
    measurements = [
        simulate(op, img, values["noise_sigma"], values["noise_seed"] + i)
        for i, (op, img) in enumerate(zip(ops, images))
    ]
    opts = SolveOptions(tol=values["tol"], max_iters=values["max_iters"])

    def evaluate(lam, sigma):
        scores = []
        for img, op, y in zip(images, ops, measurements):
            recon, _ = sagd_solve(op, y, lam, model, sigma, opts=opts)
            scores.append(psnr(img, np.clip(recon, 0, 1)))
        return float(np.mean(scores))

    lam, sigma, score, trials = coarse_to_fine(
        evaluate,
        (values["lam_min"], values["lam_max"]),
        (values["sigma_min"], values["sigma_max"]),
        values["grid_size"],
        values["rounds"],
    )
    with open(out / "tuning.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["lam", "sigma", "mean_psnr"])
        writer.writerows(trials)
    with open(out / "best.txt", "w") as fh:
        fh.write(f"lam = {lam}\nsigma = {sigma}\nmean_psnr = {score}\n")
    print(f"lam={lam:.6g} sigma={sigma:.6g} mean_psnr={score:.4f}")
    return 0


EVAL_DEFAULTS = {"reference": "", "candidate": ""}


def cmd_eval(values) -> int:
    if not values["reference"] or not values["candidate"]:
        raise CommandError("eval requires reference=<image> and candidate=<image>")
    ref = _load_unit_image(values["reference"])
    cand = _load_unit_image(values["candidate"])
    print(f"psnr={psnr(ref, cand):.6f} ssim={ssim(ref, cand):.6f}")
    return 0


INSPECT_DEFAULTS = {"out": "run", "checkpoint": "", "curve_samples": 512}


def cmd_inspect(values) -> int:
    out = _make_run_dir(values)
    if not values["checkpoint"]:
        raise CommandError("inspect requires checkpoint=<file>")
    model = load_model(values["checkpoint"])
    stack = model.conv.stack
    nu = model.conv.cached_norm

    filters = stack.composed_kernels() / nu
    with open(out / "filters.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["channel", "row", "col", "value"])
        for i, kern in enumerate(filters):
            for r in range(kern.shape[0]):
                for c in range(kern.shape[1]):
                    writer.writerow([i, r, c, repr(float(kern[r, c]))])
    peak = np.max(np.abs(filters)) or 1.0
    for i, kern in enumerate(filters):
        write_pgm(out / f"filter{i:02d}.pgm", 0.5 + 0.5 * kern / peak)

    grid = np.linspace(
        model.plus_spline.knots[0] * 1.5, model.plus_spline.knots[-1] * 1.5,
        values["curve_samples"],
    )
    with open(out / "activation.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t", "phi", "psi"])
        for t, p, q in zip(grid, model.phi(grid), model.psi(grid)):
            writer.writerow([repr(float(t)), repr(float(p)), repr(float(q))])
    sig_grid = np.linspace(0.0, model.sigma_max, values["curve_samples"])
    alphas = model.alpha(sig_grid)
    with open(out / "alpha.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["sigma"] + [f"alpha{i}" for i in range(alphas.shape[1])])
        for s, row in zip(sig_grid, alphas):
            writer.writerow([repr(float(s))] + [repr(float(a)) for a in row])

    # Parseval diagnostic: the W^T W kernel against the discrete impulse
    gram = stack.gram_kernel() / (nu * nu)
    center = gram.shape[0] // 2
    impulse_dev = gram.copy()
    impulse_dev[center, center] -= 1.0
    recheck = spectral_norm_power(stack, 40, 40, iters=100) / nu
    report = [
        f"mu = {model.mu}",
        f"weak_convexity_bound = {model.weak_convexity_bound()}",
        f"lipschitz_bound = {model.lipschitz_bound()}",
        f"norm_method = {model.conv.norm_method}",
        f"cached_norm = {nu}",
        f"norm_recheck_100step_40 = {recheck}",
        f"parseval_deviation_max = {np.max(np.abs(impulse_dev))}",
        f"parseval_deviation_fro = {np.linalg.norm(impulse_dev)}",
    ]
    (out / "report.txt").write_text("\n".join(report) + "\n")
    print("\n".join(report))
    return 0


# ---------------------------------------------------------------------------
# argument parsing


_COMMANDS = {
    "train": (cmd_train, TRAIN_DEFAULTS, "train a model on clean patches"),
    "denoise": (cmd_denoise, DENOISE_DEFAULTS, "run the proximal denoiser"),
    "reconstruct": (
        cmd_reconstruct,
        RECONSTRUCT_DEFAULTS,
        "solve an inverse problem with safeguarded AGD",
    ),
    "tune": (cmd_tune, TUNE_DEFAULTS, "coarse-to-fine search for (lam, sigma)"),
    "eval": (cmd_eval, EVAL_DEFAULTS, "PSNR/SSIM between two images"),
    "inspect": (cmd_inspect, INSPECT_DEFAULTS, "dump filters, curves and bounds"),
}


def build_parser():
    parser = argparse.ArgumentParser(
        prog="wcrr",
        description="weakly convex ridge regularization toolkit",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (_, defaults, help_text) in _COMMANDS.items():
        cmd = sub.add_parser(name, help=help_text)
        cmd.add_argument("--config", default=None, help="key = value settings file")
        for key, default in defaults.items():
            cmd.add_argument(
                f"--{key.replace('_', '-')}",
                dest=key,
                default=None,
                metavar=str(default) if default != "" else "VALUE",
                help=f"default: {default!r}",
            )
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = vars(parser.parse_args(argv))
    command = args.pop("command")
    config_path = args.pop("config")
    runner, defaults, _ = _COMMANDS[command]
    try:
        values = resolve_config(defaults, config_path, args)
        return runner(values)
    except CommandError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (OSError, ValueError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
