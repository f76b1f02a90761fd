"""Pipeline commands: phantom, assemble, simulate, noise, uncertainty,
reconstruct, metrics, export-png.

Every command reads/writes CSTB arrays plus a manifest carrying the
configuration hash and SHA-256 hashes of its inputs; downstream commands
refuse to run on inputs whose hashes no longer match.  With a fixed
configuration (including the seed) every artifact is byte-identical across
reruns.
"""

import argparse
import os
import sys

import numpy as np

from . import cstb
from .basis import CoefficientImage, build_basis, project_l2, synthesize
from .config import (
    METHODS,
    SCENARIOS,
    RunConfig,
    apply_overrides,
    config_hash,
    desk_config,
    load_config,
)
from .forward import (
    FineGrid,
    apply_l1,
    apply_p_to_matrix,
    assemble_matrix,
    attenuation_from_phantom,
)
from .geometry import build_energy_grid, build_geometry
from .metrics import CSV_HEADER, compute_metrics
from .montecarlo import McConfig, calibrate_scale, simulate
from .phantom import (
    DENSITY_UNIT_ELECTRONS,
    WATER_ELECTRON_DENSITY,
    build_prior,
    build_shepp_logan,
)
from .solvers import Landweber, ResesopKaczmarz, ResesopTV, TVReconstructor
from .uncertainty import add_poisson_noise, estimate_eta

_IN_MEMORY_MATRIX_BYTES = 600 * 1024 * 1024


def _path(workdir, name):
    return os.path.join(workdir, name)


def _geometry(config):
    return build_geometry(config.extent, config.n_s, config.n_d, config.arc_fraction)


def _energy_grid(config):
    return build_energy_grid(
        config.e0, config.n_energies, config.energy_lo, config.energy_hi
    )


def _phantoms(config):
    truth = build_shepp_logan(
        contrast_scale=config.contrast_scale,
        grid_n=config.grid_n,
        extent=config.extent,
    )
    # prior_interior is relative to water; rasters carry 1e23 e/cm^3 units
    interior = (
        config.prior_interior * WATER_ELECTRON_DENSITY / DENSITY_UNIT_ELECTRONS
    )
    prior = build_prior(truth, interior)
    return truth, prior


def cmd_phantom(config, workdir):
    """Write ground-truth and prior rasters."""
    os.makedirs(workdir, exist_ok=True)
    truth, prior = _phantoms(config)
    cstb.write_cstb(_path(workdir, "phantom.cstb"), truth.raster)
    cstb.write_cstb(_path(workdir, "prior.cstb"), prior.raster)
    cstb.write_manifest(
        _path(workdir, "phantom.manifest"),
        {
            "config_sha256": config_hash(config),
            "phantom_sha256": cstb.file_sha256(_path(workdir, "phantom.cstb")),
            "prior_sha256": cstb.file_sha256(_path(workdir, "prior.cstb")),
            "density_min": truth.raster[truth.raster > 0].min(),
            "density_max": truth.raster.max(),
        },
    )
    return ["phantom.cstb", "prior.cstb", "phantom.manifest"]


def _check_phantom_manifest(config, workdir):
    manifest = cstb.read_manifest(_path(workdir, "phantom.manifest"))
    if manifest.get("config_sha256") != config_hash(config):
        raise cstb.HashMismatchError("configuration changed since cmd_phantom")
    cstb.check_upstream_hash(manifest, "phantom_sha256", _path(workdir, "phantom.cstb"))
    cstb.check_upstream_hash(manifest, "prior_sha256", _path(workdir, "prior.cstb"))
    return manifest


def cmd_assemble(config, workdir, which="prior"):
    """Assemble and store the forward matrix for the exact or prior map."""
    if which not in ("exact", "prior"):
        raise ValueError("which must be 'exact' or 'prior'")
    _check_phantom_manifest(config, workdir)
    truth, prior = _phantoms(config)
    field = truth if which == "exact" else prior
    mu = attenuation_from_phantom(field)
    geometry = _geometry(config)
    energy_grid = _energy_grid(config)
    basis = build_basis(config.grid_n, config.extent)
    name = f"matrix_{which}.cstb"
    shape = (
        energy_grid.n_bins * geometry.n_subproblems,
        basis.dim,
    )
    n_bytes = 8 * shape[0] * shape[1]
    if n_bytes <= _IN_MEMORY_MATRIX_BYTES:
        matrix = assemble_matrix(
            mu, basis, geometry, energy_grid, n_jobs=config.n_jobs, mu_label=which
        )
        cstb.write_cstb(_path(workdir, name), matrix.entries)
    else:
        with cstb.CstbWriter(_path(workdir, name), shape) as writer:
            assemble_matrix(
                mu, basis, geometry, energy_grid, writer=writer, mu_label=which
            )
    cstb.write_manifest(
        _path(workdir, f"matrix_{which}.manifest"),
        {
            "config_sha256": config_hash(config),
            "mu_identity": which,
            "matrix_sha256": cstb.file_sha256(_path(workdir, name)),
            "phantom_sha256": cstb.file_sha256(_path(workdir, "phantom.cstb")),
        },
    )
    return [name, f"matrix_{which}.manifest"]


def cmd_simulate(config, workdir):
    """Deterministic first-order data plus calibrated Monte-Carlo spectra."""
    _check_phantom_manifest(config, workdir)
    truth, _ = _phantoms(config)
    geometry = _geometry(config)
    energy_grid = _energy_grid(config)
    mu = attenuation_from_phantom(truth)
    g1 = apply_l1(
        mu,
        truth,
        geometry,
        energy_grid,
        grid_n=config.grid_n,
        extent=config.extent,
        refine=config.quad_refine,
    )
    tally = simulate(
        truth,
        geometry,
        energy_grid,
        McConfig(photons_per_source=config.photons_per_source, rng_seed=config.seed),
        n_jobs=config.n_jobs,
    )
    scale = calibrate_scale(tally.g1, g1)
    cstb.write_cstb(_path(workdir, "g1.cstb"), g1.values)
    cstb.write_cstb(_path(workdir, "g1_mc.cstb"), scale * tally.counts_first)
    cstb.write_cstb(_path(workdir, "g2_mc.cstb"), scale * tally.counts_second)
    cstb.write_manifest(
        _path(workdir, "simulate.manifest"),
        {
            "config_sha256": config_hash(config),
            "seed": config.seed,
            "photons_per_source": config.photons_per_source,
            "mc_scale": f"{scale:.17g}",
            "g1_sha256": cstb.file_sha256(_path(workdir, "g1.cstb")),
            "g1_mc_sha256": cstb.file_sha256(_path(workdir, "g1_mc.cstb")),
            "g2_mc_sha256": cstb.file_sha256(_path(workdir, "g2_mc.cstb")),
        },
    )
    return ["g1.cstb", "g1_mc.cstb", "g2_mc.cstb", "simulate.manifest"]


def cmd_noise(config, workdir):
    """Poisson-disturbed first-order data with its realised noise bounds."""
    manifest = cstb.read_manifest(_path(workdir, "simulate.manifest"))
    cstb.check_upstream_hash(manifest, "g1_sha256", _path(workdir, "g1.cstb"))
    g1 = cstb.read_cstb(_path(workdir, "g1.cstb"))
    noisy, delta = add_poisson_noise(g1, config.noise_level, seed=config.seed)
    cstb.write_cstb(_path(workdir, "g1_noisy.cstb"), noisy)
    cstb.write_cstb(_path(workdir, "delta_noise.cstb"), delta)
    cstb.write_manifest(
        _path(workdir, "noise.manifest"),
        {
            "config_sha256": config_hash(config),
            "seed": config.seed,
            "noise_level": config.noise_level,
            "g1_sha256": cstb.file_sha256(_path(workdir, "g1.cstb")),
            "g1_noisy_sha256": cstb.file_sha256(_path(workdir, "g1_noisy.cstb")),
            "delta_sha256": cstb.file_sha256(_path(workdir, "delta_noise.cstb")),
        },
    )
    return ["g1_noisy.cstb", "delta_noise.cstb", "noise.manifest"]


def _load_matrix(config, workdir, which):
    path = _path(workdir, f"matrix_{which}.cstb")
    manifest = cstb.read_manifest(_path(workdir, f"matrix_{which}.manifest"))
    cstb.check_upstream_hash(manifest, "matrix_sha256", path)
    size = os.path.getsize(path)
    entries = cstb.read_cstb(path, mmap=size > _IN_MEMORY_MATRIX_BYTES)
    return np.asarray(entries) if size <= _IN_MEMORY_MATRIX_BYTES else entries


def _truth_coefficients(config, workdir):
    """Project the ground truth onto the basis (cached as an artifact)."""
    path = _path(workdir, "truth_coeffs.cstb")
    if os.path.exists(path):
        return cstb.read_cstb(path)
    truth, _ = _phantoms(config)
    basis = build_basis(config.grid_n, config.extent)
    coeffs = project_l2(truth, basis).coefficients
    cstb.write_cstb(path, coeffs)
    return coeffs


def scenario_data(config, workdir, scenario):
    """Measured data of a scenario, as a flat vector plus its (P', K)."""
    if scenario not in SCENARIOS:
        raise ValueError(f"scenario must be one of {SCENARIOS}")
    g1 = cstb.read_cstb(_path(workdir, "g1.cstb"))
    if scenario == "i":
        data = g1
    elif scenario == "ii":
        data = cstb.read_cstb(_path(workdir, "g1_noisy.cstb"))
    else:
        g2 = cstb.read_cstb(_path(workdir, "g2_mc.cstb"))
        data = g1 + g2
        if scenario == "iv":
            data = data[1:] - data[:-1]
    return data


def cmd_uncertainty(config, workdir, scenario):
    """Per-subproblem model-uncertainty oracle for a scenario."""
    if scenario not in SCENARIOS:
        raise ValueError(f"scenario must be one of {SCENARIOS}")
    rows = _load_matrix(config, workdir, "prior")
    truth_coeffs = _truth_coefficients(config, workdir)
    rho = config.rho_value(np.linalg.norm(truth_coeffs))
    geometry = _geometry(config)
    n_k = geometry.n_subproblems
    applied = (rows @ truth_coeffs).reshape(-1, n_k)
    if scenario == "iv":
        applied = applied[1:] - applied[:-1]
    reference = scenario_data(config, workdir, "i" if scenario == "ii" else scenario)
    eta = estimate_eta(reference, applied, rho=rho)
    cstb.write_cstb(_path(workdir, f"eta_{scenario}.cstb"), eta)
    cstb.write_manifest(
        _path(workdir, f"uncertainty_{scenario}.manifest"),
        {
            "config_sha256": config_hash(config),
            "scenario": scenario,
            "rho": f"{rho:.17g}",
            "matrix_prior_sha256": cstb.file_sha256(
                _path(workdir, "matrix_prior.cstb")
            ),
            "eta_sha256": cstb.file_sha256(_path(workdir, f"eta_{scenario}.cstb")),
        },
    )
    return [f"eta_{scenario}.cstb", f"uncertainty_{scenario}.manifest"]


def _scenario_bounds(config, workdir, scenario):
    manifest = cstb.read_manifest(_path(workdir, f"uncertainty_{scenario}.manifest"))
    cstb.check_upstream_hash(
        manifest, "matrix_prior_sha256", _path(workdir, "matrix_prior.cstb")
    )
    cstb.check_upstream_hash(
        manifest, "eta_sha256", _path(workdir, f"eta_{scenario}.cstb")
    )
    eta = cstb.read_cstb(_path(workdir, f"eta_{scenario}.cstb"))
    rho = float(manifest["rho"])
    if scenario == "ii":
        delta = cstb.read_cstb(_path(workdir, "delta_noise.cstb"))
    else:
        delta = np.zeros_like(eta)
    return eta, delta, rho


def reconstruct(config, workdir, scenario, method):
    """Run one (scenario, method) reconstruction; returns the solver."""
    if method not in METHODS:
        raise ValueError(f"method must be one of {METHODS}")
    rows = _load_matrix(config, workdir, "prior")
    data = scenario_data(config, workdir, scenario)
    flat_data = data.ravel()
    if scenario == "iv":
        geometry = _geometry(config)
        rows = apply_p_to_matrix(
            rows, config.n_energies, geometry.n_subproblems
        )

    n = config.grid_n
    if method == "landweber":
        solver = Landweber(
            step_size=config.landweber_step_value(),
            iterations=config.landweber_iterations,
        )
        solver.fit(rows, flat_data)
    elif method == "tv":
        # normalise data units to unit peak so lambda is scale-free
        scale = float(np.abs(flat_data).max()) or 1.0
        solver = TVReconstructor(
            lam=config.lambda_tv_recon,
            beta=config.beta_tv,
            steps=config.tv_iterations,
            grid_shape=(n, n),
        )
        solver.fit(rows / scale, flat_data / scale)
    else:
        eta, delta, rho = _scenario_bounds(config, workdir, scenario)
        kwargs = dict(
            tau=config.tau, rho=rho, max_sweeps=config.max_sweeps
        )
        if method == "resesop":
            solver = ResesopKaczmarz(**kwargs)
        else:
            solver = ResesopTV(
                tv_every=config.tv_every,
                tv_steps=config.tv_steps,
                lam=config.lambda_tv,
                beta=config.beta_tv,
                grid_shape=(n, n),
                **kwargs,
            )
        solver.fit(rows, flat_data, eta=eta.ravel(), delta=delta.ravel())
    return solver


def cmd_reconstruct(config, workdir, scenario, method):
    """Reconstruct, rasterise, score and record one scenario/method pair."""
    solver = reconstruct(config, workdir, scenario, method)
    coeffs = solver.coef_
    basis = build_basis(config.grid_n, config.extent)
    grid = FineGrid(config.grid_n, config.extent)
    image = synthesize(CoefficientImage(coeffs, basis), grid.points).reshape(
        grid.m, grid.m
    )
    tag = f"{scenario}_{method}"
    cstb.write_cstb(_path(workdir, f"recon_{tag}.cstb"), coeffs)
    cstb.write_cstb(_path(workdir, f"recon_image_{tag}.cstb"), image)
    if hasattr(solver, "trace_"):
        solver.trace_.write_text(_path(workdir, f"trace_{tag}.txt"))

    truth = cstb.read_cstb(_path(workdir, "phantom.cstb"))
    report = compute_metrics(image, truth)
    csv_path = _path(workdir, "metrics.csv")
    fresh = not os.path.exists(csv_path)
    with open(csv_path, "a", encoding="utf-8") as fh:
        if fresh:
            fh.write(CSV_HEADER + "\n")
        fh.write(report.csv_row(scenario, method) + "\n")
    return report


def cmd_metrics(reconstruction_path, ground_truth_path, scenario="-", method="-"):
    rec = cstb.read_cstb(reconstruction_path)
    gt = cstb.read_cstb(ground_truth_path)
    report = compute_metrics(rec, gt)
    print(CSV_HEADER)
    print(report.csv_row(scenario, method))
    return report


def cmd_export_png(input_path, output_path, window_from=None):
    """8-bit grayscale export with linear windowing."""
    from PIL import Image

    image = cstb.read_cstb(input_path)
    if image.ndim != 2:
        raise ValueError("PNG export needs a 2D image")
    ref = cstb.read_cstb(window_from) if window_from else image
    lo, hi = float(ref.min()), float(ref.max())
    if hi <= lo:
        hi = lo + 1.0
    quantised = np.clip((image - lo) / (hi - lo), 0.0, 1.0)
    # orient with y upward for display
    pixels = (255.0 * quantised).round().astype(np.uint8).T[::-1]
    Image.fromarray(pixels, mode="L").save(output_path)
    return output_path


def _build_parser():
    parser = argparse.ArgumentParser(
        prog="comptomo",
        description="Compton-scattering tomography pipeline",
    )
    parser.add_argument("--config", help="key=value configuration file")
    parser.add_argument(
        "--preset", choices=("full", "desk"), default="full",
        help="base preset when no --config is given",
    )
    parser.add_argument("--workdir", default="runs/default")
    parser.add_argument(
        "--set", action="append", default=[], metavar="KEY=VALUE",
        help="override a configuration key",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("phantom")
    p = sub.add_parser("assemble")
    p.add_argument("--which", choices=("exact", "prior"), default="prior")
    sub.add_parser("simulate")
    sub.add_parser("noise")
    p = sub.add_parser("uncertainty")
    p.add_argument("--scenario", choices=SCENARIOS, required=True)
    p = sub.add_parser("reconstruct")
    p.add_argument("--scenario", choices=SCENARIOS, required=True)
    p.add_argument("--method", choices=METHODS, required=True)
    p = sub.add_parser("metrics")
    p.add_argument("--reconstruction", required=True)
    p.add_argument("--ground-truth", required=True)
    p.add_argument("--scenario", default="-")
    p.add_argument("--method", default="-")
    p = sub.add_parser("export-png")
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--window-from")
    return parser


def main(argv=None):
    args = _build_parser().parse_args(argv)
    if args.config:
        config = load_config(args.config)
    elif args.preset == "desk":
        config = desk_config()
    else:
        config = RunConfig()
    config = apply_overrides(config, args.set)
    os.makedirs(args.workdir, exist_ok=True)

    if args.command == "phantom":
        outputs = cmd_phantom(config, args.workdir)
    elif args.command == "assemble":
        outputs = cmd_assemble(config, args.workdir, which=args.which)
    elif args.command == "simulate":
        outputs = cmd_simulate(config, args.workdir)
    elif args.command == "noise":
        outputs = cmd_noise(config, args.workdir)
    elif args.command == "uncertainty":
        outputs = cmd_uncertainty(config, args.workdir, args.scenario)
    elif args.command == "reconstruct":
        report = cmd_reconstruct(config, args.workdir, args.scenario, args.method)
        print(CSV_HEADER)
        print(report.csv_row(args.scenario, args.method))
        return 0
    elif args.command == "metrics":
        cmd_metrics(
            args.reconstruction, args.ground_truth, args.scenario, args.method
        )
        return 0
    elif args.command == "export-png":
        outputs = [cmd_export_png(args.input, args.output, args.window_from)]
    else:  # pragma: no cover
        raise AssertionError(args.command)
    for name in outputs:
        print(name)
    return 0


if __name__ == "__main__":
    sys.exit(main())
