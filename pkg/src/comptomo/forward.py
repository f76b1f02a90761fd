"""First-order scattering operator and its discretisations.

A photon leaving source ``s`` and scattering once at ``x`` reaches detector
``d`` with the energy fixed by the scattering angle, attenuated along both
legs and spread photometrically.  Integrating the electron density against
this weight over each energy bin gives the expected first-order spectrum.

Discretisation choices, shared by every operator flavour:

* quadrature on a raster twice as fine as the reconstruction grid
  (trapezoidal weights), optionally refined further for convergence checks;
* the energy delta deposits each cell's weight linearly between the two
  energy-bin centres bracketing its scattering phase, which keeps the
  discrete spectra stable under quadrature refinement;
* attenuation line integrals are sampled with a trapezoid rule at half the
  reconstruction grid step, reading densities by bilinear interpolation,
  precomputed per source/detector on the base fine grid and interpolated
  at refined quadrature points.

Two operator flavours exist: the linear one for a fixed attenuation map
(exact or prior), assembled into a dense matrix over the Gaussian basis,
and the nonlinear one where the transported density attenuates itself,
together with its derivative.
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse

from .basis import basis_values_at, synthesize
from .geometry import MC2_KEV
from .phantom import DENSITY_UNIT_ELECTRONS, bilinear_on_grid

CLASSICAL_ELECTRON_RADIUS_CM = 2.8179403262e-13
THOMSON_CROSS_SECTION_CM2 = 8.0 * np.pi / 3.0 * CLASSICAL_ELECTRON_RADIUS_CM**2
WEIGHT_CONSTANT = 1.0  # photometric constant C; spectra are in relative units


def klein_nishina_total(energy_kev):
    """Total Compton cross-section per electron [cm^2] at the given energy."""
    eps = np.asarray(energy_kev, dtype=float) / MC2_KEV
    if np.any(eps <= 0):
        raise ValueError("energy must be positive")
    one2 = 1.0 + 2.0 * eps
    log2 = np.log1p(2.0 * eps)
    sigma = (
        2.0
        * np.pi
        * CLASSICAL_ELECTRON_RADIUS_CM**2
        * (
            (1.0 + eps) / eps**2 * (2.0 * (1.0 + eps) / one2 - log2 / eps)
            + log2 / (2.0 * eps)
            - (1.0 + 3.0 * eps) / one2**2
        )
    )
    return float(sigma) if sigma.ndim == 0 else sigma


def klein_nishina_differential(cos_omega, energy_kev):
    """Differential Compton cross-section per electron [cm^2/sr]."""
    eps = energy_kev / MC2_KEV
    c = np.asarray(cos_omega, dtype=float)
    ratio = 1.0 / (1.0 + eps * (1.0 - c))  # scattered over incident energy
    return (
        0.5
        * CLASSICAL_ELECTRON_RADIUS_CM**2
        * ratio**2
        * (ratio + 1.0 / ratio - (1.0 - c * c))
    )


@dataclass(frozen=True)
class AttenuationModel:
    """Linear attenuation from an electron-density field.

    ``mu(x, E) = sigma_total(E) * density_scale * density(x)`` [1/cm], with
    ``density_scale`` converting map values to absolute electrons per cm^3;
    the photoelectric contribution is neglected.  ``support_radius``, when
    known, bounds the density support around the origin and lets line
    integrals skip the vacuum outside.
    """

    density_field: object  # callable (n, 2) -> (n,)
    density_scale: float = DENSITY_UNIT_ELECTRONS
    sigma_total: object = staticmethod(klein_nishina_total)
    support_radius: float = None

    def density(self, points):
        return np.asarray(self.density_field(points), dtype=float)

    def mu(self, points, energy_kev):
        return self.sigma_total(energy_kev) * self.density_scale * self.density(points)


def attenuation_from_phantom(phantom):
    """Attenuation model reading densities from a phantom raster."""
    return AttenuationModel(
        density_field=phantom,
        support_radius=phantom.support_radius(),
    )


@dataclass(frozen=True)
class Spectrum:
    """Per-energy, per-(source, detector) expected intensities or counts."""

    values: np.ndarray = field(repr=False)  # (P, K)
    energy_grid: object = None
    geometry: object = None

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim != 2:
            raise ValueError("spectrum values must be a (P, K) array")
        if not np.all(np.isfinite(v)):
            raise ValueError("spectrum values must be finite")
        object.__setattr__(self, "values", v)

    @property
    def shape(self):
        return self.values.shape

    def flux(self):
        """L1 mass of the spectrum."""
        return float(np.abs(self.values).sum())


@dataclass(frozen=True)
class ForwardMatrix:
    """Dense matrix of the fully discrete linear operator.

    Row ``p * K + k`` holds the response of energy bin ``p`` at detector
    tuple ``k`` to each basis function (row-major over energies, then
    tuples).
    """

    entries: np.ndarray = field(repr=False)  # (P*K, D), may be a memmap
    geometry: object = None
    energy_grid: object = None
    basis: object = None
    mu_label: str = ""

    @property
    def n_bins(self):
        return self.entries.shape[0] // self.geometry.n_subproblems

    def apply(self, coefficients):
        """Matrix-vector product reshaped to a (P, K) spectrum."""
        k = self.geometry.n_subproblems
        flat = self.entries @ np.asarray(coefficients, dtype=float)
        return Spectrum(
            values=flat.reshape(-1, k),
            energy_grid=self.energy_grid,
            geometry=self.geometry,
        )

    def adjoint(self, spectrum_values):
        return self.entries.T @ np.asarray(spectrum_values, dtype=float).reshape(-1)


class FineGrid:
    """Quadrature raster over the scanned square: step ``extent / (2 n R)``."""

    def __init__(self, grid_n, extent, refine=1):
        if grid_n < 1 or refine < 1:
            raise ValueError("grid_n and refine must be positive")
        self.grid_n = int(grid_n)
        self.extent = float(extent)
        self.refine = int(refine)
        m = 2 * grid_n * refine
        self.m = m
        self.step = extent / m
        self.coords = -extent / 2.0 + self.step * np.arange(m)
        xx, yy = np.meshgrid(self.coords, self.coords, indexing="ij")
        self.points = np.stack([xx.ravel(), yy.ravel()], axis=-1)
        w = np.full(m, self.step)
        w[0] *= 0.5
        w[-1] *= 0.5
        self.weights = (w[:, None] * w[None, :]).ravel()
        # line-integral sampling step: half the reconstruction grid step
        self.line_step = (extent / grid_n) / 2.0


def segment_integrals(density, anchor, targets, step, support_radius=None):
    """Trapezoid line integrals of ``density`` from ``anchor`` to each target.

    With ``support_radius`` given, only the part of each segment inside the
    disk of that radius around the origin is sampled (the density vanishes
    outside), which also caps the sample count by the disk diameter.
    """
    targets = np.atleast_2d(np.asarray(targets, dtype=float))
    anchor = np.asarray(anchor, dtype=float)
    diff = targets - anchor
    lengths = np.linalg.norm(diff, axis=1)

    if support_radius is None:
        t_lo = np.zeros(targets.shape[0])
        t_hi = np.ones(targets.shape[0])
        max_len = float(lengths.max(initial=0.0))
    else:
        # clip the segment parameter to the chord inside the support disk
        a2 = float(anchor @ anchor)
        b = targets @ anchor - a2  # (d . a) with d = target - anchor
        d2 = np.maximum(np.einsum("ij,ij->i", diff, diff), 1e-300)
        disc = b * b - d2 * (a2 - support_radius**2)
        hit = disc > 0.0
        sq = np.sqrt(np.maximum(disc, 0.0))
        t_lo = np.clip(np.where(hit, (-b - sq) / d2, 1.0), 0.0, 1.0)
        t_hi = np.clip(np.where(hit, (-b + sq) / d2, 1.0), t_lo, 1.0)
        max_len = float(((t_hi - t_lo) * lengths).max(initial=0.0))

    if max_len == 0.0:
        return np.zeros(targets.shape[0])
    n_samp = max(int(np.ceil(max_len / step)) + 1, 2)
    base = np.linspace(0.0, 1.0, n_samp)
    w = np.full(n_samp, 1.0 / (n_samp - 1))
    w[0] *= 0.5
    w[-1] *= 0.5

    out = np.empty(targets.shape[0])
    chunk = max(1, int(2_000_000 // n_samp))
    for lo in range(0, targets.shape[0], chunk):
        sl = slice(lo, lo + chunk)
        t = t_lo[sl][None, :] + base[:, None] * (t_hi[sl] - t_lo[sl])[None, :]
        pos = anchor[None, None, :] + t[:, :, None] * diff[sl][None, :, :]
        vals = density(pos.reshape(-1, 2)).reshape(n_samp, -1)
        seg_len = (t_hi[sl] - t_lo[sl]) * lengths[sl]
        out[sl] = (w @ vals) * seg_len
    return out


class PairWeights:
    """Per-(source, detector) scattering phases and physical weights.

    Density line integrals from every source and to every detector are
    precomputed on the base fine grid (twice the reconstruction grid); at
    refined quadrature points they are read back by bilinear interpolation,
    mirroring the precompute-and-interpolate evaluation of the weight.
    """

    def __init__(self, mu, geometry, energy_grid, grid, extra_density=None,
                 extra_support=None):
        self.geometry = geometry
        self.energy_grid = energy_grid
        self.grid = grid
        base = grid if grid.refine == 1 else FineGrid(grid.grid_n, grid.extent)
        self._base = base
        e0 = energy_grid.e0
        n_s, n_d = geometry.n_s, geometry.n_d

        def integral_maps(density, support):
            src = np.empty((n_s, base.m, base.m))
            det = np.empty((n_s, n_d, base.m, base.m))
            for i in range(n_s):
                src[i] = segment_integrals(
                    density, geometry.sources[i], base.points, base.line_step, support
                ).reshape(base.m, base.m)
                for j in range(n_d):
                    det[i, j] = segment_integrals(
                        density,
                        geometry.detectors[i, j],
                        base.points,
                        base.line_step,
                        support,
                    ).reshape(base.m, base.m)
            return src, det

        self._src_int, self._det_int = integral_maps(
            mu.density, mu.support_radius
        )
        self.extra = extra_density is not None
        if self.extra:
            self._extra_src, self._extra_det = integral_maps(
                extra_density, extra_support
            )

        self._mu = mu
        self._sigma0 = mu.sigma_total(e0)
        self._e0 = e0

    def _map_at_points(self, raster):
        if self.grid.refine == 1:
            return raster.ravel()
        return bilinear_on_grid(raster, self.grid.extent, self.grid.points)

    def pair(self, k):
        """Phases and weights of subproblem ``k`` on the quadrature grid.

        Returns
        -------
        e_scat : ndarray
            Scattered energy per fine cell (undefined entries hold e0).
        valid : ndarray, bool
            Kinematically valid cells (off the source-detector line).
        w1 : ndarray
            Attenuation/dispersion weight per cell.
        sigma_scat : ndarray
            Compton cross-section at the scattered energy (reused by the
            derivative).
        """
        geom = self.geometry
        i_src, i_det = divmod(int(k), geom.n_d)
        s = geom.sources[i_src]
        d = geom.detectors[i_src, i_det]
        pts = self.grid.points

        xs = pts - s
        r_sx2 = np.maximum(np.einsum("ij,ij->i", xs, xs), 1e-300)
        ds = d - s
        nds = np.linalg.norm(ds)
        kappa = (xs @ ds) / (np.sqrt(r_sx2) * nds)
        kappa = np.clip(kappa, -1.0, 1.0)
        rho = np.sqrt(r_sx2) / nds
        valid = np.abs(kappa) < 1.0 - 1e-14
        cot = np.where(
            valid, (kappa - rho) / np.sqrt(np.maximum(1.0 - kappa * kappa, 1e-300)), 0.0
        )
        omega = np.arctan2(1.0, cot)
        e_scat = self._e0 / (1.0 + (self._e0 / MC2_KEV) * (1.0 - np.cos(omega)))
        e_scat = np.where(valid, e_scat, self._e0)

        xd = d - pts
        r_xd2 = np.maximum(np.einsum("ij,ij->i", xd, xd), 1e-300)
        sigma_scat = self._mu.sigma_total(e_scat)
        attenuation = self._mu.density_scale * (
            self._sigma0 * self._map_at_points(self._src_int[i_src])
            + sigma_scat * self._map_at_points(self._det_int[i_src, i_det])
        )
        w1 = WEIGHT_CONSTANT * np.exp(-attenuation) / (r_sx2 * r_xd2)
        return e_scat, valid, w1, sigma_scat

    def extra_path_integral(self, k, sigma_scat):
        """Line integral of the extra density along the full scattering path."""
        i_src, i_det = divmod(int(k), self.geometry.n_d)
        return self._mu.density_scale * (
            self._sigma0 * self._map_at_points(self._extra_src[i_src])
            + sigma_scat * self._map_at_points(self._extra_det[i_src, i_det])
        )


def deposit_fractions(energy_grid, e_scat):
    """Linear deposition of energies onto the two bracketing bin centres.

    Returns (left_index, left_weight, right_index, right_weight) with
    negative indices marking a discarded share.  The deposit of a cell is a
    continuous function of its scattering phase, so refined quadratures
    converge instead of flickering across bin edges.
    """
    centers = energy_grid.energies
    if centers.size < 2:
        idx = energy_grid.bin_index(e_scat)
        return idx, np.ones_like(e_scat), np.full(idx.shape, -1), np.zeros_like(e_scat)
    de = centers[1] - centers[0]
    pos = (e_scat - centers[0]) / de
    left = np.floor(pos).astype(np.intp)
    frac = pos - left
    right = left + 1
    left_w = 1.0 - frac
    right_w = frac
    n = centers.size
    left_ok = (left >= 0) & (left < n)
    right_ok = (right >= 0) & (right < n)
    left = np.where(left_ok, left, -1)
    right = np.where(right_ok, right, -1)
    return left, np.where(left_ok, left_w, 0.0), right, np.where(right_ok, right_w, 0.0)


def _deposit_column(energy_grid, e_scat, valid, values):
    """Accumulate weighted cell values into a spectrum column."""
    p = energy_grid.n_bins
    left, lw, right, rw = deposit_fractions(energy_grid, e_scat)
    col = np.zeros(p)
    ok = valid & (left >= 0)
    np.add.at(col, left[ok], (values * lw)[ok])
    ok = valid & (right >= 0)
    np.add.at(col, right[ok], (values * rw)[ok])
    return col


def weight_w1(mu, x, d, s, e0, line_step=0.15):
    """Pointwise attenuation/dispersion weight of a single scattering path."""
    x = np.asarray(x, dtype=float)
    d = np.asarray(d, dtype=float)
    s = np.asarray(s, dtype=float)
    r_sx2 = float(np.sum((x - s) ** 2))
    r_xd2 = float(np.sum((d - x) ** 2))
    if r_sx2 == 0.0 or r_xd2 == 0.0:
        raise ValueError("scattering point coincides with source or detector")
    from .geometry import (
        SingularConfigurationError,
        compton_energy,
        kappa_rho,
        scatter_phase,
    )

    try:
        e_scat = scatter_phase(x, d, s, e0)
    except SingularConfigurationError:
        # x on the source-detector line: the scattering angle limit is 0
        # between s and d (forward) and pi beyond, so the weight extends
        # continuously even though the phase binning is singular there
        kappa, rho = kappa_rho(x, d, s)
        omega = 0.0 if (kappa > 0.0 and rho < 1.0) else np.pi
        e_scat = compton_energy(e0, omega)
    a_in = segment_integrals(mu.density, s, x[None, :], line_step)[0]
    a_out = segment_integrals(mu.density, x, d[None, :], line_step)[0]
    attenuation = mu.density_scale * (
        mu.sigma_total(e0) * a_in + mu.sigma_total(e_scat) * a_out
    )
    return WEIGHT_CONSTANT * np.exp(-attenuation) / (r_sx2 * r_xd2)


def apply_l1(mu, f, geometry, energy_grid, grid_n, extent, refine=1, weights=None):
    """Expected first-order spectrum of a density field ``f``.

    Parameters
    ----------
    mu : AttenuationModel
        Attenuation map used in the weight (exact or prior).
    f : callable
        Transported density, evaluated on the fine raster.
    grid_n, extent : int, float
        Reconstruction grid the quadrature refines (fine step is
        ``extent / (2 grid_n refine)``).
    weights : PairWeights, optional
        Reuse precomputed weights (must match the other arguments).
    """
    grid = weights.grid if weights is not None else FineGrid(grid_n, extent, refine)
    pw = weights if weights is not None else PairWeights(mu, geometry, energy_grid, grid)
    fv = np.asarray(f(grid.points), dtype=float) * grid.weights
    p = energy_grid.n_bins
    out = np.zeros((p, geometry.n_subproblems))
    for k in range(geometry.n_subproblems):
        e_scat, valid, w1, _ = pw.pair(k)
        out[:, k] = _deposit_column(energy_grid, e_scat, valid, w1 * fv)
    return Spectrum(values=out, energy_grid=energy_grid, geometry=geometry)


def assemble_matrix(
    mu, basis, geometry, energy_grid, refine=1, n_jobs=1, writer=None, mu_label=""
):
    """Assemble the dense matrix of the linear operator over the basis.

    Column ``nm`` is the flattened spectrum of basis function ``e_nm``.  The
    computation runs per detector tuple; with a ``writer`` the (P, D) row
    blocks are streamed to disk instead of being held in memory.

    Determinism: tuples write disjoint row sets, so the result is identical
    for any ``n_jobs``.
    """
    grid = FineGrid(basis.n, basis.extent, refine)
    pw = PairWeights(mu, geometry, energy_grid, grid)
    synth = basis_values_at(basis, grid.points)
    synth = synth.multiply(grid.weights[:, None]).tocsc()

    p = energy_grid.n_bins
    n_k = geometry.n_subproblems
    n_cells = grid.points.shape[0]
    entries = None
    if writer is None:
        entries = np.zeros((p * n_k, basis.dim))

    def one_pair(k):
        e_scat, valid, w1, _ = pw.pair(k)
        left, lw, right, rw = deposit_fractions(energy_grid, e_scat)
        rows_idx = np.concatenate([left, right])
        vals = np.concatenate([w1 * lw, w1 * rw])
        cols_idx = np.concatenate([np.arange(n_cells), np.arange(n_cells)])
        ok = np.concatenate([valid, valid]) & (rows_idx >= 0) & (vals != 0.0)
        z = sparse.csr_matrix(
            (vals[ok], (rows_idx[ok], cols_idx[ok])), shape=(p, n_cells)
        )
        block = np.asarray((z @ synth).todense())
        rows = np.arange(p) * n_k + k
        if writer is None:
            entries[rows] = block
        else:
            writer.write_strided_rows(rows, block)
        return k

    if n_jobs == 1 or writer is not None:
        for k in range(n_k):
            one_pair(k)
    else:
        with ThreadPoolExecutor(max_workers=n_jobs) as pool:
            list(pool.map(one_pair, range(n_k)))

    if writer is not None:
        return None
    return ForwardMatrix(
        entries=entries,
        geometry=geometry,
        energy_grid=energy_grid,
        basis=basis,
        mu_label=mu_label,
    )


def _raster_field(image):
    """Rasterise a coefficient image on its fine grid for bilinear reads."""
    basis = image.basis
    grid = FineGrid(basis.n, basis.extent)
    vals = synthesize(image, grid.points).reshape(grid.m, grid.m)
    extent = basis.extent

    def density(points):
        return bilinear_on_grid(vals, extent, points)

    # bound the support for line-integral clipping
    nz = np.flatnonzero(np.abs(vals).ravel() > 0.0)
    if nz.size:
        radius = float(
            np.linalg.norm(grid.points[nz], axis=1).max() + 2.0 * grid.step
        )
    else:
        radius = 0.0
    return density, vals, radius


def apply_nonlinear_l1(image, geometry, energy_grid, refine=1):
    """First-order spectrum with the transported density attenuating itself."""
    density, vals, radius = _raster_field(image)
    if vals.min() < -1e-9:
        raise ValueError(
            f"density must be nonnegative, found minimum {vals.min():.3g}"
        )
    mu = AttenuationModel(density_field=density, support_radius=radius)
    return apply_l1(
        mu,
        density,
        geometry,
        energy_grid,
        grid_n=image.basis.n,
        extent=image.basis.extent,
        refine=refine,
    )


def frechet_l1(image, direction, geometry, energy_grid, refine=1):
    """Derivative of the self-attenuating operator at ``image`` along ``direction``.

    Two contributions per fine cell: the transported perturbation under the
    current weight, and the weight perturbation (minus the path integral of
    the perturbation) acting on the current density.
    """
    density, vals, radius = _raster_field(image)
    if vals.min() < -1e-9:
        raise ValueError(
            f"density must be nonnegative, found minimum {vals.min():.3g}"
        )
    h_density, _, h_radius = _raster_field(direction)
    mu = AttenuationModel(density_field=density, support_radius=radius)
    basis = image.basis
    grid = FineGrid(basis.n, basis.extent, refine)
    pw = PairWeights(
        mu, geometry, energy_grid, grid,
        extra_density=h_density, extra_support=h_radius,
    )

    fv = density(grid.points) * grid.weights
    hv = h_density(grid.points) * grid.weights
    p = energy_grid.n_bins
    out = np.zeros((p, geometry.n_subproblems))
    for k in range(geometry.n_subproblems):
        e_scat, valid, w1, sigma_scat = pw.pair(k)
        xh = pw.extra_path_integral(k, sigma_scat)
        contrib = w1 * (hv - xh * fv)
        out[:, k] = _deposit_column(energy_grid, e_scat, valid, contrib)
    return Spectrum(values=out, energy_grid=energy_grid, geometry=geometry)


def tangential_cone_ratio(image, direction, geometry, energy_grid, refine=1):
    """Nonlinearity diagnostic: Taylor remainder over the finite difference."""
    from .basis import CoefficientImage

    f_plus = CoefficientImage(
        image.coefficients + direction.coefficients, image.basis
    )
    g_plus = apply_nonlinear_l1(f_plus, geometry, energy_grid, refine).values
    g_base = apply_nonlinear_l1(image, geometry, energy_grid, refine).values
    g_lin = frechet_l1(image, direction, geometry, energy_grid, refine).values
    denom = np.linalg.norm(g_plus - g_base)
    if denom == 0.0:
        raise ZeroDivisionError("finite difference vanishes; ratio undefined")
    return float(np.linalg.norm(g_plus - g_base - g_lin) / denom)


def apply_p_operator(spectrum):
    """Forward difference along the energy axis, per detector tuple."""
    values = spectrum.values if isinstance(spectrum, Spectrum) else np.asarray(spectrum)
    if values.shape[0] < 2:
        raise ValueError("need at least two energy bins for finite differences")
    diff = values[1:] - values[:-1]
    if isinstance(spectrum, Spectrum):
        return Spectrum(
            values=diff, energy_grid=spectrum.energy_grid, geometry=spectrum.geometry
        )
    return diff


def apply_p_to_matrix(entries, n_bins, n_subproblems):
    """Row-space finite difference matching ``apply_p_operator`` on spectra."""
    e = np.asarray(entries)
    if e.shape[0] != n_bins * n_subproblems:
        raise ValueError("row count does not match the (P, K) layout")
    cube = e.reshape(n_bins, n_subproblems, -1)
    return (cube[1:] - cube[:-1]).reshape((n_bins - 1) * n_subproblems, -1)
