"""Analog Monte-Carlo photon transport for first- and second-order spectra.

Photons leave each source into the cone subtending the phantom support,
free-fly through the heterogeneous density by Woodcock (delta) tracking
against a constant majorant, scatter with Klein-Nishina kinematics, and are
tallied when they actually cross the scanner circle inside a detector's
angular window.  Histories end after ``max_orders`` scatterings or when the
photon leaves the scanner.

Tallies are integer counts per (energy bin, detector tuple), accumulated in
fixed-size partitions with counter-based RNG streams keyed on (seed,
source, partition), so results are bit-identical regardless of how the
partitions are scheduled across threads.
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .forward import Spectrum, klein_nishina_total
from .phantom import DENSITY_UNIT_ELECTRONS
from .geometry import MC2_KEV

_PARTITION = 1 << 18  # photons per RNG partition


class BiasedTrackingError(ValueError):
    """Raised when the Woodcock majorant underestimates the attenuation."""


@dataclass(frozen=True)
class McConfig:
    """Simulation parameters.

    ``detector_half_width`` defaults to half the detector spacing, tiling
    the sampled arc without gaps or overlap.  ``majorant`` defaults to the
    attenuation of the densest raster cell at the softest trackable energy
    and is validated against the raster if supplied.
    """

    photons_per_source: int
    max_orders: int = 2
    rng_seed: int = 0
    detector_half_width: float = None
    majorant: float = None

    def __post_init__(self):
        if self.photons_per_source < 1:
            raise ValueError("need at least one photon per source")
        if self.max_orders not in (1, 2):
            raise ValueError("max_orders must be 1 or 2")


@dataclass(frozen=True)
class McTally:
    """Integer scatter-order tallies plus their spectrum views."""

    counts_first: np.ndarray = field(repr=False)
    counts_second: np.ndarray = field(repr=False)
    emitted_per_source: int = 0
    energy_grid: object = None
    geometry: object = None

    @property
    def g1(self):
        return Spectrum(
            values=self.counts_first.astype(float),
            energy_grid=self.energy_grid,
            geometry=self.geometry,
        )

    @property
    def g2(self):
        return Spectrum(
            values=self.counts_second.astype(float),
            energy_grid=self.energy_grid,
            geometry=self.geometry,
        )


def lowest_tracked_energy(e0, max_orders):
    """Energy floor after the allowed number of backscatterings."""
    e = float(e0)
    for _ in range(max_orders):
        e = e / (1.0 + (e / MC2_KEV) * 2.0)
    return e


def default_majorant(phantom, e0, max_orders):
    density_max = float(phantom.raster.max())
    sigma_max = klein_nishina_total(lowest_tracked_energy(e0, max_orders))
    return sigma_max * DENSITY_UNIT_ELECTRONS * density_max


def sample_klein_nishina(rng, energies):
    """Scattering-angle cosines from the Klein-Nishina distribution.

    Rejection sampling with a uniform-in-cosine proposal; the acceptance
    ratio is the differential cross-section over its forward peak.
    """
    n = energies.size
    cos_out = np.empty(n)
    pending = np.arange(n)
    eps = energies / MC2_KEV
    while pending.size:
        c = 1.0 - 2.0 * rng.random(pending.size)
        e = eps[pending]
        ratio = 1.0 / (1.0 + e * (1.0 - c))
        # dsigma/dOmega relative to its value at c = 1 (where it equals 1)
        accept_prob = 0.5 * ratio * ratio * (ratio + 1.0 / ratio - (1.0 - c * c))
        take = rng.random(pending.size) <= accept_prob
        cos_out[pending[take]] = c[take]
        pending = pending[~take]
    return cos_out


class _Tracker:
    """Shared geometry/tally context for all partitions of a run."""

    def __init__(self, phantom, geometry, energy_grid, config):
        self.phantom = phantom
        self.geometry = geometry
        self.energy_grid = energy_grid
        self.config = config
        self.e0 = energy_grid.e0

        self.majorant = (
            config.majorant
            if config.majorant is not None
            else default_majorant(phantom, self.e0, config.max_orders)
        )
        needed = default_majorant(phantom, self.e0, config.max_orders)
        if self.majorant < needed * (1.0 - 1e-12):
            raise BiasedTrackingError(
                f"majorant {self.majorant:.4g}/cm is below the raster maximum "
                f"{needed:.4g}/cm; free flights would be biased"
            )
        self.disk_radius = min(
            phantom.support_radius(), phantom.extent * np.sqrt(0.5)
        )
        self.scan_radius = geometry.radius
        span = geometry.arc_fraction * 2.0 * np.pi
        self.det_spacing = span / geometry.n_d
        self.half_width = (
            config.detector_half_width
            if config.detector_half_width is not None
            else self.det_spacing / 2.0
        )
        self.density_scale = DENSITY_UNIT_ELECTRONS

    def mu_at(self, points, energies):
        from .phantom import eval_bilinear

        dens = eval_bilinear(self.phantom, points)
        return klein_nishina_total(energies) * self.density_scale * dens

    def detector_index(self, i_src, beta):
        """Detector index per exit angle, -1 outside every window."""
        start = self.geometry.source_angles[i_src] + (
            1.0 - self.geometry.arc_fraction
        ) * np.pi
        rel = np.mod(beta - start, 2.0 * np.pi)
        j = np.floor(rel / self.det_spacing).astype(np.intp)
        centred = np.abs(rel - (j + 0.5) * self.det_spacing) <= self.half_width
        ok = (j >= 0) & (j < self.geometry.n_d) & (rel < self.geometry.arc_fraction * 2 * np.pi) & centred
        return np.where(ok, j, -1)


def _run_partition(tracker, i_src, part, n_photons, history=None, quota=0):
    """Transport one photon partition; returns integer tallies.

    ``history`` is an optional list receiving up to ``quota`` detected
    single-scatter records (collision point, energy chain) for physics
    cross-checks; it makes per-photon bookkeeping explicit and is meant for
    small partitions only.
    """
    cfg = tracker.config
    rng = np.random.Generator(
        np.random.Philox(key=[cfg.rng_seed, (int(i_src) << 32) | int(part)])
    )
    geom = tracker.geometry
    p_bins = tracker.energy_grid.n_bins
    n_k = geom.n_subproblems
    counts = [
        np.zeros((p_bins, n_k), dtype=np.int64) for _ in range(cfg.max_orders)
    ]

    source = geom.sources[i_src]
    to_origin = np.arctan2(-source[1], -source[0])
    sin_half = min(tracker.disk_radius / tracker.scan_radius, 1.0)
    half_angle = np.arcsin(sin_half) if sin_half > 0 else 1e-6
    angles = to_origin + (2.0 * rng.random(n_photons) - 1.0) * half_angle

    pos = np.tile(source, (n_photons, 1))
    direction = np.stack([np.cos(angles), np.sin(angles)], axis=-1)
    energy = np.full(n_photons, tracker.e0)
    n_scat = np.zeros(n_photons, dtype=np.int8)
    chains = {} if history is not None else None

    alive = np.arange(n_photons)
    mu_maj = tracker.majorant
    r_disk = tracker.disk_radius
    r_scan = tracker.scan_radius

    def tally_exit(idx):
        """Photons leaving along a straight line: cross the circle, tally."""
        if idx.size == 0:
            return
        p = pos[idx]
        d = direction[idx]
        pd = np.einsum("ij,ij->i", p, d)
        rad = pd * pd - (np.einsum("ij,ij->i", p, p) - r_scan * r_scan)
        t = -pd + np.sqrt(np.maximum(rad, 0.0))
        cross = p + t[:, None] * d
        beta = np.arctan2(cross[:, 1], cross[:, 0])
        det = tracker.detector_index(i_src, beta)
        orders = n_scat[idx]
        bins = tracker.energy_grid.bin_index(energy[idx])
        ok = (det >= 0) & (bins >= 0) & (orders >= 1)
        if not np.any(ok):
            return
        sel = np.flatnonzero(ok)
        k_idx = i_src * geom.n_d + det[sel]
        for order in range(1, cfg.max_orders + 1):
            mask = orders[sel] == order
            if np.any(mask):
                np.add.at(counts[order - 1], (bins[sel][mask], k_idx[mask]), 1)
        if chains is not None and len(history) < quota:
            for j, k in zip(sel, k_idx):
                gi = int(idx[j])
                if len(history) >= quota:
                    break
                if orders[j] == 1 and gi in chains:
                    rec = chains[gi]
                    history.append(
                        {
                            "k": int(k),
                            "detector": geom.detectors[i_src, int(det[j])].copy(),
                            "hit_point": cross[j].copy(),
                            "source": source.copy(),
                            "energy": float(energy[gi]),
                            "bin": int(bins[j]),
                            "scatter_point": rec["point"],
                            "chain": rec["chain"],
                        }
                    )

    while alive.size:
        # photons outside the support disk either enter it or leave for good
        p = pos[alive]
        r2 = np.einsum("ij,ij->i", p, p)
        outside = r2 > r_disk * r_disk
        if np.any(outside):
            o = alive[outside]
            po = pos[o]
            do = direction[o]
            pd = np.einsum("ij,ij->i", po, do)
            disc = pd * pd - (np.einsum("ij,ij->i", po, po) - r_disk * r_disk)
            t_in = -pd - np.sqrt(np.maximum(disc, 0.0))
            enters = (disc > 0.0) & (t_in > 1e-12)
            tally_exit(o[~enters])
            stay = o[enters]
            pos[stay] = pos[stay] + t_in[enters][:, None] * direction[stay]
            alive = np.concatenate([alive[~outside], stay])
            if alive.size == 0:
                break

        # Woodcock flight inside the disk
        p = pos[alive]
        d = direction[alive]
        tau = -np.log(rng.random(alive.size)) / mu_maj
        pos[alive] = p + tau[:, None] * d
        p = pos[alive]
        left = np.einsum("ij,ij->i", p, p) > r_disk * r_disk
        tally_exit(alive[left])
        alive = alive[~left]
        if alive.size == 0:
            break

        mu_here = tracker.mu_at(pos[alive], energy[alive])
        real = rng.random(alive.size) < mu_here / mu_maj
        colliders = alive[real]
        if colliders.size == 0:
            continue
        exhausted = n_scat[colliders] >= cfg.max_orders
        dead = colliders[exhausted]
        scatterers = colliders[~exhausted]
        if scatterers.size:
            cos_w = sample_klein_nishina(rng, energy[scatterers])
            sign = np.where(rng.random(scatterers.size) < 0.5, 1.0, -1.0)
            sin_w = sign * np.sqrt(np.maximum(1.0 - cos_w * cos_w, 0.0))
            dx, dy = direction[scatterers, 0], direction[scatterers, 1]
            direction[scatterers, 0] = cos_w * dx - sin_w * dy
            direction[scatterers, 1] = sin_w * dx + cos_w * dy
            e_before = energy[scatterers].copy()
            energy[scatterers] = e_before / (
                1.0 + (e_before / MC2_KEV) * (1.0 - cos_w)
            )
            n_scat[scatterers] += 1
            if chains is not None:
                for j, gi in enumerate(scatterers.tolist()):
                    step = (
                        float(e_before[j]),
                        float(cos_w[j]),
                        float(energy[gi]),
                    )
                    rec = chains.setdefault(
                        gi, {"point": pos[gi].copy(), "chain": []}
                    )
                    rec["chain"].append(step)
                    rec["point"] = pos[gi].copy()
        if dead.size:
            alive = alive[~np.isin(alive, dead)]

    return counts


def simulate(phantom, geometry, energy_grid, config, n_jobs=1, history=0):
    """Transport the photon budget and tally first/second-order spectra.

    Parameters
    ----------
    history : int
        When positive, additionally return up to this many logged
        single-scatter detections (collision point, energies, chain) for
        physics cross-checks.

    Returns
    -------
    McTally (and the history list when requested)
    """
    if float(phantom.raster.min()) < 0:
        raise ValueError("phantom density must be nonnegative")
    tracker = _Tracker(phantom, geometry, energy_grid, config)
    p_bins = energy_grid.n_bins
    n_k = geometry.n_subproblems
    max_orders = config.max_orders

    jobs = []
    for i_src in range(geometry.n_s):
        remaining = config.photons_per_source
        part = 0
        while remaining > 0:
            n = min(_PARTITION, remaining)
            jobs.append((i_src, part, n))
            remaining -= n
            part += 1

    history_list = [] if history > 0 else None
    if history_list is not None and n_jobs != 1:
        raise ValueError("history logging requires a single worker")

    def run(job):
        i_src, part, n = job
        log = history_list if (history_list is not None and part == 0) else None
        return _run_partition(tracker, i_src, part, n, log, history)

    totals = [np.zeros((p_bins, n_k), dtype=np.int64) for _ in range(max_orders)]
    if n_jobs == 1:
        for counts in map(run, jobs):
            for order in range(max_orders):
                totals[order] += counts[order]
    else:
        with ThreadPoolExecutor(max_workers=n_jobs) as pool:
            for counts in pool.map(run, jobs):
                for order in range(max_orders):
                    totals[order] += counts[order]

    tally = McTally(
        counts_first=totals[0],
        counts_second=totals[1] if max_orders > 1 else np.zeros_like(totals[0]),
        emitted_per_source=config.photons_per_source,
        energy_grid=energy_grid,
        geometry=geometry,
    )
    if history_list is not None:
        return tally, history_list
    return tally


def calibrate_scale(mc_spectrum, reference_spectrum):
    """Least-squares scalar matching Monte-Carlo counts to reference units."""
    mc = np.asarray(
        mc_spectrum.values if isinstance(mc_spectrum, Spectrum) else mc_spectrum,
        dtype=float,
    )
    ref = np.asarray(
        reference_spectrum.values
        if isinstance(reference_spectrum, Spectrum)
        else reference_spectrum,
        dtype=float,
    )
    if mc.shape != ref.shape:
        raise ValueError(f"shape mismatch: {mc.shape} vs {ref.shape}")
    if not np.any(ref):
        raise ValueError("reference spectrum is identically zero")
    denom = float((mc * mc).sum())
    if denom == 0.0:
        raise ValueError("Monte-Carlo spectrum is identically zero")
    return float((mc * ref).sum() / denom)
