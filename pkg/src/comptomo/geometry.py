"""Scanner geometry and Compton kinematics.

Sources and energy-resolved detectors sit on a circle around the scanned
region.  A photon emitted at ``s`` with energy ``E0`` and scattered once at
``x`` before reaching ``d`` arrives with an energy fixed by the scattering
angle, so every energy reading selects a circular-arc locus of possible
scattering sites.  This module provides the kinematic relations and the
placement of sources, detectors and energy bins.

Units: lengths in cm, energies in keV, angles in radians.
"""

from dataclasses import dataclass, field

import numpy as np

MC2_KEV = 511.0  # rest energy of the electron


class SingularConfigurationError(ValueError):
    """Raised when a scattering configuration is geometrically degenerate."""


def compton_energy(e0, omega):
    """Photon energy after scattering by an angle ``omega``.

    Implements ``E0 / (1 + (E0/511)(1 - cos omega))``, strictly decreasing
    in ``omega`` on (0, pi).

    Parameters
    ----------
    e0 : float
        Incident photon energy [keV], must be positive.
    omega : float or ndarray
        Scattering angle [rad] in [0, pi].

    Returns
    -------
    float or ndarray
        Scattered photon energy [keV].
    """
    if e0 <= 0:
        raise ValueError(f"incident energy must be positive, got {e0}")
    omega = np.asarray(omega, dtype=float)
    if np.any(omega < 0) or np.any(omega > np.pi):
        raise ValueError("scattering angle must lie in [0, pi]")
    out = e0 / (1.0 + (e0 / MC2_KEV) * (1.0 - np.cos(omega)))
    return float(out) if out.ndim == 0 else out


def kappa_rho(x, d, s):
    """Direction cosine and distance ratio of a scattering triple.

    ``kappa`` is the cosine of the angle at the source between the rays
    toward ``x`` and toward ``d``; ``rho`` is ``|x-s| / |d-s|``.

    Raises
    ------
    SingularConfigurationError
        If ``x == s`` or ``d == s``.
    """
    x = np.asarray(x, dtype=float)
    d = np.asarray(d, dtype=float)
    s = np.asarray(s, dtype=float)
    xs = x - s
    ds = d - s
    nxs = np.linalg.norm(xs, axis=-1)
    nds = np.linalg.norm(ds, axis=-1)
    if np.any(nxs == 0.0):
        raise SingularConfigurationError("scattering point coincides with the source")
    if np.any(nds == 0.0):
        raise SingularConfigurationError("detector coincides with the source")
    kappa = np.sum(xs * ds, axis=-1) / (nxs * nds)
    kappa = np.clip(kappa, -1.0, 1.0)
    rho = nxs / nds
    if kappa.ndim == 0:
        return float(kappa), float(rho)
    return kappa, rho


def scattering_angle_from_kappa_rho(kappa, rho):
    """Scattering angle at ``x`` from the (kappa, rho) parametrisation.

    The angle is ``arccot((kappa - rho) / sqrt(1 - kappa^2))`` with the
    arccot branch fixed to (0, pi) so the map is continuous across
    ``kappa == rho``.
    """
    kappa = np.asarray(kappa, dtype=float)
    rho = np.asarray(rho, dtype=float)
    if np.any(np.abs(kappa) >= 1.0):
        raise SingularConfigurationError(
            "scattering point lies on the source-detector line"
        )
    cot = (kappa - rho) / np.sqrt(1.0 - kappa * kappa)
    omega = np.arctan2(1.0, cot)  # arccot with range (0, pi)
    return float(omega) if omega.ndim == 0 else omega


def scatter_phase(x, d, s, e0):
    """Energy carried to detector ``d`` by a photon scattered once at ``x``.

    Composes the circular-arc angle relation with the Compton formula; the
    result agrees with ``compton_energy(e0, angle(x - s, d - x))``.

    Raises
    ------
    SingularConfigurationError
        If ``x`` lies on the line through ``s`` and ``d``.
    """
    kappa, rho = kappa_rho(x, d, s)
    omega = scattering_angle_from_kappa_rho(kappa, rho)
    return compton_energy(e0, omega)


@dataclass(frozen=True)
class ScanGeometry:
    """Fixed source/detector layout on a circle centred at the origin.

    Attributes
    ----------
    radius : float
        Scanner circle radius [cm].
    n_s, n_d : int
        Number of sources and of detectors per source.
    arc_fraction : float
        Fraction of the circle covered by each source's detector arc; the
        omitted sector is centred on the source.
    sources : ndarray, shape (n_s, 2)
    detectors : ndarray, shape (n_s, n_d, 2)
    source_angles : ndarray, shape (n_s,)
    detector_angles : ndarray, shape (n_s, n_d)
    """

    radius: float
    n_s: int
    n_d: int
    arc_fraction: float
    sources: np.ndarray = field(repr=False)
    detectors: np.ndarray = field(repr=False)
    source_angles: np.ndarray = field(repr=False)
    detector_angles: np.ndarray = field(repr=False)

    @property
    def n_subproblems(self):
        """Total number K of (source, detector) tuples."""
        return self.n_s * self.n_d

    def pair(self, k):
        """Source and detector position of subproblem ``k = i_src * n_d + i_det``."""
        i_src, i_det = divmod(int(k), self.n_d)
        return self.sources[i_src], self.detectors[i_src, i_det]

    def detector_arc(self, i_src):
        """Start angle and angular span of the detector arc of source ``i_src``.

        Detector ``i`` is centred at ``start + (i + 0.5) * span / n_d``; the
        contiguous acceptance windows ``[start + i*span/n_d, start +
        (i+1)*span/n_d)`` tile the arc without gaps or overlap.
        """
        span = self.arc_fraction * 2.0 * np.pi
        start = self.source_angles[i_src] + (1.0 - self.arc_fraction) * np.pi
        return start, span


def build_geometry(radius, n_s, n_d, arc_fraction):
    """Place sources and detectors on the scanner circle.

    Sources are evenly spread over one half of the circle.  For each source,
    ``n_d`` detectors evenly sample a ``arc_fraction`` portion of the circle;
    the excluded sector is centred on the source direction, where detectors
    would only receive a weak signal.

    Parameters
    ----------
    radius : float
        Circle radius [cm], positive.
    n_s, n_d : int
        Source and per-source detector counts, at least 1.
    arc_fraction : float
        In (0, 1].

    Returns
    -------
    ScanGeometry
    """
    if radius <= 0:
        raise ValueError(f"radius must be positive, got {radius}")
    if n_s < 1 or n_d < 1:
        raise ValueError("source and detector counts must be at least 1")
    if not 0.0 < arc_fraction <= 1.0:
        raise ValueError(f"arc_fraction must lie in (0, 1], got {arc_fraction}")

    src_angles = np.pi * (np.arange(n_s) + 0.5) / n_s + np.pi / 2.0
    sources = radius * np.stack([np.cos(src_angles), np.sin(src_angles)], axis=-1)

    span = arc_fraction * 2.0 * np.pi
    offsets = (1.0 - arc_fraction) * np.pi + span * (np.arange(n_d) + 0.5) / n_d
    det_angles = src_angles[:, None] + offsets[None, :]
    detectors = radius * np.stack([np.cos(det_angles), np.sin(det_angles)], axis=-1)

    return ScanGeometry(
        radius=float(radius),
        n_s=int(n_s),
        n_d=int(n_d),
        arc_fraction=float(arc_fraction),
        sources=sources,
        detectors=detectors,
        source_angles=src_angles,
        detector_angles=det_angles,
    )


@dataclass(frozen=True)
class EnergyGrid:
    """Detector energy binning for forward-scattered photons.

    ``energies`` holds the P bin centres; ``bin_edges`` the P+1 contiguous
    edges bracketing them.  All centres lie strictly between the 90-degree
    scattering energy and the source energy, i.e. only scattering angles in
    (0, pi/2) are recorded.
    """

    e0: float
    energies: np.ndarray = field(repr=False)
    bin_edges: np.ndarray = field(repr=False)
    mc2: float = MC2_KEV

    @property
    def n_bins(self):
        return self.energies.size

    def bin_index(self, energies):
        """Bin index per energy, -1 where the energy falls outside the grid."""
        e = np.atleast_1d(np.asarray(energies, dtype=float))
        idx = np.searchsorted(self.bin_edges, e, side="right") - 1
        idx[(e < self.bin_edges[0]) | (e >= self.bin_edges[-1])] = -1
        np.clip(idx, -1, self.n_bins - 1, out=idx)
        if np.ndim(energies) == 0:
            return int(idx[0])
        return idx


def build_energy_grid(e0, n_bins, lo=359.6, hi=1161.5):
    """Equally spaced energy bin centres on [lo, hi], inclusive.

    Bin edges sit midway between neighbouring centres, the outermost edges
    extended by half a step, so the bins are disjoint and contiguous.
    """
    if n_bins < 1:
        raise ValueError("need at least one energy bin")
    if not lo < hi:
        raise ValueError(f"invalid energy interval [{lo}, {hi}]")
    e_half = compton_energy(e0, np.pi / 2.0)
    if lo <= e_half or hi >= e0:
        raise ValueError(
            f"bin centres must lie strictly inside ({e_half:.4g}, {e0:.4g}) keV "
            "(forward scattering only)"
        )
    energies = np.linspace(lo, hi, n_bins)
    if n_bins == 1:
        half_step = (hi - lo) / 2.0 if hi > lo else 1.0
    else:
        half_step = 0.5 * (energies[1] - energies[0])
    inner = 0.5 * (energies[:-1] + energies[1:])
    edges = np.concatenate([[energies[0] - half_step], inner, [energies[-1] + half_step]])
    return EnergyGrid(e0=float(e0), energies=energies, bin_edges=edges)
