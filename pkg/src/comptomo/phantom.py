"""Electron-density phantoms: ground truth and prior maps.

The ground truth is a Shepp-Logan-style ellipse phantom whose additive
intensities are affinely rescaled so the nonzero relative electron density
spans a prescribed interval (bone-like skull at the top of the range).  The
prior keeps only the outer two ellipses and fills the interior with a
constant, which is the weak a-priori attenuation knowledge the
reconstruction methods have to cope with.

Densities are relative to water; multiply by ``WATER_ELECTRON_DENSITY`` for
absolute electrons per cm^3.  Maps are rasterised on a grid twice as fine as
the reconstruction grid and evaluated by bilinear interpolation.
"""

from dataclasses import dataclass, field

import numpy as np

WATER_ELECTRON_DENSITY = 3.23e23  # electrons per cm^3

# Raster values are electron densities in units of 1e23 electrons/cm^3,
# so water sits at 3.23 and the phantom's top value 5.66 lands at 1.75
# times water, the relative electron density of cortical bone.
DENSITY_UNIT_ELECTRONS = 1e23

# Shepp-Logan ellipse layout in unit-disk coordinates:
# (x0, y0, semi_x, semi_y, angle_deg).  The first two ellipses are the
# outer hull and the brain interior; the rest are the internal features.
_SHEPP_LOGAN_GEOMETRY = (
    (0.0, 0.0, 0.69, 0.92, 0.0),
    (0.0, -0.0184, 0.6624, 0.874, 0.0),
    (0.22, 0.0, 0.11, 0.31, -18.0),
    (-0.22, 0.0, 0.16, 0.41, 18.0),
    (0.0, 0.35, 0.21, 0.25, 0.0),
    (0.0, 0.1, 0.046, 0.046, 0.0),
    (0.0, -0.1, 0.046, 0.046, 0.0),
    (-0.08, -0.605, 0.046, 0.023, 0.0),
    (0.0, -0.605, 0.023, 0.023, 0.0),
    (0.06, -0.605, 0.023, 0.046, 0.0),
)

# Additive intensities of the medium-contrast variant the rescaling starts
# from (outer hull, interior, then features).
_BASE_INTENSITIES = (1.0, -0.8, -0.2, -0.2, 0.1, 0.1, 0.1, 0.1, 0.1, 0.1)


@dataclass(frozen=True)
class Ellipse:
    """One additive ellipse: value added to every point inside it."""

    center: tuple
    semi_axes: tuple
    angle: float  # radians
    additive_value: float

    def __post_init__(self):
        if self.semi_axes[0] <= 0 or self.semi_axes[1] <= 0:
            raise ValueError(f"semi-axes must be positive, got {self.semi_axes}")

    def contains(self, points):
        """Boolean mask of points inside (or on) the ellipse."""
        p = np.asarray(points, dtype=float)
        dx = p[..., 0] - self.center[0]
        dy = p[..., 1] - self.center[1]
        c, s = np.cos(self.angle), np.sin(self.angle)
        u = (dx * c + dy * s) / self.semi_axes[0]
        v = (-dx * s + dy * c) / self.semi_axes[1]
        return u * u + v * v <= 1.0


def sum_ellipses(ellipses, points):
    """Additive ellipse-sum density at each point (brute-force evaluation)."""
    p = np.asarray(points, dtype=float)
    out = np.zeros(p.shape[:-1], dtype=float)
    for e in ellipses:
        out += e.additive_value * e.contains(p)
    return out


@dataclass(frozen=True)
class Phantom:
    """Immutable relative electron-density map.

    ``raster`` has shape (2N, 2N) for reconstruction grid size N, sampled at
    ``origin + (i + 0, j + 0) * step`` with ``step = extent / (2N)`` and
    ``origin = -extent/2``; index i runs along x, j along y.
    """

    ellipses: tuple
    raster: np.ndarray = field(repr=False)
    extent: float
    water_density: float = WATER_ELECTRON_DENSITY

    @property
    def fine_step(self):
        return self.extent / self.raster.shape[0]

    @property
    def grid_n(self):
        return self.raster.shape[0] // 2

    def node_coords(self):
        """1D node coordinates of the raster along each axis."""
        n = self.raster.shape[0]
        return -self.extent / 2.0 + self.fine_step * np.arange(n)

    def support_radius(self):
        """Radius of a disk around the origin containing all nonzero density."""
        return max(
            float(np.hypot(*e.center)) + max(e.semi_axes) for e in self.ellipses
        )

    def __call__(self, points):
        return eval_bilinear(self, points)


def rasterize(ellipses, extent, n_fine):
    """Sample the additive ellipse sum on the n_fine x n_fine raster grid."""
    step = extent / n_fine
    coords = -extent / 2.0 + step * np.arange(n_fine)
    xx, yy = np.meshgrid(coords, coords, indexing="ij")
    pts = np.stack([xx, yy], axis=-1)
    return sum_ellipses(ellipses, pts)


def bilinear_on_grid(raster, extent, points):
    """Bilinear interpolation on a node-based raster over the centred square.

    Nodes sit at ``-extent/2 + i * extent/n``; queries outside the square
    return 0 and the edge value is extended over the trailing half-step.
    """
    p = np.atleast_2d(np.asarray(points, dtype=float))
    half = extent / 2.0
    n = raster.shape[0]
    step = extent / n

    gx = (p[:, 0] + half) / step
    gy = (p[:, 1] + half) / step
    inside = (np.abs(p[:, 0]) <= half) & (np.abs(p[:, 1]) <= half)

    gx = np.clip(gx, 0.0, n - 1.0)
    gy = np.clip(gy, 0.0, n - 1.0)
    i0 = np.minimum(gx.astype(np.intp), n - 2)
    j0 = np.minimum(gy.astype(np.intp), n - 2)
    fx = gx - i0
    fy = gy - j0

    vals = (
        raster[i0, j0] * (1 - fx) * (1 - fy)
        + raster[i0 + 1, j0] * fx * (1 - fy)
        + raster[i0, j0 + 1] * (1 - fx) * fy
        + raster[i0 + 1, j0 + 1] * fx * fy
    )
    return np.where(inside, vals, 0.0)


def eval_bilinear(phantom, points):
    """Bilinear interpolation of the phantom raster; zero outside the extent."""
    vals = bilinear_on_grid(phantom.raster, phantom.extent, points)
    if np.ndim(points) == 1:
        return float(vals[0])
    return vals


def build_shepp_logan(
    contrast_scale=1.0,
    grid_n=100,
    extent=30.0,
    diameters=(19.5, 26.0),
    density_range=(1.36, 5.66),
):
    """Build the ground-truth phantom.

    The classic ten-ellipse layout is scaled so the outer hull has the given
    horizontal/vertical diameters, then the additive intensities are mapped
    affinely so that the nonzero density values span ``density_range``
    exactly (the skull ring takes the top value, bone-like).

    Parameters
    ----------
    contrast_scale : float
        Multiplies the internal-structure intensities before the affine
        normalisation; 1.0 reproduces the reference contrast.  Must be
        positive.
    grid_n : int
        Reconstruction grid size N; the raster is (2N)^2.
    extent : float
        Side length of the scanned square [cm].
    """
    if contrast_scale <= 0:
        raise ValueError(f"contrast_scale must be positive, got {contrast_scale}")
    if grid_n < 2:
        raise ValueError("grid_n must be at least 2")

    # Both diameters lead to the same isotropic scale for the classic axes.
    scale = diameters[0] / (2.0 * _SHEPP_LOGAN_GEOMETRY[0][2])
    scale_y = diameters[1] / (2.0 * _SHEPP_LOGAN_GEOMETRY[0][3])
    if not np.isclose(scale, scale_y, rtol=1e-12):
        raise ValueError("diameters are incompatible with the classic aspect ratio")

    values = [_BASE_INTENSITIES[0]]
    values += [v * contrast_scale for v in _BASE_INTENSITIES[1:]]
    ellipses = [
        Ellipse(
            center=(x0 * scale, y0 * scale),
            semi_axes=(a * scale, b * scale),
            angle=np.radians(deg),
            additive_value=val,
        )
        for (x0, y0, a, b, deg), val in zip(_SHEPP_LOGAN_GEOMETRY, values)
    ]

    # Probe the additive sum densely (independent of the raster resolution)
    # to find the realised value range over the support, then map it onto
    # density_range by scaling every intensity and shifting the outer hull.
    # The support mask matters: interior regions may sum to zero.
    step = extent / 1601
    coords = -extent / 2.0 + step * np.arange(1601)
    xx, yy = np.meshgrid(coords, coords, indexing="ij")
    pts = np.stack([xx, yy], axis=-1)
    probe = sum_ellipses(ellipses, pts)
    support = np.zeros(probe.shape, dtype=bool)
    for e in ellipses:
        support |= e.contains(pts)
    inside = probe[support]
    lo, hi = float(inside.min()), float(inside.max())
    if hi <= lo:
        raise ValueError("degenerate contrast: phantom has a single density value")
    gain = (density_range[1] - density_range[0]) / (hi - lo)
    shift = density_range[0] - gain * lo

    final = [gain * e.additive_value for e in ellipses]
    final[0] += shift
    ellipses = tuple(
        Ellipse(e.center, e.semi_axes, e.angle, v) for e, v in zip(ellipses, final)
    )
    raster = rasterize(ellipses, extent, 2 * grid_n)
    return Phantom(ellipses=ellipses, raster=raster, extent=extent)


def build_prior(phantom, interior_value):
    """Prior map: outer two ellipses of ``phantom``, flat interior.

    The hull keeps its density (the skull ring is assumed known); everything
    inside the second ellipse is set to ``interior_value``.
    """
    if interior_value < 0:
        raise ValueError(f"interior_value must be nonnegative, got {interior_value}")
    hull, interior = phantom.ellipses[0], phantom.ellipses[1]
    ellipses = (
        Ellipse(hull.center, hull.semi_axes, hull.angle, hull.additive_value),
        Ellipse(
            interior.center,
            interior.semi_axes,
            interior.angle,
            interior_value - hull.additive_value,
        ),
    )
    raster = rasterize(ellipses, phantom.extent, phantom.raster.shape[0])
    return Phantom(ellipses=ellipses, raster=raster, extent=phantom.extent)
