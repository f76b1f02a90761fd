"""Finite reconstruction subspace: truncated Gaussians on a regular grid.

Each node of an N x N grid over the scanned square carries a Gaussian bump
of width half the grid step, truncated to a ball of 1.5 grid steps and
normalised to unit L2 norm over the domain.  Their span is the subspace in
which all reconstructions live; images are coefficient vectors of length
N^2 (C-order over (ix, iy)).

Normalisation constants use closed-form disk integrals for interior nodes
and erf-accelerated adaptive quadrature where the truncation ball is clipped
by the domain boundary, so unit norm holds to much better than 1e-8.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy import integrate, sparse
from scipy.special import erf

_EPS_SUPPORT = 1e-12


class IllConditionedBasisError(RuntimeError):
    """Raised when the basis Gram system cannot be solved reliably."""


@dataclass(frozen=True)
class GaussianBasis:
    """Truncated-Gaussian basis on a regular grid over a centred square."""

    n: int
    extent: float
    h: float
    sigma: float
    trunc_radius: float
    nodes: np.ndarray = field(repr=False)  # (n,) coordinates, same per axis
    norm_constants: np.ndarray = field(repr=False)  # (n, n)

    @property
    def dim(self):
        return self.n * self.n

    def node_index(self, ix, iy):
        return ix * self.n + iy

    def coeff_grid(self, coefficients):
        """View a length-D coefficient vector as an (N, N) image."""
        c = np.asarray(coefficients, dtype=float)
        if c.size != self.dim:
            raise ValueError(f"expected {self.dim} coefficients, got {c.size}")
        return c.reshape(self.n, self.n)


@dataclass(frozen=True)
class CoefficientImage:
    """An element of the reconstruction subspace, given by its coefficients."""

    coefficients: np.ndarray
    basis: GaussianBasis

    def __post_init__(self):
        c = np.asarray(self.coefficients, dtype=float)
        if not np.all(np.isfinite(c)):
            raise ValueError("coefficients must be finite")
        if c.size != self.basis.dim:
            raise ValueError(
                f"expected {self.basis.dim} coefficients, got {c.size}"
            )
        object.__setattr__(self, "coefficients", c.reshape(-1))

    def __call__(self, points):
        return synthesize(self, points)


def _clipped_norm_integral(xn, yn, sigma, radius, half):
    """Integral of exp(-((x-xn)^2+(y-yn)^2)/sigma^2) over B_radius cap Omega."""
    x_lo, x_hi = max(xn - radius, -half), min(xn + radius, half)

    def integrand(x):
        dy = np.sqrt(max(radius * radius - (x - xn) ** 2, 0.0))
        y_lo, y_hi = max(yn - dy, -half), min(yn + dy, half)
        if y_hi <= y_lo:
            return 0.0
        inner = 0.5 * np.sqrt(np.pi) * sigma * (
            erf((y_hi - yn) / sigma) - erf((y_lo - yn) / sigma)
        )
        return np.exp(-((x - xn) / sigma) ** 2) * inner

    val, _ = integrate.quad(integrand, x_lo, x_hi, epsabs=1e-14, epsrel=1e-12)
    return val


def build_basis(n, extent):
    """Construct the Gaussian basis for an ``n x n`` grid over the square.

    Grid step is ``extent / n`` with nodes at ``-extent/2 + i*h``; the
    Gaussian width is ``0.5 h`` and the truncation radius ``1.5 h``.

    Examples
    --------
    >>> basis = build_basis(100, 30.0)
    >>> basis.h, basis.dim
    (0.3, 10000)
    """
    if n < 2:
        raise ValueError(f"grid size must be at least 2, got {n}")
    if extent <= 0:
        raise ValueError(f"extent must be positive, got {extent}")
    h = extent / n
    sigma = 0.5 * h
    radius = 1.5 * h
    half = extent / 2.0
    nodes = -half + h * np.arange(n)

    # Squared basis functions integrate a Gaussian of width sigma (not
    # sigma/sqrt(2)): e^2 = c^2 exp(-r^2 / sigma^2).
    full_disk = np.pi * sigma * sigma * (1.0 - np.exp(-((radius / sigma) ** 2)))
    norms = np.full((n, n), full_disk)
    clipped = [i for i in range(n) if min(nodes[i] + half, half - nodes[i]) < radius]
    for ix in range(n):
        for iy in range(n):
            if ix in clipped or iy in clipped:
                norms[ix, iy] = _clipped_norm_integral(
                    nodes[ix], nodes[iy], sigma, radius, half
                )
    constants = 1.0 / np.sqrt(norms)
    return GaussianBasis(
        n=int(n),
        extent=float(extent),
        h=h,
        sigma=sigma,
        trunc_radius=radius,
        nodes=nodes,
        norm_constants=constants,
    )


def _window_indices(basis, coords):
    """Candidate node indices per point along one axis (4-wide window).

    Returns the clipped indices plus a validity mask; out-of-grid candidates
    must not alias onto border nodes.
    """
    rel = (coords + basis.extent / 2.0) / basis.h
    base = np.floor(rel).astype(np.intp)
    cand = base[:, None] + np.arange(-1, 3)[None, :]
    valid = (cand >= 0) & (cand < basis.n)
    return np.clip(cand, 0, basis.n - 1), valid


def basis_values_at(basis, points):
    """Sparse matrix of basis-function values at the given points.

    Returns a CSR matrix of shape (n_points, dim); row i holds e_nm(p_i) for
    the at most 16 candidate nodes whose truncation ball can contain p_i.
    """
    p = np.atleast_2d(np.asarray(points, dtype=float))
    npts = p.shape[0]
    half = basis.extent / 2.0
    inside = (np.abs(p[:, 0]) <= half) & (np.abs(p[:, 1]) <= half)

    ix, ix_ok = _window_indices(basis, p[:, 0])  # (npts, 4)
    iy, iy_ok = _window_indices(basis, p[:, 1])
    dx = p[:, 0, None] - basis.nodes[ix]  # (npts, 4)
    dy = p[:, 1, None] - basis.nodes[iy]
    r2 = dx[:, :, None] ** 2 + dy[:, None, :] ** 2  # (npts, 4, 4)
    mask = (
        (r2 < (basis.trunc_radius - _EPS_SUPPORT) ** 2)
        & inside[:, None, None]
        & ix_ok[:, :, None]
        & iy_ok[:, None, :]
    )
    vals = np.where(
        mask, np.exp(-0.5 * r2 / (basis.sigma * basis.sigma)), 0.0
    ) * basis.norm_constants[ix[:, :, None], iy[:, None, :]]

    cols = (ix[:, :, None] * basis.n + iy[:, None, :]).reshape(npts, -1)
    rows = np.repeat(np.arange(npts), 16)
    mat = sparse.csr_matrix(
        (vals.reshape(-1), (rows, cols.reshape(-1))), shape=(npts, basis.dim)
    )
    mat.eliminate_zeros()
    return mat


def synthesize(image, points):
    """Evaluate a coefficient image at arbitrary points."""
    vals = basis_values_at(image.basis, points) @ image.coefficients
    if np.ndim(points) == 1:
        return float(vals[0])
    return vals


def projection_grid(basis, refine=4):
    """Quadrature sub-grid of step h/refine with trapezoid weights."""
    m = basis.n * refine
    q = basis.extent / m
    coords = -basis.extent / 2.0 + q * np.arange(m)
    w = np.full(m, q)
    w[0] *= 0.5
    w[-1] *= 0.5
    xx, yy = np.meshgrid(coords, coords, indexing="ij")
    pts = np.stack([xx.ravel(), yy.ravel()], axis=-1)
    weights = (w[:, None] * w[None, :]).ravel()
    return pts, weights


def project_l2(f, basis, refine=4):
    """Least-squares fit of a point-evaluable field into the subspace.

    Minimises the weighted misfit between the synthesised image and ``f``
    sampled on the h/refine sub-grid (trapezoidal weights).

    Parameters
    ----------
    f : callable
        Maps an (n_points, 2) array to values; e.g. a Phantom.

    Returns
    -------
    CoefficientImage
    """
    pts, weights = projection_grid(basis, refine)
    design = basis_values_at(basis, pts)
    fvals = np.asarray(f(pts), dtype=float)
    wd = design.multiply(weights[:, None]).tocsr()
    gram = (design.T @ wd).tocsc()
    rhs = design.T @ (weights * fvals)
    try:
        solve = sparse.linalg.factorized(gram)
        coeffs = solve(rhs)
    except RuntimeError as exc:
        raise IllConditionedBasisError(f"Gram system factorisation failed: {exc}")
    if not np.all(np.isfinite(coeffs)):
        raise IllConditionedBasisError("Gram system produced non-finite solution")
    return CoefficientImage(coefficients=coeffs, basis=basis)


def coarsen(basis, factor):
    """Coarser basis on an (N/factor)^2 grid plus the inclusion map.

    The inclusion matrix W (dim_fine x dim_coarse) expresses each coarse
    basis function approximately in the fine basis by least squares, so that
    nested-subspace arguments can be exercised numerically.
    """
    if factor < 1 or basis.n % factor != 0:
        raise ValueError(
            f"grid size {basis.n} is not divisible by factor {factor}"
        )
    if factor == 1:
        return basis, sparse.identity(basis.dim, format="csr")
    coarse = build_basis(basis.n // factor, basis.extent)
    cols = []
    for j in range(coarse.dim):
        unit = np.zeros(coarse.dim)
        unit[j] = 1.0
        image = CoefficientImage(coefficients=unit, basis=coarse)
        cols.append(project_l2(lambda p: synthesize(image, p), basis).coefficients)
    inclusion = sparse.csr_matrix(np.stack(cols, axis=1))
    return coarse, inclusion
