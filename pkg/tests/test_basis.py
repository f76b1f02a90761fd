import numpy as np
import pytest
from scipy import integrate

from comptomo.basis import (
    CoefficientImage,
    basis_values_at,
    build_basis,
    coarsen,
    project_l2,
    projection_grid,
    synthesize,
)
from comptomo.phantom import build_shepp_logan


def polar_norm_squared(basis, ix, iy):
    """Independent oracle: squared L2 norm of e_(ix,iy) by polar integration.

    Integrates c^2 exp(-t^2/sigma^2) over the truncation ball clipped to the
    domain square, using an angular sweep with per-direction wall distances.
    The decomposition is unrelated to the x/erf route used by the builder.
    """
    xn, yn = basis.nodes[ix], basis.nodes[iy]
    half = basis.extent / 2.0
    sig2 = basis.sigma**2
    r = basis.trunc_radius

    def radius_to_wall(theta):
        c, s = np.cos(theta), np.sin(theta)
        t = r
        if c > 1e-15:
            t = min(t, (half - xn) / c)
        elif c < -1e-15:
            t = min(t, (-half - xn) / c)
        if s > 1e-15:
            t = min(t, (half - yn) / s)
        elif s < -1e-15:
            t = min(t, (-half - yn) / s)
        return max(t, 0.0)

    def integrand(theta):
        rmax = radius_to_wall(theta)
        return 0.5 * sig2 * (1.0 - np.exp(-(rmax**2) / sig2))

    val, _ = integrate.quad(
        integrand, 0.0, 2.0 * np.pi, limit=400, epsabs=1e-13, epsrel=1e-12
    )
    return basis.norm_constants[ix, iy] ** 2 * val


class TestBuildBasis:
    def test_paper_scale_dimensions(self):
        basis = build_basis(100, 30.0)
        assert basis.h == pytest.approx(0.3)
        assert basis.dim == 10000
        assert basis.sigma == pytest.approx(0.15)
        assert basis.trunc_radius == pytest.approx(0.45)

    def test_tiny_basis_unit_norm_against_oracle(self):
        basis = build_basis(2, 2.0)
        for ix in range(2):
            for iy in range(2):
                assert polar_norm_squared(basis, ix, iy) == pytest.approx(
                    1.0, abs=1e-8
                )

    def test_random_nodes_unit_norm(self):
        basis = build_basis(12, 6.0)
        rng = np.random.default_rng(7)
        picks = {(0, 0), (11, 11), (1, 5), (0, 7)}
        while len(picks) < 10:
            picks.add((int(rng.integers(0, 12)), int(rng.integers(0, 12))))
        for ix, iy in picks:
            assert polar_norm_squared(basis, ix, iy) == pytest.approx(1.0, abs=1e-8)

    def test_invalid_arguments(self):
        with pytest.raises(ValueError):
            build_basis(1, 30.0)
        with pytest.raises(ValueError):
            build_basis(10, -1.0)


class TestSynthesize:
    def test_zero_coefficients(self):
        basis = build_basis(8, 4.0)
        img = CoefficientImage(np.zeros(basis.dim), basis)
        pts = np.random.default_rng(0).uniform(-2, 2, size=(20, 2))
        assert np.allclose(synthesize(img, pts), 0.0)

    def test_peak_value_at_node(self):
        basis = build_basis(8, 4.0)
        c = np.zeros(basis.dim)
        c[basis.node_index(4, 3)] = 2.5
        img = CoefficientImage(c, basis)
        node = np.array([basis.nodes[4], basis.nodes[3]])
        expected = 2.5 * basis.norm_constants[4, 3]  # Gaussian peak factor 1
        assert synthesize(img, node) == pytest.approx(expected, rel=1e-12)

    def test_truncation_zeroes_far_points(self):
        basis = build_basis(8, 4.0)
        c = np.zeros(basis.dim)
        c[basis.node_index(4, 4)] = 1.0
        img = CoefficientImage(c, basis)
        node = np.array([basis.nodes[4], basis.nodes[4]])
        far = node + np.array([1.6 * basis.h, 0.0])
        assert synthesize(img, far) == 0.0

    def test_locality_at_most_nine(self):
        basis = build_basis(10, 5.0)
        rng = np.random.default_rng(1)
        pts = rng.uniform(-2.5, 2.5, size=(500, 2))
        mat = basis_values_at(basis, pts)
        nnz_per_row = np.diff(mat.indptr)
        assert nnz_per_row.max() <= 9


class TestProjectL2:
    def test_reproduces_basis_element(self):
        basis = build_basis(6, 3.0)
        unit = np.zeros(basis.dim)
        unit[basis.node_index(3, 2)] = 1.0
        img = CoefficientImage(unit, basis)
        proj = project_l2(lambda p: synthesize(img, p), basis)
        assert np.allclose(proj.coefficients, unit, atol=1e-8)

    def test_zero_field(self):
        basis = build_basis(6, 3.0)
        proj = project_l2(lambda p: np.zeros(p.shape[0]), basis)
        assert np.allclose(proj.coefficients, 0.0, atol=1e-12)

    def test_round_trip_identity(self):
        basis = build_basis(6, 3.0)
        rng = np.random.default_rng(3)
        coeffs = rng.normal(size=basis.dim)
        img = CoefficientImage(coeffs, basis)
        proj = project_l2(lambda p: synthesize(img, p), basis)
        assert np.allclose(proj.coefficients, coeffs, atol=1e-8)

    def test_shepp_logan_not_in_subspace(self):
        basis = build_basis(16, 30.0)
        phantom = build_shepp_logan(grid_n=16)
        proj = project_l2(phantom, basis)
        pts, weights = projection_grid(basis)
        residual = synthesize(proj, pts) - phantom(pts)
        assert np.sqrt(np.sum(weights * residual**2)) > 1e-3
        # raster regression: projecting and synthesising back moves values
        coords = phantom.node_coords()
        xx, yy = np.meshgrid(coords, coords, indexing="ij")
        nodes = np.stack([xx.ravel(), yy.ravel()], axis=-1)
        back = synthesize(proj, nodes)
        assert np.abs(back - phantom.raster.ravel()).max() > 1e-6


class TestCoarsen:
    def test_identity_factor(self):
        basis = build_basis(4, 2.0)
        coarse, inc = coarsen(basis, 1)
        assert coarse is basis
        assert inc.shape == (16, 16)
        assert (inc != 0).sum() == 16

    def test_dimensions(self):
        basis = build_basis(4, 2.0)
        coarse, inc = coarsen(basis, 2)
        assert coarse.dim == 4
        assert inc.shape == (16, 4)

    def test_inclusion_error_bounded(self):
        # tolerance frozen from a pre-build calibration run: worst relative
        # error 0.057 (clipped corner functions), interior ~0.048
        basis = build_basis(8, 4.0)
        coarse, inc = coarsen(basis, 2)
        pts, weights = projection_grid(basis, refine=8)
        fine_vals = basis_values_at(basis, pts)
        for j in range(coarse.dim):
            unit = np.zeros(coarse.dim)
            unit[j] = 1.0
            target = synthesize(CoefficientImage(unit, coarse), pts)
            approx = fine_vals @ inc.toarray()[:, j]
            err = np.sqrt(np.sum(weights * (target - approx) ** 2))
            norm = np.sqrt(np.sum(weights * target**2))
            assert err / norm <= 0.06

    def test_non_divisible_factor_rejected(self):
        basis = build_basis(6, 3.0)
        with pytest.raises(ValueError):
            coarsen(basis, 4)
