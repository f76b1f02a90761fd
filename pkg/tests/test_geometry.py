import numpy as np
import pytest

from comptomo.geometry import (
    SingularConfigurationError,
    build_energy_grid,
    build_geometry,
    compton_energy,
    kappa_rho,
    scatter_phase,
)


class TestComptonEnergy:
    def test_no_scattering_keeps_energy(self):
        assert compton_energy(1173.0, 0.0) == pytest.approx(1173.0)

    def test_right_angle_hand_value(self):
        # 1173 / (1 + 1173/511), worked out by hand
        assert compton_energy(1173.0, np.pi / 2) == pytest.approx(355.94, abs=0.01)

    def test_backscatter_at_rest_energy_is_third(self):
        # E0 = mc^2, omega = pi gives E0 / 3 in closed form
        assert compton_energy(511.0, np.pi) == pytest.approx(511.0 / 3.0, rel=1e-12)

    def test_monotone_decreasing(self):
        omegas = np.linspace(0.0, np.pi, 1000)
        energies = compton_energy(1173.0, omegas)
        assert np.all(np.diff(energies) < 0)

    def test_rejects_angle_outside_range(self):
        with pytest.raises(ValueError):
            compton_energy(1173.0, -0.1)
        with pytest.raises(ValueError):
            compton_energy(1173.0, np.pi + 0.1)

    def test_rejects_nonpositive_energy(self):
        with pytest.raises(ValueError):
            compton_energy(0.0, 1.0)


class TestKappaRho:
    def test_midpoint_is_collinear(self):
        s = np.array([-30.0, 0.0])
        d = np.array([30.0, 0.0])
        kappa, rho = kappa_rho((s + d) / 2, d, s)
        assert kappa == pytest.approx(1.0)
        assert rho == pytest.approx(0.5)

    def test_x_at_detector(self):
        s = np.array([0.0, -30.0])
        d = np.array([0.0, 30.0])
        _, rho = kappa_rho(d, d, s)
        assert rho == pytest.approx(1.0)

    def test_hand_geometry_on_circle(self):
        s = np.array([-30.0, 0.0])
        d = np.array([30.0, 0.0])
        x = np.array([0.0, 30.0])
        kappa, rho = kappa_rho(x, d, s)
        assert kappa == pytest.approx(1 / np.sqrt(2), rel=1e-12)
        assert rho == pytest.approx(1 / np.sqrt(2), rel=1e-12)

    def test_degenerate_points_raise(self):
        s = np.array([1.0, 1.0])
        with pytest.raises(SingularConfigurationError):
            kappa_rho(s, np.array([2.0, 2.0]), s)
        with pytest.raises(SingularConfigurationError):
            kappa_rho(np.array([0.0, 0.0]), s, s)


class TestScatterPhase:
    def test_right_angle_configuration(self):
        s = np.array([-30.0, 0.0])
        d = np.array([30.0, 0.0])
        x = np.array([0.0, 30.0])
        # kappa == rho makes the arccot argument zero, i.e. omega = pi/2
        assert scatter_phase(x, d, s, 1173.0) == pytest.approx(355.94, abs=0.01)

    def test_agrees_with_direct_scattering_angle(self):
        # The phase must equal the Compton energy at the geometric angle
        # between (x - s) and (d - x), over many random non-degenerate triples.
        rng = np.random.default_rng(42)
        checked = 0
        while checked < 10_000:
            s, d, x = rng.uniform(-30, 30, size=(3, 2))
            try:
                phase = scatter_phase(x, d, s, 1173.0)
            except SingularConfigurationError:
                continue
            incoming = x - s
            outgoing = d - x
            cosw = incoming @ outgoing / (
                np.linalg.norm(incoming) * np.linalg.norm(outgoing)
            )
            omega = np.arccos(np.clip(cosw, -1.0, 1.0))
            expected = compton_energy(1173.0, omega)
            assert phase == pytest.approx(expected, rel=1e-10)
            checked += 1

    def test_approaching_chord_recovers_source_energy(self):
        s = np.array([-30.0, 0.0])
        d = np.array([30.0, 0.0])
        # x behind the detector near the chord: omega -> 0, energy -> E0
        phases = [
            scatter_phase(np.array([29.0, eps]), d, s, 1173.0)
            for eps in (1.0, 0.1, 0.01, 0.001)
        ]
        assert np.all(np.diff(phases) > 0)
        assert phases[-1] == pytest.approx(1173.0, rel=1e-4)

    def test_point_on_chord_raises(self):
        s = np.array([-30.0, 0.0])
        d = np.array([30.0, 0.0])
        with pytest.raises(SingularConfigurationError):
            scatter_phase(np.array([0.0, 0.0]), d, s, 1173.0)


class TestBuildGeometry:
    def test_paper_scale_counts(self):
        geom = build_geometry(30.0, 10, 20, 0.8)
        assert geom.n_subproblems == 200

    def test_single_pair_detector_opposite_source(self):
        geom = build_geometry(30.0, 1, 1, 1.0)
        s = geom.sources[0]
        d = geom.detectors[0, 0]
        assert np.allclose(d, -s, atol=1e-12 * 30)

    def test_all_points_on_circle(self):
        geom = build_geometry(30.0, 2, 3, 0.5)
        pts = np.vstack([geom.sources, geom.detectors.reshape(-1, 2)])
        assert pts.shape == (8, 2)
        assert np.allclose(np.linalg.norm(pts, axis=1), 30.0, atol=1e-12 * 30)

    def test_detectors_avoid_sector_near_source(self):
        geom = build_geometry(30.0, 4, 16, 0.8)
        for i in range(geom.n_s):
            s = geom.sources[i]
            for d in geom.detectors[i]:
                # angle between source and detector at least the half-width
                # of the excluded sector (0.2 * 2pi / 2 here)
                cosang = (s @ d) / (30.0 * 30.0)
                assert np.arccos(np.clip(cosang, -1, 1)) >= 0.2 * np.pi - 1e-9

    def test_invalid_arguments(self):
        with pytest.raises(ValueError):
            build_geometry(-1.0, 1, 1, 1.0)
        with pytest.raises(ValueError):
            build_geometry(30.0, 0, 1, 1.0)
        with pytest.raises(ValueError):
            build_geometry(30.0, 1, 1, 1.5)

    def test_pair_indexing_row_major(self):
        geom = build_geometry(30.0, 3, 5, 0.8)
        s, d = geom.pair(7)  # source 1, detector 2
        assert np.allclose(s, geom.sources[1])
        assert np.allclose(d, geom.detectors[1, 2])


class TestEnergyGrid:
    def test_paper_interval(self):
        grid = build_energy_grid(1173.0, 80)
        assert grid.n_bins == 80
        assert grid.energies[0] == pytest.approx(359.6)
        assert grid.energies[-1] == pytest.approx(1161.5)

    def test_energies_within_forward_scattering_range(self):
        grid = build_energy_grid(1173.0, 80)
        e_half = compton_energy(1173.0, np.pi / 2)
        assert np.all(grid.energies > e_half)
        assert np.all(grid.energies < 1173.0)

    def test_edges_bracket_centers_contiguously(self):
        grid = build_energy_grid(1173.0, 40)
        assert grid.bin_edges.size == 41
        assert np.all(np.diff(grid.bin_edges) > 0)
        assert np.all(grid.bin_edges[:-1] < grid.energies)
        assert np.all(grid.energies < grid.bin_edges[1:])

    def test_bin_index_roundtrip_and_outside(self):
        grid = build_energy_grid(1173.0, 40)
        idx = grid.bin_index(grid.energies)
        assert np.array_equal(idx, np.arange(40))
        assert grid.bin_index(100.0) == -1
        assert grid.bin_index(1200.0) == -1

    def test_interval_outside_kinematic_range_rejected(self):
        with pytest.raises(ValueError):
            build_energy_grid(1173.0, 10, lo=100.0, hi=1161.5)
        with pytest.raises(ValueError):
            build_energy_grid(1173.0, 10, lo=359.6, hi=1200.0)
