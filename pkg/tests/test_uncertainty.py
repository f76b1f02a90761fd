import numpy as np
import pytest

from comptomo.forward import Spectrum
from comptomo.uncertainty import UncertaintyMap, add_poisson_noise, estimate_eta


class TestEstimateEta:
    def test_exact_match_gives_zero(self):
        a = np.random.default_rng(0).uniform(size=(5, 4))
        assert np.all(estimate_eta(a, a, rho=2.0) == 0.0)

    def test_single_entry_definition(self):
        exact = np.zeros((3, 3))
        inexact = np.zeros((3, 3))
        exact[1, 2] = 2.0 * 0.5  # rho * 0.5
        eta = estimate_eta(exact, inexact, rho=2.0)
        assert eta[1, 2] == pytest.approx(0.5)
        assert eta.sum() == pytest.approx(0.5)

    def test_margin_inflates_uniformly(self):
        rng = np.random.default_rng(1)
        a, b = rng.uniform(size=(2, 4, 4))
        base = estimate_eta(a, b, rho=1.5)
        inflated = estimate_eta(a, b, rho=1.5, margin=0.2)
        assert np.allclose(inflated, 1.2 * base)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            estimate_eta(np.zeros((2, 2)), np.zeros((3, 2)), rho=1.0)

    def test_spectrum_inputs(self):
        a = Spectrum(values=np.ones((2, 2)))
        b = Spectrum(values=np.zeros((2, 2)))
        assert np.all(estimate_eta(a, b, rho=2.0) == 0.5)


class TestUncertaintyMap:
    def test_threshold(self):
        m = UncertaintyMap(
            eta=np.full((2, 2), 0.1), delta=np.full((2, 2), 0.05), tau=1.01, rho=2.0
        )
        assert np.allclose(m.threshold(), 1.01 * (2.0 * 0.1 + 0.05))

    def test_negative_bounds_rejected(self):
        with pytest.raises(ValueError):
            UncertaintyMap(eta=-np.ones((2, 2)), delta=np.zeros((2, 2)))


class TestAddPoissonNoise:
    def test_zero_spectrum(self):
        noisy, delta = add_poisson_noise(np.zeros((4, 4)), 0.024, seed=0)
        assert np.all(noisy == 0.0)
        assert np.all(delta == 0.0)

    def test_realised_level_concentrates(self):
        rng = np.random.default_rng(2)
        spec = rng.uniform(0.5, 2.0, size=(40, 100))
        noisy, _ = add_poisson_noise(spec, 0.024, seed=1)
        realised = np.linalg.norm(noisy - spec) / np.linalg.norm(spec)
        assert 0.5 * 0.024 <= realised <= 1.5 * 0.024

    def test_delta_is_realised_magnitude(self):
        spec = np.random.default_rng(3).uniform(0.5, 1.5, size=(6, 6))
        noisy, delta = add_poisson_noise(spec, 0.1, seed=2)
        assert np.allclose(delta, np.abs(noisy - spec))

    def test_seed_reproducibility(self):
        spec = np.random.default_rng(4).uniform(0.5, 1.5, size=(6, 6))
        a, _ = add_poisson_noise(spec, 0.05, seed=7)
        b, _ = add_poisson_noise(spec, 0.05, seed=7)
        assert np.array_equal(a, b)

    def test_expectation_preserved(self):
        spec = np.full((3, 3), 1.7)
        draws = np.stack(
            [add_poisson_noise(spec, 0.1, seed=s)[0] for s in range(100)]
        )
        mean = draws.mean(axis=0)
        # per-entry standard error of the mean over 100 seeds
        total = spec.sum()
        scale = total / (0.1 * np.linalg.norm(spec)) ** 2
        se = np.sqrt(spec / scale) / np.sqrt(100)
        assert np.all(np.abs(mean - spec) <= 3.0 * se)

    def test_negative_spectrum_rejected(self):
        with pytest.raises(ValueError):
            add_poisson_noise(-np.ones((2, 2)), 0.1, seed=0)

    def test_spectrum_type_round_trip(self):
        spec = Spectrum(values=np.ones((3, 2)))
        noisy, delta = add_poisson_noise(spec, 0.05, seed=3)
        assert isinstance(noisy, Spectrum)
        assert delta.shape == (3, 2)
