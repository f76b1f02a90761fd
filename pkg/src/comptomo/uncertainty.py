"""Model-uncertainty and noise bounds per subproblem.

The stripe half-widths of the reconstruction need, for every (energy bin,
detector tuple), a bound ``rho * eta + delta`` on how far the inexact
operator applied to the sought solution may sit from the measured datum.
Following the experimental protocol, ``eta`` is an oracle computed from the
discrepancy between the measured data and the inexact operator applied to
the ground-truth coefficients, and ``delta`` is the realised per-entry noise
magnitude.  Both are idealisations; ``margin`` lets robustness studies
inflate the oracle uniformly.
"""

from dataclasses import dataclass, field

import numpy as np

from .forward import Spectrum


@dataclass(frozen=True)
class UncertaintyMap:
    """Per-subproblem stripe ingredients."""

    eta: np.ndarray = field(repr=False)  # (P, K)
    delta: np.ndarray = field(repr=False)  # (P, K)
    tau: float = 1.01
    rho: float = 1.0

    def __post_init__(self):
        eta = np.asarray(self.eta, dtype=float)
        delta = np.asarray(self.delta, dtype=float)
        if eta.shape != delta.shape:
            raise ValueError(f"shape mismatch: {eta.shape} vs {delta.shape}")
        if np.any(eta < 0) or np.any(delta < 0):
            raise ValueError("uncertainty bounds must be nonnegative")
        object.__setattr__(self, "eta", eta)
        object.__setattr__(self, "delta", delta)

    def threshold(self):
        """Discrepancy thresholds tau (rho eta + delta), flattened (P*K,)."""
        return (self.tau * (self.rho * self.eta + self.delta)).ravel()


def _values(spec):
    return spec.values if isinstance(spec, Spectrum) else np.asarray(spec, dtype=float)


def estimate_eta(exact_data, inexact_applied, rho, margin=0.0):
    """Per-subproblem model-uncertainty oracle.

    ``eta[p, k] = |exact - inexact| / rho`` so that ``rho * eta`` bounds the
    model error at the solution.  ``exact_data`` is whatever the scenario
    measures (first order, with noise, with second order, or differenced);
    ``inexact_applied`` is the inexact operator applied to the ground-truth
    coefficients.
    """
    exact = _values(exact_data)
    inexact = _values(inexact_applied)
    if exact.shape != inexact.shape:
        raise ValueError(f"shape mismatch: {exact.shape} vs {inexact.shape}")
    if rho <= 0:
        raise ValueError(f"rho must be positive, got {rho}")
    if margin < 0:
        raise ValueError(f"margin must be nonnegative, got {margin}")
    return np.abs(exact - inexact) / rho * (1.0 + margin)


def add_poisson_noise(spectrum, relative_level, seed):
    """Disturb a spectrum by Poisson noise of a prescribed relative size.

    The spectrum is scaled to a count level at which the expected relative
    L2 perturbation equals ``relative_level``, sampled entrywise, and
    rescaled back.

    Returns
    -------
    noisy : Spectrum or ndarray (matching the input kind)
    delta : ndarray
        Realised per-entry perturbation magnitudes (the oracle noise bound).
    """
    values = _values(spectrum)
    if relative_level <= 0:
        raise ValueError(f"relative_level must be positive, got {relative_level}")
    if np.any(values < 0):
        raise ValueError("spectrum must be nonnegative for Poisson noise")
    total = float(values.sum())
    if total == 0.0:
        noisy_values = values.copy()
        delta = np.zeros_like(values)
    else:
        l2 = float(np.linalg.norm(values))
        scale = total / (relative_level * l2) ** 2
        rng = np.random.default_rng(seed)
        noisy_values = rng.poisson(scale * values) / scale
        delta = np.abs(noisy_values - values)
    if isinstance(spectrum, Spectrum):
        return (
            Spectrum(
                values=noisy_values,
                energy_grid=spectrum.energy_grid,
                geometry=spectrum.geometry,
            ),
            delta,
        )
    return noisy_values, delta
