"""Run configuration: flat key=value files with full- and desk-scale presets.

The full preset matches the reference experimental setup (100x100 grid,
K = 200 detector tuples, 80 energy bins, 8e8 photons per source); the desk
preset shrinks it to something a laptop chews through in minutes while
keeping every qualitative property.
"""

import hashlib
from dataclasses import dataclass, fields, replace

SCENARIOS = ("i", "ii", "iii", "iv")
METHODS = ("landweber", "tv", "resesop", "resesop_tv")


@dataclass(frozen=True)
class RunConfig:
    grid_n: int = 100
    extent: float = 30.0
    n_s: int = 10
    n_d: int = 20
    arc_fraction: float = 0.8
    n_energies: int = 80
    e0: float = 1173.0
    energy_lo: float = 359.6
    energy_hi: float = 1161.5
    photons_per_source: int = 800_000_000
    contrast_scale: float = 1.0
    prior_interior: float = 0.67
    quad_refine: int = 2
    tau: float = 1.01
    rho: str = "auto"
    noise_level: float = 0.024
    lambda_tv: float = 0.4
    lambda_tv_recon: float = 0.003
    beta_tv: float = 1e-4
    tv_every: int = 100
    tv_steps: int = 10
    tv_iterations: int = 300
    max_sweeps: int = 2000
    landweber_iterations: int = 300
    landweber_step: str = "auto"
    seed: int = 1234
    n_jobs: int = 1

    def __post_init__(self):
        counts = (
            self.grid_n,
            self.n_s,
            self.n_d,
            self.n_energies,
            self.photons_per_source,
            self.quad_refine,
            self.tv_every,
            self.tv_steps,
            self.max_sweeps,
            self.landweber_iterations,
            self.n_jobs,
        )
        if any(int(c) < 1 for c in counts):
            raise ValueError("all counts must be at least 1")

    def rho_value(self, truth_norm):
        """Resolve the solution-norm bound, possibly from the ground truth."""
        if isinstance(self.rho, str) and self.rho == "auto":
            if truth_norm is None:
                raise ValueError("rho='auto' needs the projected ground truth")
            return 1.1 * float(truth_norm)
        try:
            return float(self.rho)
        except ValueError:
            raise ValueError(f"rho must be a number or 'auto', got {self.rho!r}")

    def landweber_step_value(self):
        if isinstance(self.landweber_step, str) and self.landweber_step == "auto":
            return None
        try:
            return float(self.landweber_step)
        except ValueError:
            raise ValueError(
                f"landweber_step must be a number or 'auto', got "
                f"{self.landweber_step!r}"
            )


DESK_PRESET = dict(
    grid_n=64,
    n_d=10,
    n_energies=40,
    photons_per_source=10_000_000,
    max_sweeps=600,
)


def desk_config(**overrides):
    return replace(RunConfig(), **{**DESK_PRESET, **overrides})


def _coerce(field_type, raw):
    if field_type is int:
        return int(raw)
    if field_type is float:
        return float(raw)
    return raw


_FIELD_TYPES = {f.name: f.type for f in fields(RunConfig)}
_STR_OR_NUMBER = {"rho", "landweber_step"}


def parse_value(key, raw):
    if key not in _FIELD_TYPES:
        raise KeyError(f"unknown configuration key {key!r}")
    raw = raw.strip()
    if key in _STR_OR_NUMBER:
        return raw
    return _coerce(_FIELD_TYPES[key], raw)


def load_config(path):
    entries = {}
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            key, _, raw = line.partition("=")
            entries[key.strip()] = parse_value(key.strip(), raw)
    return replace(RunConfig(), **entries)


def save_config(config, path):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(config_text(config))


def config_text(config):
    lines = [f"{f.name}={getattr(config, f.name)}" for f in fields(RunConfig)]
    return "\n".join(lines) + "\n"


def config_hash(config):
    return hashlib.sha256(config_text(config).encode()).hexdigest()


def apply_overrides(config, overrides):
    """Apply ``key=value`` strings onto a configuration."""
    updates = {}
    for item in overrides:
        key, sep, raw = item.partition("=")
        if not sep:
            raise ValueError(f"override {item!r} is not of the form key=value")
        updates[key.strip()] = parse_value(key.strip(), raw)
    return replace(config, **updates)
