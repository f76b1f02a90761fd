"""Compton-scattering tomography toolkit.

Simulation of first- and second-order scattered spectra for a 2D
monochromatic fan-beam scanner and reconstruction of relative
electron-density maps under model uncertainty.
"""

__version__ = "0.1.0"

from .basis import CoefficientImage, GaussianBasis, build_basis, coarsen, project_l2, synthesize
from .config import RunConfig, desk_config, load_config, save_config
from .forward import (
    AttenuationModel,
    ForwardMatrix,
    Spectrum,
    apply_l1,
    apply_nonlinear_l1,
    apply_p_operator,
    assemble_matrix,
    attenuation_from_phantom,
    frechet_l1,
    klein_nishina_total,
    tangential_cone_ratio,
    weight_w1,
)
from .geometry import (
    EnergyGrid,
    ScanGeometry,
    build_energy_grid,
    build_geometry,
    compton_energy,
    kappa_rho,
    scatter_phase,
)
from .metrics import MetricReport, compute_metrics
from .montecarlo import McConfig, McTally, calibrate_scale, simulate
from .phantom import Ellipse, Phantom, build_prior, build_shepp_logan, eval_bilinear
from .solvers import (
    Landweber,
    ResesopKaczmarz,
    ResesopTV,
    SesopKaczmarz,
    StripeGeometry,
    Subproblem,
    TVReconstructor,
    project_hyperplane,
    project_stripe,
)
from .uncertainty import UncertaintyMap, add_poisson_noise, estimate_eta

__all__ = [
    "AttenuationModel",
    "CoefficientImage",
    "Ellipse",
    "EnergyGrid",
    "ForwardMatrix",
    "GaussianBasis",
    "Landweber",
    "McConfig",
    "McTally",
    "MetricReport",
    "Phantom",
    "ResesopKaczmarz",
    "ResesopTV",
    "RunConfig",
    "ScanGeometry",
    "SesopKaczmarz",
    "Spectrum",
    "StripeGeometry",
    "Subproblem",
    "TVReconstructor",
    "UncertaintyMap",
    "add_poisson_noise",
    "apply_l1",
    "apply_nonlinear_l1",
    "apply_p_operator",
    "assemble_matrix",
    "attenuation_from_phantom",
    "build_basis",
    "build_energy_grid",
    "build_geometry",
    "build_prior",
    "build_shepp_logan",
    "calibrate_scale",
    "coarsen",
    "compton_energy",
    "compute_metrics",
    "desk_config",
    "estimate_eta",
    "eval_bilinear",
    "frechet_l1",
    "kappa_rho",
    "klein_nishina_total",
    "load_config",
    "project_hyperplane",
    "project_l2",
    "project_stripe",
    "save_config",
    "scatter_phase",
    "simulate",
    "synthesize",
    "tangential_cone_ratio",
    "weight_w1",
]
