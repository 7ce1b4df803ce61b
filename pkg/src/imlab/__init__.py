"""Numerical laboratory for inertial manifolds of forced Navier-Stokes equations on the torus."""

__version__ = "0.1.0"

from .cutoff import CutoffSpec, StationaryContext, truncate_W  # noqa: E402
from .estimators import AbsorbingRadiusEstimator, InertialManifold, StationarySolver  # noqa: E402
from .evolution import (AbstractModel, DifferenceEquation, NavierStokes, PreparedEquation,  # noqa: E402
                        evolve, step)
from .exceptions import BlowUpError, ConfigError, ConvergenceError, ImlabError  # noqa: E402
from .gap_search import enumerate_levels, find_annulus, find_gap_2d  # noqa: E402
from .harness import ExperimentConfig, run_scenario, validate_config  # noqa: E402
from .manifold import ManifoldChart, build_chart, phi, solve_bvp  # noqa: E402
from .operators import BandProjectorSpec, bilinear_form  # noqa: E402
from .spectral_field import GridSpec, SpectralField, random_field  # noqa: E402
from .stationary import analytic_radii, solve_stationary  # noqa: E402

__all__ = [
    "AbsorbingRadiusEstimator", "AbstractModel", "BandProjectorSpec", "BlowUpError", "ConfigError",
    "ConvergenceError", "CutoffSpec", "DifferenceEquation", "ExperimentConfig", "GridSpec", "ImlabError",
    "InertialManifold", "ManifoldChart", "NavierStokes", "PreparedEquation", "SpectralField",
    "StationaryContext", "StationarySolver", "analytic_radii", "bilinear_form", "build_chart",
    "enumerate_levels", "evolve", "find_annulus", "find_gap_2d", "phi", "random_field", "run_scenario",
    "solve_bvp", "solve_stationary", "step", "truncate_W", "validate_config",
]
