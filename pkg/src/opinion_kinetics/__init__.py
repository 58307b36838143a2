"""Kinetic opinion dynamics with fixed convictions."""

from .dynamics import (
    ModelParams,
    SimConfig,
    Trajectory,
    energy,
    dissipation,
    rescale_from_unit_sigma,
    rescale_to_unit_sigma,
    simulate,
    single_agent_solution,
    velocities,
    velocity,
)
from .errors import (
    ConfigError,
    EmptySliceError,
    IntegrationError,
    MeasureError,
    NumericalError,
    OpinionError,
    SolverError,
)
from .measure import (
    ConvictionMarginal,
    EmpiricalMeasure,
    SliceMeasure,
    conviction_marginal,
    slice_measure,
    sup_slice_distance,
    wasserstein1_1d,
    wasserstein1_joint,
)
from .steady import SteadyProfile, figure_curves, passive_profile, solve_g_given_alpha, solve_profile

__version__ = "0.1.0"
