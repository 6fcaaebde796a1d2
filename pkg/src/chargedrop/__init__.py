"""Numerical toolkit for the charged liquid drop problem min P(E) + Q^2 I_alpha(E) at fixed volume."""
from .riesz import (
    AssemblyError,
    DiscreteMeasure,
    DiscreteSet,
    RieszParams,
    SingularityError,
    assemble_kernel_matrix,
    interaction_energy,
    kernel_eval,
    kernel_operator,
    mutual_energy,
    regularized_energy,
    rescale_energy,
)
from .equilibrium import (
    EquilibriumResult,
    SolverError,
    ball_energy,
    capacity,
    equilibrium_ball_closed_form,
    kkt_residual,
    optimal_charge_split,
    solve_equilibrium,
)
from .geometry import (
    Ball,
    BumpShape,
    FourierShape,
    GeneralizedSet,
    ResolutionError,
    ShapeError,
    Square,
    perimeter,
    random_shape,
    rasterize,
    volume,
)
from .functional import EnergyBreakdown, total_energy
from .experiments import ConfigError, ExperimentConfig

__version__ = "0.1.0"
