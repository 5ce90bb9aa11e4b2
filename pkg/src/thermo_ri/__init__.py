"""Rate-independent gradient descents, their entropic thermalization and the effective limit dynamics."""

__version__ = "0.1.0"

from .dissipation import BOUNDARY_TOL, DissipationPotential, ElasticRegion
from .effective import EffectiveDualPotential, EffectivePotential, EpsilonDualPotential
from .energy import (
    CallbackLoad,
    ConstantLoad,
    PiecewiseLinearLoad,
    QuadraticEnergy,
    SinusoidLoad,
    SmoothEnergy,
    StableSetQuery,
    nonconvex_eddp_example,
)
from .errors import (
    ConvergenceError,
    DomainError,
    FiniteEnergyViolation,
    NearBoundaryError,
    SamplerError,
    ThermoRIError,
    ToleranceError,
)
from .solvers import (
    CadlagTrajectory,
    OdeSolution,
    Partition,
    energy_balance_report,
    integrate_limit_ode,
    moreau_yosida_step,
    solve_rate_independent,
)
from .thermal import (
    ChainConfig,
    ChainRun,
    conditional_moment,
    sample_step,
    simulate_chain,
    transition_log_density,
)

__all__ = [
    "__version__",
    "CallbackLoad",
    "ConstantLoad",
    "PiecewiseLinearLoad",
    "QuadraticEnergy",
    "SinusoidLoad",
    "SmoothEnergy",
    "StableSetQuery",
    "nonconvex_eddp_example",
    "ConvergenceError",
    "DomainError",
    "FiniteEnergyViolation",
    "NearBoundaryError",
    "SamplerError",
    "ThermoRIError",
    "ToleranceError",
    "CadlagTrajectory",
    "OdeSolution",
    "Partition",
    "energy_balance_report",
    "integrate_limit_ode",
    "moreau_yosida_step",
    "solve_rate_independent",
    "ChainConfig",
    "ChainRun",
    "conditional_moment",
    "sample_step",
    "simulate_chain",
    "transition_log_density",
    "BOUNDARY_TOL",
    "DissipationPotential",
    "ElasticRegion",
    "EffectiveDualPotential",
    "EffectivePotential",
    "EpsilonDualPotential",
]
