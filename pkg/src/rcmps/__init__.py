"""Variational RCMPS ground states for the 1+1d self-interacting scalar field."""

from .core import (
    CmpsState,
    DegenerateSteadyState,
    apply_adjoint_lindblad,
    apply_lindblad,
    gauge_q,
    lindblad_matrix,
    stationary_state,
)
from .gradient import energy_and_gradient, grad_kinetic, grad_phi_moment, grad_vertex
from .kernel import QuadGrid, build_grid, kernel_integral, kernel_j
from .observables import (
    ObservableSet,
    a_two_point,
    compute_observables,
    energy_density,
    kinetic_density,
    phi_moment,
    vertex_expectation,
)
from .ode import StepUnderflow, Trajectory, integrate
from .optimizer import (
    LineSearchFailed,
    Numerics,
    OptimizationResult,
    OptimizerConfig,
    SingularMetric,
    embed_state,
    line_search,
    metric_inverse_apply,
    optimize,
    random_init,
    retract,
)

__version__ = "0.1.0"
