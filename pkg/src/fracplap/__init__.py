"""Fractional p-Laplacian Dirichlet problems, (s,p)-capacities and
domain-perturbation experiments on uniform 1-D and 2-D grids."""

__version__ = "0.1.0"

from .capacity import CapacityReport, absolute_capacity, capacity_of_difference, relative_capacity
from .geometry import (
    Ball,
    Box,
    Difference,
    DomainMask,
    DomainSequenceSpec,
    GridSpec,
    Union,
    build_grid,
    generate_sequence,
    hausdorff_complementary_distance,
    rasterize,
)
from .kernel import (
    DiscreteField,
    FractionalParams,
    SourceTerm,
    energy,
    energy_gradient,
    exterior_weights,
    gagliardo_p,
    kernel_weight,
    norm_sp,
    poincare_diagnostic,
)
from .lab import ExperimentOptions, convergence_table, run_experiment, strong_convergence_check
from .solver import SolverOptions, linear_oracle_p2, poincare_constant, solve_dirichlet, verify_bound
