"""Relative (s,p)-capacity of node sets.

``cap(E; D) = inf { [u]^p : u supported in D, u >= 1 on E }``, solved by
projected gradient descent on ``[u]^p / p`` with the obstacle ``u >= 1`` on
the nodes of ``E``.  The constraint "u >= 1 on a neighbourhood of E" has no
finer discrete counterpart than the node set itself.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .geometry import DomainMask, GridSpec, set_minus
from .kernel import DiscreteField, ExteriorWeights, FractionalParams, ReducedKernel, exterior_weights
from .solver import SolverOptions, projected_gradient

log = logging.getLogger(__name__)


class CapacityError(ValueError):
    pass


@dataclass
class CapacityReport:
    value: float
    potential: DiscreteField
    iterations: int
    projected_gradient_norm: float
    converged: bool
    message: str = ""

    def summary(self) -> str:
        return (
            f"converged = {str(self.converged).lower()}\n"
            f"message = {self.message}\n"
            f"capacity = {self.value:.12g}\n"
            f"iterations = {self.iterations}\n"
            f"projected_gradient_norm = {self.projected_gradient_norm:.12g}\n"
        )


def relative_capacity(
    E: DomainMask,
    D_mask: DomainMask,
    params: FractionalParams,
    options: SolverOptions = SolverOptions(),
    tails: ExteriorWeights | None = None,
) -> CapacityReport:
    if E.grid != D_mask.grid:
        raise CapacityError("E and D live on different grids")
    if not E.issubset(D_mask):
        raise CapacityError("E is not contained in D")
    if D_mask.is_empty():
        raise CapacityError("D is empty")
    if E.is_empty():
        return CapacityReport(0.0, DiscreteField.zeros(D_mask), 0, 0.0, True, "empty set")
    grid = D_mask.grid
    if params.tail_mode == "analytic" and tails is None:
        tails = exterior_weights(grid, params)
    kernel = ReducedKernel(D_mask, params, tails, options.deterministic, options.workers)
    constrained = E.inside[D_mask.inside]
    lower = np.where(constrained, 1.0, -np.inf)
    p = params.p

    def fun(v):
        sem, var = kernel.evaluate(v)
        return sem / p, var

    x0 = constrained.astype(float)
    result = projected_gradient(fun, x0, grid.cell_volume, options, lower=lower, metric=kernel.majorizer_metric())
    if not result.converged:
        log.warning("capacity solve did not converge: %s (|Pg| = %.3g)", result.message, result.gradient_norm)
    value = kernel.seminorm_p(result.x)
    return CapacityReport(
        value=value,
        potential=DiscreteField.from_support_values(D_mask, result.x),
        iterations=result.iterations,
        projected_gradient_norm=result.gradient_norm,
        converged=result.converged,
        message=result.message,
    )


def capacity_of_difference(
    A: DomainMask,
    B: DomainMask,
    D_mask: DomainMask,
    params: FractionalParams,
    options: SolverOptions = SolverOptions(),
    tails: ExteriorWeights | None = None,
) -> float:
    """``cap(A \\ B; D)``, zero when the difference is empty."""
    return relative_capacity(set_minus(A, B), D_mask, params, options, tails).value


def absolute_capacity(
    E: DomainMask,
    params: FractionalParams,
    options: SolverOptions = SolverOptions(),
    tails: ExteriorWeights | None = None,
) -> CapacityReport:
    """Surrogate for ``cap(E)``: capacity relative to every interior node of the box.

    This is an upper bound for the full-space capacity, which minimises over
    compactly supported functions on all of R^n.
    """
    grid: GridSpec = E.grid
    return relative_capacity(E, grid.interior(), params, options, tails)
