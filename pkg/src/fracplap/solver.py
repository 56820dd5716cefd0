"""Dirichlet problem for the fractional p-Laplacian by energy minimisation.

The discrete solution on a mask is the unique minimiser of
``J(v) = [v]^p / p - <f, v>`` over fields supported in the mask.  It is found
with a projected gradient method backtracked until the Armijo condition
holds.  For ``p >= 2`` the trial steps are Barzilai-Borwein lengths along the
gradient.  For ``p < 2`` the gradient is only Hoelder continuous and plain
steps stall, so the direction is measured in the metric of the quadratic
majoriser of ``|t|^p / p`` (see :meth:`ReducedKernel.majorizer_metric`).
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, NamedTuple

import numpy as np
import scipy.linalg

from .geometry import DomainMask
from .kernel import (
    DiscreteField,
    ExteriorWeights,
    FractionalParams,
    ReducedKernel,
    SourceTerm,
    exterior_weights,
    phi_p,
)

log = logging.getLogger(__name__)


class SolverError(RuntimeError):
    pass


@dataclass(frozen=True)
class SolverOptions:
    max_iterations: int = 50000
    gradient_tolerance: float = 1e-8
    initial_step: float = 1.0
    shrink: float = 0.5
    sufficient_decrease: float = 1e-4
    identity_tolerance: float = 1e-6
    max_backtracks: int = 60
    deterministic: bool = True
    workers: int | None = None

    def __post_init__(self):
        if not self.gradient_tolerance > 0:
            raise ValueError("gradient_tolerance must be positive")
        if not 0 < self.shrink < 1:
            raise ValueError("shrink factor must lie in (0, 1)")
        if not 0 < self.sufficient_decrease <= 0.5:
            raise ValueError("sufficient-decrease constant must lie in (0, 0.5]")
        if self.max_iterations < 0 or self.initial_step <= 0:
            raise ValueError("max_iterations must be >= 0 and initial_step > 0")


@dataclass
class MinimizeResult:
    x: np.ndarray
    value: float
    iterations: int
    gradient_norm: float
    converged: bool
    message: str
    values: list[float] = field(default_factory=list)


def projected_gradient(
    fun: Callable[[np.ndarray], tuple[float, np.ndarray]],
    x0: np.ndarray,
    weight: float,
    options: SolverOptions,
    lower: np.ndarray | None = None,
    metric: Callable[[np.ndarray], np.ndarray] | None = None,
) -> MinimizeResult:
    """Minimise a smooth convex ``fun`` subject to ``x >= lower`` (componentwise).

    ``weight`` is the node volume ``h^n``: plain steps follow the representer
    ``g / weight`` of the gradient with Barzilai-Borwein lengths, and
    stationarity is measured by ``sqrt(weight * |P(x - g/weight) - x|^2)``,
    the dual norm of the projected gradient.

    With ``metric`` the free coordinates instead move along
    ``-metric(x)^-1 g`` (two-metric projection: coordinates held at their
    bound keep the plain step) with unit trial length.

    Once the energy change drops to the rounding level of the energy itself
    the Armijo test cannot discriminate; there a step is accepted when the
    energy did not grow beyond that level and the directional derivative at
    the new point satisfies ``phi'(a) <= (1 - 2c) |phi'(0)|``, which is the
    Armijo condition for the local quadratic model.
    """
    if lower is None:
        lower = np.full(np.shape(x0), -np.inf)
    lower = np.asarray(lower, dtype=float)
    bounded = np.isfinite(lower)

    def project(z):
        return np.where(bounded, np.maximum(z, lower), z)

    c = options.sufficient_decrease
    x = project(np.array(x0, dtype=float))
    f, g = fun(x)
    values = [f]
    alpha = options.initial_step
    gnorm = math.inf
    for it in range(options.max_iterations + 1):
        r = g / weight
        pg = project(x - r) - x
        gnorm = math.sqrt(weight * float(pg @ pg))
        if gnorm <= options.gradient_tolerance:
            return MinimizeResult(x, f, it, gnorm, True, "gradient tolerance reached", values)
        if it == options.max_iterations:
            break
        if metric is None:
            direction, step = -r, alpha
        else:
            # coordinates at (or within one plain step of) an active bound
            held = bounded & (x - lower <= min(float(np.max(np.abs(pg))), 1e-3)) & (g > 0)
            free = ~held
            direction = -r
            mat = metric(x)
            direction[free] = -np.linalg.solve(mat[np.ix_(free, free)], g[free])
            step = 1.0
        noise = 1e-12 * max(abs(f), 1e-300) + 1e-300
        for _ in range(options.max_backtracks):
            x_new = project(x + step * direction)
            d = x_new - x
            slope = float(g @ d)
            f_new, g_new = fun(x_new)
            if f_new <= f + c * slope:
                break
            if f_new <= f + noise and float(g_new @ d) <= (1 - 2 * c) * abs(slope):
                break
            step *= options.shrink
        else:
            return MinimizeResult(x, f, it, gnorm, False, "line search failed", values)
        s = x_new - x
        y = (g_new - g) / weight
        sy = float(s @ y)
        alpha = float(s @ s) / sy if sy > 0 else options.initial_step
        alpha = min(max(alpha, 1e-12), 1e12)
        x, f, g = x_new, f_new, g_new
        values.append(f)
    return MinimizeResult(x, f, options.max_iterations, gnorm, False, "maximum iterations reached", values)


@dataclass
class SolveReport:
    solution: DiscreteField
    final_energy: float
    iterations: int
    final_gradient_norm: float
    energy_identity_residual: float
    norm_sp: float
    seminorm_p: float
    duality: float
    converged: bool
    message: str
    energy_history: list[float] = field(default_factory=list, repr=False)

    def summary(self) -> str:
        rows = [
            ("converged", str(self.converged).lower()),
            ("message", self.message),
            ("final_energy", f"{self.final_energy:.12g}"),
            ("iterations", str(self.iterations)),
            ("final_gradient_norm", f"{self.final_gradient_norm:.12g}"),
            ("energy_identity_residual", f"{self.energy_identity_residual:.12g}"),
            ("seminorm_p", f"{self.seminorm_p:.12g}"),
            ("duality", f"{self.duality:.12g}"),
            ("norm_sp", f"{self.norm_sp:.12g}"),
        ]
        return "".join(f"{k} = {v}\n" for k, v in rows)


def _initial_values(init, mask: DomainMask) -> np.ndarray:
    m = mask.count
    if init is None or (isinstance(init, str) and init == "zero"):
        return np.zeros(m)
    if isinstance(init, DiscreteField):
        if init.grid != mask.grid:
            raise ValueError("initial field lives on a different grid")
        return init.values[mask.inside].copy()
    arr = np.asarray(init, dtype=float)
    if arr.shape == (mask.grid.size,):
        return arr[mask.inside].copy()
    if arr.shape == (m,):
        return arr.copy()
    raise ValueError(f"initial guess has shape {arr.shape}; expected ({m},) or ({mask.grid.size},)")


def solve_dirichlet(
    mask: DomainMask,
    f: SourceTerm,
    params: FractionalParams,
    options: SolverOptions = SolverOptions(),
    tails: ExteriorWeights | None = None,
    initial=None,
    kernel: ReducedKernel | None = None,
) -> SolveReport:
    """Minimise ``J`` over fields supported in ``mask``.

    ``initial`` is ``None``/``"zero"``, a :class:`DiscreteField`, or node
    values (full grid or support only).  Running out of iterations is
    reported through ``converged=False``, not raised.
    """
    if mask.is_empty():
        raise SolverError("cannot solve on an empty mask")
    if f.grid != mask.grid:
        raise ValueError("source term lives on a different grid")
    grid = mask.grid
    if params.tail_mode == "analytic" and tails is None:
        tails = exterior_weights(grid, params)
    if kernel is None:
        kernel = ReducedKernel(mask, params, tails, options.deterministic, options.workers)
    vol = grid.cell_volume
    b = vol * f.density[mask.inside]
    p = params.p

    def fun(v):
        sem, var = kernel.evaluate(v)
        return sem / p - float(b @ v), var - b

    result = projected_gradient(fun, _initial_values(initial, mask), vol, options, metric=kernel.majorizer_metric())
    u = result.x
    sem = kernel.seminorm_p(u)
    dual = float(b @ u)
    residual = abs(sem - dual) / max(1.0, sem)
    lp = vol * float(np.sum(np.abs(u) ** p))
    converged = result.converged and residual <= options.identity_tolerance
    message = result.message
    if result.converged and not converged:
        message = f"energy identity residual {residual:.3g} above tolerance"
    if not converged:
        log.warning("Dirichlet solve did not converge: %s (|g| = %.3g after %d iterations)",
                    message, result.gradient_norm, result.iterations)
    return SolveReport(
        solution=DiscreteField.from_support_values(mask, u),
        final_energy=result.value,
        iterations=result.iterations,
        final_gradient_norm=result.gradient_norm,
        energy_identity_residual=residual,
        norm_sp=(sem + lp) ** (1.0 / p),
        seminorm_p=sem,
        duality=dual,
        converged=converged,
        message=message,
        energy_history=result.values,
    )


def assemble_p2_system(mask: DomainMask, params: FractionalParams, tails: ExteriorWeights | None = None):
    """Return ``(A, b_scale)`` of the p = 2 system on the support nodes.

    ``A_ii = 2 sum_{j != i} w_ij + h^n t_i`` (sum over every grid node),
    ``A_ij = -2 w_ij``; the right-hand side is ``h^n f_i``.
    """
    if params.p != 2.0:
        raise ValueError(f"the linear oracle needs p = 2, got p = {params.p}")
    grid = mask.grid
    n = grid.dimension
    xyz = grid.coordinates()
    idx = mask.indices()
    r = np.sqrt(((xyz[idx, None, :] - xyz[None, :, :]) ** 2).sum(axis=2))
    r[np.arange(idx.size), idx] = np.inf
    w = grid.h ** (2 * n) / r ** (n + params.sp)
    if params.tail_mode == "analytic":
        t = (tails if tails is not None else exterior_weights(grid, params)).values[idx]
    else:
        t = np.zeros(idx.size)
    A = -2.0 * w[:, idx]
    A[np.diag_indices(idx.size)] = 2.0 * w.sum(axis=1) + grid.cell_volume * t
    return A


def linear_oracle_p2(mask: DomainMask, f: SourceTerm, params: FractionalParams,
                     tails: ExteriorWeights | None = None) -> DiscreteField:
    """Direct solve of the p = 2 Euler-Lagrange system ``A u = h^n f``."""
    A = assemble_p2_system(mask, params, tails)
    b = mask.grid.cell_volume * f.density[mask.inside]
    u = scipy.linalg.solve(A, b, assume_a="pos")
    return DiscreteField.from_support_values(mask, u)


class BoundCheck(NamedTuple):
    passed: bool
    bound: float
    measured: float
    slack: float


def solution_bound(f: SourceTerm, params: FractionalParams, poincare_constant: float) -> float:
    """A priori bound on ``||u||_{s,p}`` valid for every mask in the box.

    From ``[u]^p = <f, u> <= ||f||_{p'} ||u||_p <= c ||f||_{p'} [u]``:
    ``[u] <= (c ||f||_{p'})^(1/(p-1))`` and ``||u||_{s,p} <= (1 + c^p)^(1/p) [u]``.
    """
    p = params.p
    c = poincare_constant
    fnorm = f.norm(params.conjugate)
    return (1.0 + c**p) ** (1.0 / p) * (c * fnorm) ** (1.0 / (p - 1.0))


def verify_bound(report: SolveReport, f: SourceTerm, params: FractionalParams, poincare_constant: float) -> BoundCheck:
    bound = solution_bound(f, params, poincare_constant)
    measured = report.norm_sp
    return BoundCheck(measured <= bound, bound, measured, bound - measured)


def poincare_constant(
    mask: DomainMask,
    params: FractionalParams,
    tails: ExteriorWeights | None = None,
    options: SolverOptions = SolverOptions(gradient_tolerance=1e-10),
    max_steps: int = 200,
    rtol: float = 1e-9,
) -> float:
    """Best constant ``c`` in ``||u||_p <= c [u]_{s,p}`` on ``mask``.

    Inverse power iteration for the first eigenvalue of the discrete
    operator: solve ``(-Delta_p)^s v = phi_p(u)``, normalise, repeat.  The
    Rayleigh quotient ``[v]^p / ||v||_p^p`` decreases to ``lambda_1`` and
    ``c = lambda_1^(-1/p)``.  Since ``W_0(Omega)`` grows with ``Omega`` the
    constant of the whole box bounds every subdomain.
    """
    grid = mask.grid
    if params.tail_mode == "analytic" and tails is None:
        tails = exterior_weights(grid, params)
    kernel = ReducedKernel(mask, params, tails, options.deterministic, options.workers)
    p = params.p
    vol = grid.cell_volume
    v = np.ones(mask.count)
    lam = math.inf
    for _ in range(max_steps):
        rhs = SourceTerm(grid, DiscreteField.from_support_values(mask, phi_p(v, p)).values)
        rep = solve_dirichlet(mask, rhs, params, options, tails, initial=DiscreteField.from_support_values(mask, v),
                              kernel=kernel)
        w = rep.solution.on_support()
        w /= (vol * np.sum(np.abs(w) ** p)) ** (1 / p)
        new = kernel.seminorm_p(w)
        v = w
        if abs(lam - new) <= rtol * new:
            lam = new
            break
        lam = new
    return lam ** (-1.0 / p)
