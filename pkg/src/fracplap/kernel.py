"""Discrete Gagliardo seminorm, the Dirichlet energy and its first variation.

Collocation at grid nodes with uniform weights: the pair weight is
``w_ij = h^(2n) / |x_i - x_j|^(n + s p)`` for ``i != j`` and the diagonal is
dropped.  Fields vanish outside the box, so the part of the full-space double
integral with one argument outside the box collapses to a per-node exterior
weight ``t_i`` (see :func:`exterior_weights`).

For a support set ``S`` the seminorm splits as::

    [u]^p = sum_{i != j in S} w_ij |u_i - u_j|^p + sum_{i in S} kappa_i |u_i|^p

with ``kappa_i = 2 sum_{j not in S} w_ij + h^n t_i``.  :class:`ReducedKernel`
holds the ``S x S`` block and ``kappa`` so iterative solvers never touch
nodes that are pinned to zero.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import dataclass

import numpy as np

from .geometry import DomainMask, GridSpec

TAIL_MODES = ("none", "analytic")
S_RANGE = (0.05, 0.95)
P_RANGE = (1.1, 10.0)

_BLOCK_ROWS = 256


class ParameterError(ValueError):
    pass


@dataclass(frozen=True)
class FractionalParams:
    s: float
    p: float
    tail_mode: str = "analytic"
    quadrature_order: int = 16

    def __post_init__(self):
        if not S_RANGE[0] <= self.s <= S_RANGE[1]:
            raise ParameterError(f"s = {self.s} outside [{S_RANGE[0]}, {S_RANGE[1]}]")
        if not P_RANGE[0] <= self.p <= P_RANGE[1]:
            raise ParameterError(f"p = {self.p} outside [{P_RANGE[0]}, {P_RANGE[1]}]")
        if self.tail_mode not in TAIL_MODES:
            raise ParameterError(f"tail_mode must be one of {TAIL_MODES}, got {self.tail_mode!r}")
        if int(self.quadrature_order) != self.quadrature_order or self.quadrature_order < 1:
            raise ParameterError(f"quadrature_order must be a positive integer, got {self.quadrature_order}")

    @property
    def sp(self) -> float:
        return self.s * self.p

    @property
    def conjugate(self) -> float:
        """The dual exponent ``p' = p / (p - 1)``."""
        return self.p / (self.p - 1.0)


@dataclass(frozen=True, eq=False)
class DiscreteField:
    """Node values of a function vanishing outside ``support``."""

    grid: GridSpec
    values: np.ndarray
    support: DomainMask

    def __post_init__(self):
        values = np.array(self.values, dtype=float).ravel()
        if values.shape != (self.grid.size,):
            raise ValueError(f"field has {values.size} values, grid has {self.grid.size} nodes")
        if self.support.grid != self.grid:
            raise ValueError("support mask lives on a different grid")
        if np.any(values[~self.support.inside] != 0.0):
            raise ValueError("field is nonzero outside its support")
        if not np.all(np.isfinite(values)):
            raise ValueError("field has non-finite values")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @classmethod
    def zeros(cls, support: DomainMask) -> "DiscreteField":
        return cls(support.grid, np.zeros(support.grid.size), support)

    @classmethod
    def from_support_values(cls, support: DomainMask, vals) -> "DiscreteField":
        values = np.zeros(support.grid.size)
        values[support.inside] = vals
        return cls(support.grid, values, support)

    def on_support(self) -> np.ndarray:
        return self.values[self.support.inside]

    def __sub__(self, other: "DiscreteField") -> "DiscreteField":
        if other.grid != self.grid:
            raise ValueError("fields live on different grids")
        support = DomainMask(self.grid, self.support.inside | other.support.inside)
        return DiscreteField(self.grid, self.values - other.values, support)

    def scaled(self, c: float) -> "DiscreteField":
        return DiscreteField(self.grid, c * self.values, self.support)


@dataclass(frozen=True, eq=False)
class SourceTerm:
    """An L^{p'} density sampled at the grid nodes."""

    grid: GridSpec
    density: np.ndarray

    def __post_init__(self):
        density = np.array(np.broadcast_to(np.asarray(self.density, dtype=float), (self.grid.size,)))
        if not np.all(np.isfinite(density)):
            raise ValueError("source density has non-finite values")
        density.setflags(write=False)
        object.__setattr__(self, "density", density)

    @classmethod
    def constant(cls, grid: GridSpec, value: float) -> "SourceTerm":
        return cls(grid, np.full(grid.size, float(value)))

    def norm(self, exponent: float, mask: DomainMask | None = None) -> float:
        vals = self.density if mask is None else self.density[mask.inside]
        return float((self.grid.cell_volume * np.sum(np.abs(vals) ** exponent)) ** (1.0 / exponent))


@dataclass(frozen=True, eq=False)
class ExteriorWeights:
    grid: GridSpec
    values: np.ndarray


def phi_p(t, p: float):
    """``|t|^(p-2) t`` with the continuous extension ``phi_p(0) = 0``."""
    t = np.asarray(t, dtype=float)
    return np.sign(t) * np.abs(t) ** (p - 1.0)


def kernel_weight(i: int, j: int, grid: GridSpec, params: FractionalParams) -> float:
    if i == j:
        raise ValueError("kernel weight is undefined on the diagonal (i == j)")
    xyz = grid.coordinates()
    r = float(np.linalg.norm(xyz[i] - xyz[j]))
    n = grid.dimension
    return grid.h ** (2 * n) / r ** (n + params.sp)


def _side_integral(d, e1, e2, sp, order):
    """``d^-sp * int_{-atan(e1/d)}^{atan(e2/d)} cos(theta)^sp dtheta`` by Gauss-Legendre."""
    xi, wts = np.polynomial.legendre.leggauss(order)
    lo, hi = -np.arctan(e1 / d), np.arctan(e2 / d)
    mid, half = (hi + lo) / 2, (hi - lo) / 2
    theta = mid[:, None] + half[:, None] * xi[None, :]
    return d ** (-sp) * half * (np.cos(theta) ** sp @ wts)


def exterior_weights(grid: GridSpec, params: FractionalParams, quadrature_order: int | None = None) -> ExteriorWeights:
    """Per-node ``t_i = 2 * int_{R^n \\ box} |x_i - y|^-(n+sp) dy``.

    In 1-D this is ``(2/sp) (d_L^-sp + d_R^-sp)``.  In 2-D the integral is
    ``(2/sp) int_0^{2 pi} rho(theta)^-sp dtheta`` where ``rho`` is the distance
    to the box boundary along ``theta``; the angle range is split at the four
    corner directions and each piece gets ``quadrature_order`` Gauss-Legendre
    points.  Distances to the box sides are clamped below by ``h/2``.
    """
    order = int(quadrature_order or params.quadrature_order)
    sp = params.sp
    xyz = grid.coordinates()
    lo = np.asarray(grid.box_min)
    hi = np.asarray(grid.box_max)
    d_lo = np.maximum(xyz - lo, grid.h / 2)
    d_hi = np.maximum(hi - xyz, grid.h / 2)
    if grid.dimension == 1:
        t = (2.0 / sp) * (d_lo[:, 0] ** (-sp) + d_hi[:, 0] ** (-sp))
    else:
        left, bottom = d_lo[:, 0], d_lo[:, 1]
        right, top = d_hi[:, 0], d_hi[:, 1]
        total = (
            _side_integral(right, bottom, top, sp, order)
            + _side_integral(top, right, left, sp, order)
            + _side_integral(left, top, bottom, sp, order)
            + _side_integral(bottom, left, right, sp, order)
        )
        t = (2.0 / sp) * total
    t.setflags(write=False)
    return ExteriorWeights(grid, t)


def _resolve_tails(grid, params, tails):
    if params.tail_mode == "none":
        return np.zeros(grid.size)
    if tails is None:
        tails = exterior_weights(grid, params)
    return tails.values


class ReducedKernel:
    """The seminorm and its first variation restricted to a support set.

    ``deterministic=False`` evaluates row blocks on a thread pool and adds the
    partial sums of the seminorm in completion order, so the last bits can
    vary between runs.  The gradient is exact in either mode.
    """

    def __init__(self, support: DomainMask, params: FractionalParams, tails: ExteriorWeights | None = None,
                 deterministic: bool = True, workers: int | None = None):
        grid = support.grid
        self.grid = grid
        self.support = support
        self.params = params
        self.p = params.p
        self.deterministic = deterministic
        self.workers = workers
        idx = support.indices()
        self.index = idx
        n = grid.dimension
        expo = n + params.sp
        xyz = grid.coordinates()
        pts = xyz[idx]
        m = idx.size

        weights = np.empty((m, m))
        full_rowsum = np.empty(m)
        step = max(1, min(_BLOCK_ROWS, 2**22 // grid.size))
        for start in range(0, m, step):
            rows = slice(start, min(start + step, m))
            r_all = np.linalg.norm(pts[rows, None, :] - xyz[None, :, :], axis=2)
            r_all[np.arange(rows.stop - rows.start), idx[rows]] = np.inf
            w_all = grid.h ** (2 * n) / r_all**expo
            full_rowsum[rows] = w_all.sum(axis=1)
            weights[rows] = w_all[:, idx]
        self.weights = weights
        support_rowsum = weights.sum(axis=1)
        tail = _resolve_tails(grid, params, tails)[idx]
        self.kappa = 2.0 * (full_rowsum - support_rowsum) + grid.cell_volume * tail
        self._laplacian = None
        if self.p == 2.0:
            self._laplacian = np.diag(2.0 * support_rowsum + self.kappa) - 2.0 * weights

    @property
    def size(self) -> int:
        return self.index.size

    def matrix(self) -> np.ndarray:
        """``A`` with ``[v]^2 = v^T A v``, only defined for p = 2."""
        if self._laplacian is None:
            raise ValueError("the linear operator exists only for p = 2")
        return self._laplacian

    def _blocks(self):
        m = self.size
        return [slice(s, min(s + _BLOCK_ROWS, m)) for s in range(0, m, _BLOCK_ROWS)]

    def _block_terms(self, v, rows, want_value, want_grad):
        diff = v[rows, None] - v[None, :]
        w = self.weights[rows]
        value = grad = None
        if want_value:
            value = float(np.sum(w * np.abs(diff) ** self.p))
        if want_grad:
            grad = 2.0 * np.sum(w * phi_p(diff, self.p), axis=1)
        return rows, value, grad

    def evaluate(self, v: np.ndarray, want_value=True, want_grad=True):
        """Return ``([v]^p, grad([v]^p / p))`` for support values ``v``."""
        v = np.asarray(v, dtype=float)
        if self._laplacian is not None:
            av = self._laplacian @ v
            return (float(v @ av) if want_value else None), (av if want_grad else None)
        value = 0.0
        grad = np.zeros_like(v) if want_grad else None
        blocks = self._blocks()
        if self.deterministic or len(blocks) == 1:
            results = [self._block_terms(v, rows, want_value, want_grad) for rows in blocks]
        else:
            with ThreadPoolExecutor(max_workers=self.workers) as pool:
                futures = [pool.submit(self._block_terms, v, rows, want_value, want_grad) for rows in blocks]
                results = [f.result() for f in as_completed(futures)]
        for rows, bval, bgrad in results:
            if want_value:
                value += bval
            if want_grad:
                grad[rows] = bgrad
        if want_value:
            value += float(np.sum(self.kappa * np.abs(v) ** self.p))
        if want_grad:
            grad += self.kappa * phi_p(v, self.p)
        return (value if want_value else None), grad

    def seminorm_p(self, v) -> float:
        return self.evaluate(v, want_grad=False)[0]

    def first_variation(self, v) -> np.ndarray:
        return self.evaluate(v, want_value=False)[1]

    def majorizer_metric(self):
        """For ``p < 2``: callable returning the Hessian of the quadratic majoriser at ``v``.

        ``|t|^p / p <= |t0|^p / p + |t0|^(p-2) (t^2 - t0^2) / 2``, so the
        weighted operator with pair weights ``w_ij |v_i - v_j|^(p-2)`` is a
        metric in which a unit step never increases the energy.  Differences
        are floored at ``1e-9 max|v|`` to keep it invertible.  Returns
        ``None`` for ``p >= 2``.
        """
        if self.p >= 2.0:
            return None
        p = self.p

        def metric(v):
            scale = float(np.max(np.abs(v))) if v.size else 0.0
            floor = 1e-9 * scale if scale > 0 else 1.0
            pair = self.weights * np.maximum(np.abs(v[:, None] - v[None, :]), floor) ** (p - 2.0)
            mat = -2.0 * pair
            mat[np.diag_indices(v.size)] = 2.0 * pair.sum(axis=1) + self.kappa * np.maximum(np.abs(v), floor) ** (p - 2.0)
            return mat

        return metric

    def pairing(self, u, v) -> float:
        u = np.asarray(u, dtype=float)
        v = np.asarray(v, dtype=float)
        if self._laplacian is not None:
            return float(u @ (self._laplacian @ v))
        du = u[:, None] - u[None, :]
        dv = v[:, None] - v[None, :]
        return float(np.sum(self.weights * phi_p(du, self.p) * dv) + np.sum(self.kappa * phi_p(u, self.p) * v))


def _kernel_for(u: DiscreteField, params, tails) -> ReducedKernel:
    return ReducedKernel(u.support, params, tails)


def _check_grids(*objs):
    grids = {id(o.grid): o.grid for o in objs}
    first = next(iter(grids.values()))
    if any(g != first for g in grids.values()):
        raise ValueError("arguments live on different grids")


def gagliardo_p(u: DiscreteField, params: FractionalParams, tails: ExteriorWeights | None = None) -> float:
    """The discrete ``[u]_{s,p}^p``; the exterior term only with ``tail_mode='analytic'``."""
    if not u.support.inside.any():
        return 0.0
    return _kernel_for(u, params, tails).seminorm_p(u.on_support())


def duality_pairing(f: SourceTerm, u: DiscreteField) -> float:
    _check_grids(f, u)
    return float(u.grid.cell_volume * np.sum(f.density * u.values))


def energy(u: DiscreteField, f: SourceTerm, params: FractionalParams, tails: ExteriorWeights | None = None) -> float:
    return gagliardo_p(u, params, tails) / params.p - duality_pairing(f, u)


def energy_gradient(u: DiscreteField, f: SourceTerm, params: FractionalParams,
                    tails: ExteriorWeights | None = None) -> DiscreteField:
    """Gradient of :func:`energy` in the support coordinates; zero off the support."""
    _check_grids(f, u)
    if not u.support.inside.any():
        return DiscreteField.zeros(u.support)
    kernel = _kernel_for(u, params, tails)
    g = kernel.first_variation(u.on_support()) - u.grid.cell_volume * f.density[u.support.inside]
    return DiscreteField.from_support_values(u.support, g)


def operator_pairing(u: DiscreteField, v: DiscreteField, params: FractionalParams,
                     tails: ExteriorWeights | None = None) -> float:
    """``<(-Delta_p)^s u, v>`` with the normalisation of the seminorm."""
    _check_grids(u, v)
    support = DomainMask(u.grid, u.support.inside | v.support.inside)
    if not support.inside.any():
        return 0.0
    kernel = ReducedKernel(support, params, tails)
    return kernel.pairing(u.values[support.inside], v.values[support.inside])


def lp_norm(u: DiscreteField, p: float) -> float:
    return float((u.grid.cell_volume * np.sum(np.abs(u.values) ** p)) ** (1.0 / p))


def norm_sp(u: DiscreteField, params: FractionalParams, tails: ExteriorWeights | None = None) -> float:
    """``([u]^p + ||u||_p^p)^(1/p)``."""
    return (gagliardo_p(u, params, tails) + lp_norm(u, params.p) ** params.p) ** (1.0 / params.p)


@dataclass(frozen=True)
class PoincareDiagnostic:
    max_ratio: float
    mean_ratio: float
    samples: int


def poincare_diagnostic(mask: DomainMask, params: FractionalParams, tails: ExteriorWeights | None = None,
                        samples: int = 100, seed: int | None = 0) -> PoincareDiagnostic:
    """Measure ``||u||_p / [u]_{s,p}`` over random fields supported in ``mask``.

    Fields have i.i.d. uniform(-1, 1) node values.  The maximum is an
    empirical lower estimate of the Poincare constant of ``mask``.
    """
    if mask.is_empty():
        raise ValueError("Poincare diagnostic needs a nonempty mask")
    rng = np.random.default_rng(seed)
    kernel = ReducedKernel(mask, params, tails)
    p = params.p
    ratios = np.empty(samples)
    for k in range(samples):
        v = rng.uniform(-1.0, 1.0, size=kernel.size)
        lp = (mask.grid.cell_volume * np.sum(np.abs(v) ** p)) ** (1 / p)
        ratios[k] = lp / kernel.seminorm_p(v) ** (1 / p)
    if not np.all(np.isfinite(ratios)):
        raise ArithmeticError("non-finite Poincare ratio")
    return PoincareDiagnostic(float(ratios.max()), float(ratios.mean()), samples)

