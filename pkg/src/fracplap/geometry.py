"""Regular grids over a box D, node-set domains and domain sequences.

Domains are boolean node masks on a fixed :class:`GridSpec`.  Nodes on the
boundary layer of the box are never inside a mask, which is how the discrete
problems encode ``u = 0`` outside D.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

DEFAULT_MAX_NODES = 2**20


class GeometryError(ValueError):
    pass


@dataclass(frozen=True)
class GridSpec:
    dimension: int
    box_min: tuple[float, ...]
    box_max: tuple[float, ...]
    h: float
    shape: tuple[int, ...]

    @property
    def size(self) -> int:
        return int(np.prod(self.shape))

    @property
    def cell_volume(self) -> float:
        """``h**n``, the quadrature weight of one node."""
        return self.h**self.dimension

    def axes(self) -> list[np.ndarray]:
        return [self.box_min[a] + self.h * np.arange(self.shape[a]) for a in range(self.dimension)]

    def coordinates(self) -> np.ndarray:
        """Node coordinates, shape ``(size, dimension)``, C order (last axis fastest)."""
        mesh = np.meshgrid(*self.axes(), indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=1)

    def boundary_layer(self) -> np.ndarray:
        layer = np.zeros(self.shape, dtype=bool)
        for a in range(self.dimension):
            sl = [slice(None)] * self.dimension
            sl[a] = 0
            layer[tuple(sl)] = True
            sl[a] = self.shape[a] - 1
            layer[tuple(sl)] = True
        return layer.ravel()

    def interior(self) -> "DomainMask":
        """Mask of every non-boundary node (the discrete D)."""
        return DomainMask(self, ~self.boundary_layer())


def build_grid(dimension: int, box_min, box_max, h: float, max_nodes: int = DEFAULT_MAX_NODES) -> GridSpec:
    """Build a regular grid with spacing ``h`` anchored at ``box_min``.

    Scalars are accepted for ``box_min``/``box_max`` and broadcast to every
    axis.  The node count per axis is ``floor((max - min) / h) + 1``.
    """
    if dimension not in (1, 2):
        raise GeometryError(f"dimension must be 1 or 2, got {dimension}")
    try:
        lo = tuple(float(v) for v in np.broadcast_to(np.asarray(box_min, dtype=float), (dimension,)))
        hi = tuple(float(v) for v in np.broadcast_to(np.asarray(box_max, dtype=float), (dimension,)))
    except ValueError:
        raise GeometryError(f"box corners {box_min!r}, {box_max!r} do not fit dimension {dimension}") from None
    if not h > 0 or not math.isfinite(h):
        raise GeometryError(f"grid spacing must be positive, got {h}")
    if any(b <= a for a, b in zip(lo, hi)):
        raise GeometryError(f"degenerate box {lo} .. {hi}")
    # guard against floor(0.9999999) when the box length is a multiple of h
    shape = tuple(int(math.floor((b - a) / h + 1e-9)) + 1 for a, b in zip(lo, hi))
    total = int(np.prod(shape))
    if min(shape) < 2:
        raise GeometryError(f"fewer than 2 nodes on some axis (shape {shape})")
    if total > max_nodes:
        raise GeometryError(f"grid has {total} nodes, cap is {max_nodes}")
    return GridSpec(dimension, lo, hi, float(h), shape)


@dataclass(frozen=True, eq=False)
class DomainMask:
    grid: GridSpec
    inside: np.ndarray

    def __post_init__(self):
        inside = np.asarray(self.inside, dtype=bool).ravel()
        if inside.shape != (self.grid.size,):
            raise GeometryError(f"mask has {inside.size} entries, grid has {self.grid.size} nodes")
        if np.any(inside & self.grid.boundary_layer()):
            raise GeometryError("mask contains boundary-layer nodes of the box")
        inside.setflags(write=False)
        object.__setattr__(self, "inside", inside)

    def __eq__(self, other):
        if not isinstance(other, DomainMask):
            return NotImplemented
        return self.grid == other.grid and np.array_equal(self.inside, other.inside)

    __hash__ = None

    @property
    def count(self) -> int:
        return int(self.inside.sum())

    def is_empty(self) -> bool:
        return not self.inside.any()

    def issubset(self, other: "DomainMask") -> bool:
        _check_same_grid(self, other)
        return not np.any(self.inside & ~other.inside)

    def indices(self) -> np.ndarray:
        return np.flatnonzero(self.inside)

    @classmethod
    def empty(cls, grid: GridSpec) -> "DomainMask":
        return cls(grid, np.zeros(grid.size, dtype=bool))


def _check_same_grid(a: DomainMask, b: DomainMask) -> None:
    if a.grid != b.grid:
        raise GeometryError("masks live on different grids")


def set_minus(a: DomainMask, b: DomainMask) -> DomainMask:
    _check_same_grid(a, b)
    return DomainMask(a.grid, a.inside & ~b.inside)


def symmetric_difference(a: DomainMask, b: DomainMask) -> DomainMask:
    _check_same_grid(a, b)
    return DomainMask(a.grid, a.inside ^ b.inside)


def union(a: DomainMask, b: DomainMask) -> DomainMask:
    _check_same_grid(a, b)
    return DomainMask(a.grid, a.inside | b.inside)


def intersection(a: DomainMask, b: DomainMask) -> DomainMask:
    _check_same_grid(a, b)
    return DomainMask(a.grid, a.inside & b.inside)


# --------------------------------------------------------------------------
# shapes


@dataclass(frozen=True)
class Box:
    lower: tuple[float, ...]
    upper: tuple[float, ...]

    def __post_init__(self):
        if len(self.lower) != len(self.upper) or any(u <= l for l, u in zip(self.lower, self.upper)):
            raise GeometryError(f"box corners not ordered: {self.lower}, {self.upper}")

    @property
    def dimension(self) -> int:
        return len(self.lower)

    def contains(self, points: np.ndarray) -> np.ndarray:
        points = np.atleast_2d(points)
        return np.all((points > np.asarray(self.lower)) & (points < np.asarray(self.upper)), axis=1)


@dataclass(frozen=True)
class Ball:
    center: tuple[float, ...]
    radius: float

    def __post_init__(self):
        if not self.radius > 0:
            raise GeometryError(f"ball radius must be positive, got {self.radius}")

    @property
    def dimension(self) -> int:
        return len(self.center)

    def contains(self, points: np.ndarray) -> np.ndarray:
        # strict: nodes at exactly the radius are outside
        points = np.atleast_2d(points)
        return np.linalg.norm(points - np.asarray(self.center), axis=1) < self.radius


@dataclass(frozen=True)
class Difference:
    first: object
    second: object

    @property
    def dimension(self) -> int:
        return self.first.dimension

    def contains(self, points: np.ndarray) -> np.ndarray:
        return self.first.contains(points) & ~self.second.contains(points)


@dataclass(frozen=True)
class Union:
    first: object
    second: object

    @property
    def dimension(self) -> int:
        return self.first.dimension

    def contains(self, points: np.ndarray) -> np.ndarray:
        return self.first.contains(points) | self.second.contains(points)


SHAPE_TYPES = (Box, Ball, Difference, Union)


def _shape_dimension(shape) -> int:
    if not isinstance(shape, SHAPE_TYPES):
        raise TypeError(f"not a shape: {shape!r}")
    dims = {shape.dimension}
    if isinstance(shape, (Difference, Union)):
        dims |= {_shape_dimension(shape.first), _shape_dimension(shape.second)}
    if len(dims) != 1:
        raise GeometryError(f"shape mixes dimensions {sorted(dims)}")
    return dims.pop()


def rasterize(grid: GridSpec, shape, allow_empty: bool = False) -> DomainMask:
    """Mask of interior grid nodes whose coordinates lie in ``shape``."""
    if _shape_dimension(shape) != grid.dimension:
        raise GeometryError(f"shape is {shape.dimension}-D, grid is {grid.dimension}-D")
    inside = shape.contains(grid.coordinates()) & ~grid.boundary_layer()
    if not allow_empty and not inside.any():
        raise GeometryError("shape rasterizes to an empty mask")
    return DomainMask(grid, inside)


def shape_to_text(shape) -> str:
    """Inverse of the config-file shape grammar (see :mod:`fracplap.config`)."""
    if isinstance(shape, Box):
        return "box(" + ", ".join(repr(v) for v in (*shape.lower, *shape.upper)) + ")"
    if isinstance(shape, Ball):
        return "ball(" + ", ".join(repr(v) for v in (*shape.center, shape.radius)) + ")"
    if isinstance(shape, Difference):
        return f"difference({shape_to_text(shape.first)}, {shape_to_text(shape.second)})"
    if isinstance(shape, Union):
        return f"union({shape_to_text(shape.first)}, {shape_to_text(shape.second)})"
    raise TypeError(f"not a shape: {shape!r}")


# --------------------------------------------------------------------------
# distances


def _distance_to(grid: GridSpec, targets: np.ndarray) -> np.ndarray:
    """Euclidean distance from every node to the nearest node of ``targets``."""
    # the exact EDT measures distance to the nearest zero entry
    dist = ndimage.distance_transform_edt(~targets.reshape(grid.shape), sampling=grid.h)
    return np.asarray(dist).ravel()


def directed_hausdorff(grid: GridSpec, source: np.ndarray, target: np.ndarray) -> float:
    """``sup_{x in source} inf_{y in target} |x - y|`` over node sets."""
    if not source.any():
        return 0.0
    if not target.any():
        return math.inf
    return float(_distance_to(grid, target)[source].max())


def hausdorff_complementary_distance(a: DomainMask, b: DomainMask) -> float:
    """Hausdorff distance between the complements ``D \\ a`` and ``D \\ b``.

    Complements are taken in the closed box, so they always contain the
    boundary layer and are never empty.
    """
    _check_same_grid(a, b)
    ka, kb = ~a.inside, ~b.inside
    return max(directed_hausdorff(a.grid, ka, kb), directed_hausdorff(a.grid, kb, ka))


# --------------------------------------------------------------------------
# domain sequences

SEQUENCE_KINDS = ("shrinking_hole", "boundary_oscillation", "periodic_perforation")


@dataclass(frozen=True)
class DomainSequenceSpec:
    """A family of domains ``Omega_k`` approaching ``base``.

    ``shrinking_hole`` re-adds the ball ``B(center, radii[k])`` to the base
    domain, so ``Omega_k \\ Omega`` is that ball minus the base.
    ``boundary_oscillation`` adds the nodes within
    ``amplitudes[k] * (1 + sin(frequency * phase)) / 2`` of the base, where
    the phase is the coordinate in 1-D and the polar angle around the box
    centre in 2-D.  ``periodic_perforation`` removes balls of radius
    ``perforation[k][0]`` centred on a lattice of spacing
    ``perforation[k][1]``.

    Features whose size parameter is below the grid spacing are dropped.
    """

    kind: str
    base: object
    radii: tuple[float, ...] = ()
    center: tuple[float, ...] | None = None
    amplitudes: tuple[float, ...] = ()
    frequency: float = 8.0
    perforation: tuple[tuple[float, float], ...] = ()

    def __post_init__(self):
        if self.kind not in SEQUENCE_KINDS:
            raise GeometryError(f"unknown sequence kind {self.kind!r}")
        sched = self.schedule
        if any(not (v > 0) for v in np.ravel(np.asarray(sched, dtype=float))):
            raise GeometryError(f"{self.kind}: schedule values must be positive")
        if self.kind == "shrinking_hole" and any(b >= a for a, b in zip(self.radii, self.radii[1:])):
            raise GeometryError("shrinking_hole radii must be strictly decreasing")

    @property
    def schedule(self) -> tuple:
        return {
            "shrinking_hole": self.radii,
            "boundary_oscillation": self.amplitudes,
            "periodic_perforation": self.perforation,
        }[self.kind]

    @property
    def steps(self) -> int:
        return len(self.schedule)


@dataclass
class DomainSequence:
    limit: DomainMask
    masks: list[DomainMask] = field(default_factory=list)

    def __len__(self):
        return len(self.masks)


def _box_center(grid: GridSpec) -> np.ndarray:
    return (np.asarray(grid.box_min) + np.asarray(grid.box_max)) / 2


def generate_sequence(spec: DomainSequenceSpec, grid: GridSpec) -> DomainSequence:
    limit = rasterize(grid, spec.base)
    interior = ~grid.boundary_layer()
    xyz = grid.coordinates()
    masks = []
    if spec.kind == "shrinking_hole":
        center = np.asarray(spec.center if spec.center is not None else _box_center(grid), dtype=float)
        if center.shape != (grid.dimension,):
            raise GeometryError("hole centre dimension does not match the grid")
        for r in spec.radii:
            added = np.zeros(grid.size, dtype=bool)
            if r >= grid.h:
                added = (np.linalg.norm(xyz - center, axis=1) < r) & interior & ~limit.inside
                if not added.any():
                    raise GeometryError(f"hole of radius {r} at {tuple(center)} adds no nodes")
            masks.append(DomainMask(grid, limit.inside | added))
    elif spec.kind == "boundary_oscillation":
        dist = _distance_to(grid, limit.inside)
        if grid.dimension == 1:
            phase = xyz[:, 0]
        else:
            rel = xyz - _box_center(grid)
            phase = np.arctan2(rel[:, 1], rel[:, 0])
        profile = 0.5 * (1.0 + np.sin(spec.frequency * phase))
        for a in spec.amplitudes:
            added = np.zeros(grid.size, dtype=bool)
            if a >= grid.h:
                added = (dist < a * profile) & interior
            masks.append(DomainMask(grid, limit.inside | added))
    else:
        for radius, spacing in spec.perforation:
            removed = np.zeros(grid.size, dtype=bool)
            if radius >= grid.h:
                axes = [
                    np.arange(lo + spacing / 2, hi, spacing) for lo, hi in zip(grid.box_min, grid.box_max)
                ]
                centers = np.stack([m.ravel() for m in np.meshgrid(*axes, indexing="ij")], axis=1)
                for c in centers:
                    removed |= np.linalg.norm(xyz - c, axis=1) < radius
                removed &= limit.inside
                if not removed.any():
                    raise GeometryError(f"perforation ({radius}, {spacing}) removes no nodes")
            masks.append(DomainMask(grid, limit.inside & ~removed))
    return DomainSequence(limit, masks)


def mask_to_csv(mask: DomainMask) -> str:
    grid = mask.grid
    xyz = grid.coordinates()
    cols = ["node", "x", "y"][: grid.dimension + 1] + ["inside"]
    lines = [",".join(cols)]
    for i in range(grid.size):
        coords = ",".join(f"{v:.12g}" for v in xyz[i])
        lines.append(f"{i},{coords},{int(mask.inside[i])}")
    return "\n".join(lines) + "\n"
