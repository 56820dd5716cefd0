import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fracplap.geometry import (
    Ball,
    Box,
    Difference,
    DomainMask,
    DomainSequenceSpec,
    GeometryError,
    Union,
    build_grid,
    generate_sequence,
    hausdorff_complementary_distance,
    intersection,
    mask_to_csv,
    rasterize,
    set_minus,
    shape_to_text,
    symmetric_difference,
    union,
)


def brute_hausdorff_complement(a: DomainMask, b: DomainMask) -> float:
    """Max-min over explicit point lists, complements taken inside the grid."""
    xyz = a.grid.coordinates()
    ca, cb = xyz[~a.inside], xyz[~b.inside]
    if len(ca) == 0 and len(cb) == 0:
        return 0.0

    def directed(src, dst):
        if len(src) == 0:
            return 0.0
        if len(dst) == 0:
            return np.inf
        d = np.sqrt(((src[:, None, :] - dst[None, :, :]) ** 2).sum(-1))
        return d.min(axis=1).max()

    return max(directed(ca, cb), directed(cb, ca))


def test_grid_node_counts():
    g = build_grid(1, [0], [1], 0.25)
    assert g.shape == (5,)
    np.testing.assert_allclose(g.axes()[0], [0, 0.25, 0.5, 0.75, 1.0])
    g2 = build_grid(2, [0, 0], [1, 2], 0.5)
    assert g2.shape == (3, 5)
    assert g2.size == 15
    assert g2.cell_volume == pytest.approx(0.25)


@pytest.mark.parametrize(
    "args",
    [
        (1, [1], [0], 0.1),
        (1, [0], [1], 0.0),
        (1, [0], [1], 2.0),
        (3, [0, 0, 0], [1, 1, 1], 0.5),
        (2, [0, 0, 0], [1, 1, 1], 0.5),
    ],
)
def test_grid_rejects(args):
    with pytest.raises(GeometryError):
        build_grid(*args)


def test_grid_node_cap():
    with pytest.raises(GeometryError):
        build_grid(2, [0, 0], [1, 1], 1e-3, max_nodes=1000)


def test_boundary_layer_excluded_from_masks():
    g = build_grid(1, [0], [1], 0.25)
    inside = np.array([True, True, False, False, False])
    with pytest.raises(GeometryError):
        DomainMask(g, inside)
    full = rasterize(g, Box((-1,), (2,)))
    assert not full.inside[0] and not full.inside[-1]
    assert full.count == 3


def test_rasterize_ball_and_difference_1d():
    g = build_grid(1, [0], [1], 0.1)
    ring = rasterize(g, Difference(Box((0,), (1,)), Ball((0.5,), 0.25)))
    x = g.coordinates()[:, 0]
    expected = (x > 0) & (x < 1) & (np.abs(x - 0.5) >= 0.25)
    expected[[0, -1]] = False
    np.testing.assert_array_equal(ring.inside, expected)


def test_rasterize_empty_rejected_unless_allowed():
    g = build_grid(1, [0], [1], 0.1)
    with pytest.raises(GeometryError):
        rasterize(g, Ball((0.55,), 0.01))
    assert rasterize(g, Ball((0.55,), 0.01), allow_empty=True).is_empty()


def test_shape_dimension_mismatch():
    g = build_grid(2, [0, 0], [1, 1], 0.1)
    with pytest.raises(GeometryError):
        rasterize(g, Ball((0.5,), 0.2))


def test_shape_to_text_round_trip_through_config_parser():
    from fracplap.config import parse_shape

    shape = Union(Difference(Box((0.0, 0.0), (1.0, 1.0)), Ball((0.5, 0.5), 0.3)), Ball((0.1, 0.2), 0.05))
    assert parse_shape(shape_to_text(shape)) == shape


def test_set_operations():
    g = build_grid(1, [0], [1], 0.1)
    a = rasterize(g, Box((0,), (0.6,)))
    b = rasterize(g, Box((0.4,), (1,)))
    assert union(a, b) == g.interior()
    assert intersection(a, b).count == 1
    assert set_minus(a, b).count == a.count - 1
    assert symmetric_difference(a, b) == union(set_minus(a, b), set_minus(b, a))
    other = build_grid(1, [0], [1], 0.2)
    with pytest.raises(GeometryError):
        union(a, other.interior())


def test_hausdorff_identical_masks_is_zero():
    g = build_grid(2, [0, 0], [1, 1], 0.1)
    m = rasterize(g, Ball((0.5, 0.5), 0.3))
    assert hausdorff_complementary_distance(m, m) == 0.0


def test_hausdorff_hand_example_1d():
    # Complements {0, 1} and {0, 0.5, 1} on h = 0.25: the node 0.5 is 0.5 from {0, 1}.
    g = build_grid(1, [0], [1], 0.25)
    full = g.interior()
    holed = set_minus(full, rasterize(g, Ball((0.5,), 0.1)))
    assert hausdorff_complementary_distance(full, holed) == pytest.approx(0.5)


@settings(max_examples=40, deadline=None)
@given(
    st.lists(st.booleans(), min_size=7 * 7, max_size=7 * 7),
    st.lists(st.booleans(), min_size=7 * 7, max_size=7 * 7),
)
def test_hausdorff_matches_brute_force(bits_a, bits_b):
    g = build_grid(2, [0, 0], [1, 1], 1 / 6)
    interior = ~g.boundary_layer()
    a = DomainMask(g, np.array(bits_a) & interior)
    b = DomainMask(g, np.array(bits_b) & interior)
    assert hausdorff_complementary_distance(a, b) == pytest.approx(brute_hausdorff_complement(a, b), abs=1e-12)


@settings(max_examples=30, deadline=None)
@given(st.lists(st.booleans(), min_size=3 * 11, max_size=3 * 11))
def test_hausdorff_symmetric_and_triangle(bits):
    g = build_grid(1, [0], [1], 0.1)
    interior = ~g.boundary_layer()
    a, b, c = (DomainMask(g, np.array(bits[k * 11:(k + 1) * 11]) & interior) for k in range(3))
    d = hausdorff_complementary_distance
    assert d(a, b) == d(b, a)
    assert d(a, c) <= d(a, b) + d(b, c) + 1e-12


def test_shrinking_hole_sequence_1d():
    g = build_grid(1, [0], [1], 1 / 127)
    spec = DomainSequenceSpec(
        kind="shrinking_hole",
        base=Difference(Box((0,), (1,)), Ball((0.5,), 0.3)),
        radii=(0.3, 0.15, 0.075, 0.0375, 0.01875),
    )
    seq = generate_sequence(spec, g)
    assert len(seq) == 5
    for m in seq.masks:
        assert seq.limit.issubset(m)
    extra = [set_minus(m, seq.limit).count for m in seq.masks]
    assert extra == sorted(extra, reverse=True) and extra[-1] > 0
    dh = [hausdorff_complementary_distance(m, seq.limit) for m in seq.masks]
    assert all(x > y for x, y in zip(dh, dh[1:]))


def test_shrinking_hole_drops_subgrid_radius():
    g = build_grid(2, [0, 0], [1, 1], 1 / 31)
    spec = DomainSequenceSpec(
        kind="shrinking_hole",
        base=Difference(Box((0, 0), (1, 1)), Ball((0.5, 0.5), 0.3)),
        radii=(0.3, 0.01875),
    )
    seq = generate_sequence(spec, g)
    assert seq.masks[-1] == seq.limit


def test_sequence_spec_validation():
    base = Box((0,), (1,))
    with pytest.raises(GeometryError):
        DomainSequenceSpec(kind="shrinking_hole", base=base, radii=(0.1, 0.2))
    with pytest.raises(GeometryError):
        DomainSequenceSpec(kind="spiral", base=base)


def test_boundary_oscillation_contains_base_and_shrinks():
    g = build_grid(2, [0, 0], [1, 1], 1 / 31)
    spec = DomainSequenceSpec(
        kind="boundary_oscillation", base=Ball((0.5, 0.5), 0.3), amplitudes=(0.1, 0.05, 0.02)
    )
    seq = generate_sequence(spec, g)
    counts = [m.count for m in seq.masks]
    assert all(seq.limit.issubset(m) for m in seq.masks)
    assert counts == sorted(counts, reverse=True)


def test_periodic_perforation_is_constant_for_fixed_holes():
    g = build_grid(1, [0], [1], 1 / 127)
    spec = DomainSequenceSpec(
        kind="periodic_perforation", base=Box((0,), (1,)), perforation=((0.03, 0.2),) * 3
    )
    seq = generate_sequence(spec, g)
    assert all(m == seq.masks[0] for m in seq.masks)
    assert seq.masks[0].issubset(seq.limit) and seq.masks[0] != seq.limit


def test_mask_csv_schema():
    g = build_grid(2, [0, 0], [1, 1], 0.5)
    text = mask_to_csv(g.interior())
    rows = [r.split(",") for r in text.strip().splitlines()]
    assert rows[0] == ["node", "x", "y", "inside"]
    assert len(rows) == 1 + g.size
    assert sum(int(r[3]) for r in rows[1:]) == 1
    assert list(itertools.chain(*[r[:1] for r in rows[1:]])) == [str(i) for i in range(g.size)]
