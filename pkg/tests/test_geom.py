import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mralp import geom
from mralp.geom import (CYCLE, LONGEST, QUADTREE, Domain, EmptyLeafError, PartitionSpec, RandomSubset,
                        assign_points, build_partition, select_knots, validate_leaves)

UNIT = Domain((0.0, 0.0), (100.0, 100.0))


def test_zero_resolution_single_node():
    t = build_partition(UNIT, PartitionSpec(J=()))
    assert t.leaves() == [()]


def test_longest_axis_quadrants():
    t = build_partition(UNIT, PartitionSpec(J=(2, 2), rule=LONGEST))
    boxes = sorted((tuple(t.boxes[p][0]), tuple(t.boxes[p][1])) for p in t.leaves())
    assert boxes == [((0, 0), (50, 50)), ((0, 50), (50, 100)), ((50, 0), (100, 50)), ((50, 50), (100, 100))]
    assert t.boxes[(1,)][1][0] == 50.0 and t.boxes[(1,)][1][1] == 100.0


def test_repeated_halving_geometry():
    t = build_partition(UNIT, PartitionSpec(J=(2,) * 5))
    assert len(t.leaves()) == 32
    areas = {float(np.prod(np.subtract(t.boxes[p][1], t.boxes[p][0]))) for p in t.leaves()}
    assert areas == {100.0 ** 2 / 32}


@pytest.mark.parametrize("rule, J", [(CYCLE, (3, 2)), (QUADTREE, (4, 4)), (LONGEST, (4, 3))])
def test_children_tile_parent(rule, J):
    t = build_partition(UNIT, PartitionSpec(J=J, rule=rule))
    for m in range(t.M):
        for p in t.nodes_at(m):
            lo, hi = t.boxes[p]
            area = np.prod(np.subtract(hi, lo))
            kids = t.children(p)
            assert len(kids) == J[m]
            assert sum(np.prod(np.subtract(t.boxes[c][1], t.boxes[c][0])) for c in kids) == pytest.approx(area)


def test_split_plane_goes_to_higher_slab_and_max_corner_to_last():
    t = assign_points(build_partition(UNIT, PartitionSpec(J=(2, 2))), np.array([[50.0, 10.0], [100.0, 100.0]]))
    paths = t.locate(np.array([[50.0, 10.0], [100.0, 100.0]]))
    assert paths[0] == (2, 1)
    assert paths[1] == t.leaves()[-1]


def test_outside_point_rejected():
    t = build_partition(UNIT, PartitionSpec(J=(2,)))
    with pytest.raises(ValueError, match="row 1"):
        assign_points(t, np.array([[1.0, 1.0], [101.0, 5.0]]))


def test_leaf_counts_binomial():
    X = np.random.default_rng(0).uniform(0, 100, (10000, 2))
    t = assign_points(build_partition(UNIT, PartitionSpec(J=(2, 2))), X)
    counts = [len(t.assignments[p]) for p in t.leaves()]
    assert sum(counts) == 10000
    sd = np.sqrt(10000 * 0.25 * 0.75)
    assert all(abs(c - 2500) <= 5 * sd for c in counts)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10 ** 6), st.integers(1, 200))
def test_parent_is_concatenation_of_children(seed, n):
    X = np.random.default_rng(seed).uniform(0, 100, (n, 2))
    t = assign_points(build_partition(UNIT, PartitionSpec(J=(3, 2))), X)
    for m in range(t.M):
        for p in t.nodes_at(m):
            cat = np.concatenate([t.assignments[c] for c in t.children(p)])
            assert np.array_equal(cat, t.assignments[p])
    leaves = np.concatenate([t.assignments[p] for p in t.leaves()])
    assert np.array_equal(np.sort(leaves), np.arange(n))


def test_empty_leaf_report():
    X = np.array([[1.0, 1.0], [2.0, 3.0], [10.0, 20.0], [30.0, 40.0]])
    t = assign_points(build_partition(UNIT, PartitionSpec(J=(2, 2))), X)
    assert sorted(validate_leaves(t)) == [(1, 2), (2, 1), (2, 2)]
    with pytest.raises(EmptyLeafError):
        geom.require_nonempty_leaves(t)


def test_one_empty_leaf_named():
    X = np.array([[10.0, 10.0], [10.0, 60.0], [60.0, 10.0]])
    t = assign_points(build_partition(UNIT, PartitionSpec(J=(2, 2))), X)
    assert validate_leaves(t) == [(2, 2)]
    X = np.vstack([X, [[60.0, 60.0]]])
    assert validate_leaves(assign_points(build_partition(UNIT, PartitionSpec(J=(2, 2))), X)) == []


def test_knot_sizes_and_determinism():
    X = np.random.default_rng(1).uniform(0, 100, (1000, 2))
    t = assign_points(build_partition(UNIT, PartitionSpec(J=(2, 2))), X)
    a = select_knots(t, RandomSubset((300, 100)), seed=5)
    b = select_knots(t, RandomSubset((300, 100)), seed=5)
    assert len(a[()]) == 300 and all(len(a[p]) == 100 for p in t.nodes_at(1))
    assert all(np.array_equal(a[p], b[p]) for p in a.knots)
    c = select_knots(t, RandomSubset((300, 100)), seed=6)
    assert not np.array_equal(a[()], c[()])


def test_full_knots_equal_points():
    X = np.random.default_rng(2).uniform(0, 100, (50, 2))
    t = assign_points(build_partition(UNIT, PartitionSpec(J=(2,))), X)
    k = select_knots(t, RandomSubset((None,)))
    assert np.array_equal(np.sort(k.point_ids[()]), np.arange(50))
    assert sorted(map(tuple, k[()])) == sorted(map(tuple, X))


def test_exclude_ancestors_gives_disjoint_knots():
    X = np.random.default_rng(3).uniform(0, 100, (400, 2))
    t = assign_points(build_partition(UNIT, PartitionSpec(J=(2, 2, 2))), X)
    k = select_knots(t, RandomSubset((30, 30, 30), exclude_ancestors=True))
    for p in t.nodes_at(2):
        ids = [set(k.point_ids[p[:m]].tolist()) for m in range(3)]
        assert not (ids[0] & ids[1] or ids[0] & ids[2] or ids[1] & ids[2])


def test_too_many_knots_rejected():
    X = np.random.default_rng(4).uniform(0, 100, (20, 2))
    t = assign_points(build_partition(UNIT, PartitionSpec(J=(2,))), X)
    with pytest.raises(ValueError, match="requested"):
        select_knots(t, RandomSubset((21,)))
