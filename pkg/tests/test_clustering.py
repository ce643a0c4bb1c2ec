import json

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from elastohm.clustering import (
    admissible,
    box_diameter,
    box_distance,
    build_block_partition,
    build_cluster_tree,
    sparsity_constant,
)

point_sets = st.integers(1, 120).flatmap(
    lambda n: arrays(np.float64, (n, 3), elements=st.floats(-10, 10, allow_subnormal=False)))


def _check_tree(tree, boxes):
    n = len(boxes)
    assert np.array_equal(np.sort(tree.perm), np.arange(n))
    assert np.array_equal(tree.perm[tree.inverse_perm], np.arange(n))
    covered = np.zeros(n, dtype=int)
    for c in tree.nodes:
        idx = tree.indices(c)
        assert np.all(boxes[idx, 0] >= c.box[0]) and np.all(boxes[idx, 1] <= c.box[1])
        if c.is_leaf:
            covered[c.start:c.stop] += 1
        else:
            a, b = c.children
            assert (a.start, a.stop, b.start, b.stop) == (c.start, a.stop, a.stop, c.stop)
            assert a.size >= b.size >= 1 and a.level == b.level == c.level + 1
    assert np.all(covered == 1)


@given(point_sets, st.integers(1, 20))
def test_cluster_tree_invariants(pts, b_min):
    tree = build_cluster_tree(pts, b_min)
    boxes = np.stack([pts, pts], axis=1)
    _check_tree(tree, boxes)
    for leaf in tree.leaves:
        # only coincident midpoints may leave a leaf above b_min
        if leaf.size > b_min:
            assert np.ptp(pts[tree.indices(leaf)], axis=0).max() == 0.0


def test_cluster_tree_over_triangle_boxes(cube):
    tree = build_cluster_tree(cube.boxes, 15)
    _check_tree(tree, cube.boxes)
    assert max(c.size for c in tree.leaves) <= 15
    assert tree.depth == max(c.level for c in tree.leaves)


def test_cluster_tree_is_deterministic(cube):
    a = build_cluster_tree(cube.boxes, 15)
    b = build_cluster_tree(cube.boxes.copy(), 15)
    assert np.array_equal(a.perm, b.perm)


def test_cluster_tree_errors():
    with pytest.raises(ValueError):
        build_cluster_tree(np.zeros((0, 3)), 4)
    with pytest.raises(ValueError):
        build_cluster_tree(np.zeros((5, 3)), 0)
    with pytest.raises(ValueError):
        build_cluster_tree(np.zeros((5, 2)), 2)


def test_coincident_points_stop_subdivision():
    tree = build_cluster_tree(np.ones((10, 3)), 2)
    assert len(tree.nodes) == 1 and tree.root.size == 10


def test_box_metrics():
    a = np.array([[0.0, 0, 0], [1, 1, 1]])
    b = np.array([[2.0, 0, 3], [3, 1, 4]])
    assert box_diameter(a) == pytest.approx(np.sqrt(3))
    assert box_distance(a, b) == pytest.approx(np.sqrt(1 + 4))
    assert box_distance(a, a) == 0.0
    assert admissible(a, b, 1.0) and not admissible(a, b, 0.5)
    with pytest.raises(ValueError):
        admissible(a, b, 0.0)


def _check_partition(part, n_rows, n_cols):
    cover = np.zeros((n_rows, n_cols), dtype=int)
    for b in part.blocks:
        cover[np.ix_(part.row_indices(b), part.col_indices(b))] += 1
        if b.admissible:
            assert min(box_diameter(b.row.box), box_diameter(b.col.box)) < part.beta * box_distance(b.row.box, b.col.box)
        else:
            assert b.row.is_leaf or b.col.is_leaf
    assert np.all(cover == 1)


@given(point_sets, point_sets, st.integers(1, 8), st.floats(0.2, 3.0))
def test_block_partition_covers_exactly_once(rows, cols, b_min, beta):
    tr, tc = build_cluster_tree(rows, b_min), build_cluster_tree(cols, b_min)
    part = build_block_partition(tr, tc, beta)
    _check_partition(part, len(rows), len(cols))
    assert [b.index for b in part.blocks] == list(range(len(part.blocks)))


def test_sparsity_constant_brute_force(cube):
    tree = build_cluster_tree(cube.boxes, 15)
    part = build_block_partition(tree, tree, 0.8)
    _check_partition(part, cube.n_triangles, cube.n_triangles)
    per_row = {}
    per_col = {}
    for b in part.blocks:
        per_row[id(b.row)] = per_row.get(id(b.row), 0) + 1
        per_col[id(b.col)] = per_col.get(id(b.col), 0) + 1
    assert sparsity_constant(part) == max(max(per_row.values()), max(per_col.values()))
    assert part.admissible_blocks and part.nonadmissible_blocks
    assert len(part.admissible_blocks) + len(part.nonadmissible_blocks) == len(part.blocks)


def test_partition_json(tet):
    tree = build_cluster_tree(tet.boxes, 1)
    part = build_block_partition(tree, tree, 0.8)
    data = json.loads(part.to_json())
    assert data["shape"] == [4, 4]
    assert len(data["blocks"]) == len(part.blocks)
    # every pair of tetrahedron faces touches, so nothing is admissible
    assert not any(b["admissible"] for b in data["blocks"])
