import numpy as np
import pytest
from hypothesis import given, strategies as st

import elastohm
from elastohm.mesh import (
    DofError,
    MeshError,
    classify_dofs,
    load_mesh,
    make_mesh,
    parse_predicate,
    read_labels,
    read_off,
    write_labels,
    write_off,
)
from meshgen import box, octahedron


@pytest.mark.parametrize("name, nodes, tris, volume", [
    ("tetrahedron", 4, 4, None),
    ("cube_488", 488, 972, 8.0),
    ("cube_1946", 1946, 3888, 8.0),
    ("double_t_beam", 418, 832, None),
])
def test_shipped_meshes_are_closed_and_outward(name, nodes, tris, volume):
    m = load_mesh(elastohm.mesh_path(name))
    assert (m.n_vertices, m.n_triangles) == (nodes, tris)
    assert m.signed_volume > 0
    if volume is not None:
        assert m.signed_volume == pytest.approx(volume, rel=1e-12)
    # Euler characteristic of a sphere-like surface
    assert m.n_vertices - 3 * m.n_triangles // 2 + m.n_triangles == 2


def test_cube_geometry(cube):
    assert cube.areas.sum() == pytest.approx(24.0, rel=1e-12)
    assert np.allclose(np.linalg.norm(cube.normals, axis=1), 1.0)
    # each face normal is the outward axis direction of the face it lies on
    c = cube.centroids
    axis = np.argmax(np.abs(c), axis=1)
    expected = np.zeros_like(c)
    expected[np.arange(len(c)), axis] = np.sign(c[np.arange(len(c)), axis])
    assert np.allclose(cube.normals, expected)
    assert np.all(cube.boxes[:, 0] <= cube.centroids) and np.all(cube.centroids <= cube.boxes[:, 1])


def test_cube_labelling(cube):
    d = cube.dirichlet
    c = cube.centroids
    on = np.isclose(c[:, 0], 1) | np.isclose(c[:, 1], -1) | np.isclose(c[:, 2], 1)
    assert np.array_equal(d, on)
    assert np.array_equal(cube.neumann, ~on)


def test_surface_gradients_reproduce_linear_functions(cube, rng):
    a = rng.standard_normal(3)
    f = cube.vertices @ a  # linear function sampled at the nodes
    g = np.einsum("ma,mak->mk", f[cube.triangles], cube.surface_gradients)
    n = cube.normals
    tangential = a - (n @ a)[:, None] * n
    assert np.allclose(g, tangential, atol=1e-12)
    # hat functions sum to one, so their gradients sum to zero
    assert np.allclose(cube.surface_gradients.sum(axis=1), 0.0, atol=1e-12)


def test_incidence_structures_agree(tet):
    indptr, tri, loc = tet.node_incidence
    for v in range(tet.n_vertices):
        ts = tri[indptr[v]:indptr[v + 1]]
        assert sorted(ts) == sorted(tet.vertex_triangles[v])
        assert np.all(tet.triangles[ts, loc[indptr[v]:indptr[v + 1]]] == v)


@given(st.integers(1, 3), st.integers(1, 3), st.integers(1, 2), st.integers(1, 2),
       st.floats(0.1, 10.0), st.floats(-5, 5))
def test_voxel_boxes_are_valid_meshes(nx, ny, nz, sub, cell, shift):
    v, t = box(nx, ny, nz, sub, cell, origin=(shift, 0.0, -shift))
    m = make_mesh(v, t)
    assert m.signed_volume == pytest.approx(nx * ny * nz * cell**3, rel=1e-10)
    assert m.areas.sum() == pytest.approx(2 * (nx * ny + ny * nz + nx * nz) * cell**2, rel=1e-10)


def test_inward_orientation_is_flipped():
    v, t = octahedron()
    m = make_mesh(v, t[:, ::-1])
    assert m.signed_volume > 0
    assert np.allclose(m.normals, make_mesh(v, t).normals)


@given(st.integers(0, 2**31 - 1))
def test_off_round_trip(tmp_path_factory, seed):
    rng = np.random.default_rng(seed)
    v, t = octahedron()
    v = v * rng.uniform(0.5, 2.0) + rng.standard_normal(3)
    path = tmp_path_factory.mktemp("off") / "m.off"
    write_off(path, v, t)
    v2, t2 = read_off(path)
    assert np.array_equal(v, v2) and np.array_equal(t, t2)


def test_off_comments_and_header(tmp_path):
    p = tmp_path / "m.off"
    v, t = octahedron()
    body = "\n".join(f"{a} {b} {c}" for a, b, c in v) + "\n" + "\n".join(f"3 {a} {b} {c}  # face" for a, b, c in t)
    p.write_text(f"# comment\n6 8 0\n{body}\n")
    v2, t2 = read_off(p)
    assert np.array_equal(v2, v) and np.array_equal(t2, t)


@pytest.mark.parametrize("text, message", [
    ("OFF\n3 1 0\n0 0 0\n1 0 0\n0 1 0\n4 0 1 2 0\n", "only triangles"),
    ("OFF\n3 1 0\n0 0 0\n1 0 0\n0 1 0\n3 0 1 2\n7\n", "trailing"),
    ("OFF\n3 2 0\n0 0 0\n1 0 0\n0 1 0\n3 0 1 2\n", "cannot parse"),
    ("OFF\nx y z\n", "cannot parse"),
])
def test_malformed_off(tmp_path, text, message):
    p = tmp_path / "bad.off"
    p.write_text(text)
    with pytest.raises(MeshError, match=message):
        read_off(p)


def test_missing_file(tmp_path):
    with pytest.raises(MeshError, match="does not exist"):
        load_mesh(tmp_path / "nope.off")


def _hanging_node_mesh():
    # split one edge of a face of the unit box on one side only
    v, t = box()
    a, b, c = t[0]
    mid = len(v)
    v = np.vstack([v, 0.5 * (v[a] + v[b])])
    t = np.vstack([t[1:], [[a, mid, c], [mid, b, c]]])
    return v, t


@pytest.mark.parametrize("make, message", [
    (lambda: (octahedron()[0], octahedron()[1][:-1]), "exactly two"),
    (_hanging_node_mesh, "exactly two"),
    (lambda: (octahedron()[0], np.vstack([octahedron()[1], octahedron()[1][:1]])), "duplicated"),
    (lambda: (octahedron()[0], np.vstack([octahedron()[1][:-1], [[0, 0, 1]]])), "repeated vertex"),
    (lambda: (octahedron()[0], np.vstack([octahedron()[1][:-1], [[0, 1, 9]]])), "out of range"),
    (lambda: (np.vstack([octahedron()[0], [[0.5, 0.5, 0.0]]]),
              np.vstack([octahedron()[1], [[0, 2, 6]]])), "zero area"),
    (lambda: (octahedron()[0], np.vstack([octahedron()[1][:1, ::-1], octahedron()[1][1:]])), "oriented"),
    (lambda: (np.zeros((3, 3)), np.zeros((0, 3), dtype=int)), "no triangles"),
])
def test_invalid_topology(make, message):
    v, t = make()
    with pytest.raises(MeshError, match=message):
        make_mesh(v, t)


def test_corrupted_shipped_mesh(tmp_path):
    text = elastohm.mesh_path("cube_488").read_text().splitlines()
    # drop the last face but keep the header count: parse error
    p = tmp_path / "short.off"
    p.write_text("\n".join(text[:-1]) + "\n")
    with pytest.raises(MeshError):
        load_mesh(p)


def test_label_files(tmp_path):
    v, t = octahedron()
    mask = np.array([True, False] * 4)
    p = tmp_path / "m.labels"
    write_labels(p, mask)
    assert np.array_equal(read_labels(p, 8), mask)
    m = load_mesh_from_arrays(tmp_path, v, t, p)
    assert np.array_equal(m.dirichlet, mask)
    with pytest.raises(MeshError, match="8 labels for 7 triangles"):
        read_labels(p, 7)
    p.write_text("D N X D N D N D\n")
    with pytest.raises(MeshError, match="unknown labels"):
        read_labels(p, 8)


def load_mesh_from_arrays(tmp_path, v, t, labels):
    path = tmp_path / "m.off"
    write_off(path, v, t)
    return load_mesh(path, labels)


def test_empty_dirichlet_rejected():
    v, t = octahedron()
    with pytest.raises(MeshError, match="empty Dirichlet"):
        make_mesh(v, t, "false")
    with pytest.raises(MeshError, match="every triangle"):
        make_mesh(v, t, np.ones(3, dtype=bool))


@pytest.mark.parametrize("source, expect", [
    ("x1 == 1", [True, False, False]),
    ("x1 == 1 + 1e-12", [True, False, False]),
    ("x1 != 1", [False, True, True]),
    ("x2 > 0 and not x3 < 0", [False, True, False]),
    ("x1 == 1 or x3 == -2", [True, False, True]),
    ("-1 <= x3 <= 1", [True, True, False]),
    ("2 * x2 / 4 >= 0.5 - x1", [True, True, False]),
    ("true", [True, True, True]),
    ("(x1 < 0.5) and (x2 > 0.5)", [False, True, False]),
])
def test_predicates(source, expect):
    pts = np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 0.5], [0.0, 0.0, -2.0]])
    assert parse_predicate(source)(pts).tolist() == expect


@pytest.mark.parametrize("source", ["x4 == 1", "__import__('os')", "x1 ** 2 > 1", "x1 ==", "'a' == x1",
                                    "x1 in (1, 2)", "abs(x1) > 0"])
def test_bad_predicates(source):
    with pytest.raises(MeshError):
        parse_predicate(source)


@given(st.lists(st.floats(-10, 10), min_size=3, max_size=3), st.floats(-10, 10))
def test_predicate_matches_python(p, c):
    pt = np.array([p])
    assert parse_predicate(f"x1 + x2 < {c!r} or x3 >= {c!r}")(pt)[0] == (p[0] + p[1] < c or p[2] >= c)


def test_dof_classification(cube):
    lay = classify_dofs(cube)
    assert np.array_equal(lay.t_triangles, np.flatnonzero(cube.dirichlet))
    touching = np.unique(cube.triangles[cube.dirichlet])
    assert np.intersect1d(lay.u_nodes, touching).size == 0
    assert np.union1d(lay.u_nodes, touching).size == cube.n_vertices
    t_idx, u_idx = lay.t_index(), lay.u_index()
    assert len(t_idx) == lay.n_t and len(u_idx) == lay.n_u
    assert len(np.unique(t_idx)) == len(t_idx) and t_idx.max() < 3 * cube.n_triangles
    assert u_idx.max() < 3 * cube.n_vertices


def test_all_dirichlet_has_no_displacement_unknowns(tet):
    lay = classify_dofs(tet.with_labels(np.ones(tet.n_triangles, dtype=bool)))
    assert lay.n_u == 0
    with pytest.raises(DofError):
        lay.u_index()


def test_mesh_is_immutable(tet):
    with pytest.raises(ValueError):
        tet.vertices[0, 0] = 1.0
