"""Triangulated closed surfaces with a Dirichlet/Neumann labelling."""
from __future__ import annotations

import ast
import logging
import operator
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Callable, Union

import numpy as np

logger = logging.getLogger(__name__)

__all__ = [
    "MeshError",
    "SurfaceMesh",
    "DofLayout",
    "load_mesh",
    "read_off",
    "write_off",
    "read_labels",
    "write_labels",
    "parse_predicate",
    "classify_dofs",
]


class MeshError(ValueError):
    """Raised for unreadable, degenerate or non-admissible meshes."""


@dataclass(frozen=True, eq=False)
class SurfaceMesh:
    """Immutable closed triangle surface.

    ``dirichlet`` is a boolean mask over triangles; the Neumann part is its
    complement.  Triangles are oriented so that normals point outwards.
    """

    vertices: np.ndarray
    triangles: np.ndarray
    dirichlet: np.ndarray = field(repr=False)

    def __post_init__(self):
        for arr in (self.vertices, self.triangles, self.dirichlet):
            arr.setflags(write=False)

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)

    @cached_property
    def corners(self) -> np.ndarray:
        """(M, 3, 3) array of triangle vertex coordinates."""
        c = self.vertices[self.triangles]
        c.setflags(write=False)
        return c

    @cached_property
    def _cross(self) -> np.ndarray:
        c = self.corners
        return np.cross(c[:, 1] - c[:, 0], c[:, 2] - c[:, 0])

    @cached_property
    def areas(self) -> np.ndarray:
        return 0.5 * np.linalg.norm(self._cross, axis=1)

    @cached_property
    def normals(self) -> np.ndarray:
        return self._cross / (2.0 * self.areas[:, None])

    @cached_property
    def centroids(self) -> np.ndarray:
        return self.corners.mean(axis=1)

    @cached_property
    def diameters(self) -> np.ndarray:
        c = self.corners
        e = np.stack([c[:, 1] - c[:, 0], c[:, 2] - c[:, 1], c[:, 0] - c[:, 2]], axis=1)
        return np.linalg.norm(e, axis=2).max(axis=1)

    @cached_property
    def boxes(self) -> np.ndarray:
        """(M, 2, 3) axis-aligned bounding boxes of the triangles."""
        c = self.corners
        return np.stack([c.min(axis=1), c.max(axis=1)], axis=1)

    @cached_property
    def vertex_triangles(self) -> list[np.ndarray]:
        """Incident triangle indices for every vertex."""
        order = np.argsort(self.triangles.ravel(), kind="stable")
        tri_of = order // 3
        counts = np.bincount(self.triangles.ravel(), minlength=self.n_vertices)
        return np.split(tri_of, np.cumsum(counts)[:-1])

    @cached_property
    def node_incidence(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """CSR-style incidence ``(indptr, triangle, local)`` sorted by node."""
        flat = self.triangles.ravel()
        order = np.argsort(flat, kind="stable")
        counts = np.bincount(flat, minlength=self.n_vertices)
        indptr = np.concatenate([[0], np.cumsum(counts)])
        return indptr, order // 3, order % 3

    @cached_property
    def packed_geometry(self) -> np.ndarray:
        """Per-triangle row: corners (9), normal (3), area, centroid (3), diameter."""
        return np.ascontiguousarray(
            np.column_stack(
                [self.corners.reshape(-1, 9), self.normals, self.areas, self.centroids, self.diameters]
            )
        )

    @cached_property
    def vertex_boxes(self) -> np.ndarray:
        """Union of incident-triangle boxes for every vertex (support of psi_j)."""
        out = np.empty((self.n_vertices, 2, 3))
        for v, tris in enumerate(self.vertex_triangles):
            b = self.boxes[tris]
            out[v, 0] = b[:, 0].min(axis=0)
            out[v, 1] = b[:, 1].max(axis=0)
        return out

    @cached_property
    def surface_gradients(self) -> np.ndarray:
        """(M, 3, 3): gradient of each local hat function on each triangle.

        ``surface_gradients[m, a]`` is the (constant) surface gradient of the
        hat function of local vertex ``a`` of triangle ``m``.
        """
        c = self.corners
        n = self.normals
        a2 = 2.0 * self.areas[:, None]
        # grad lambda_a = n x (P_{a+2} - P_{a+1}) / (2 area)
        g = np.empty_like(c)
        for a in range(3):
            g[:, a] = np.cross(n, c[:, (a + 2) % 3] - c[:, (a + 1) % 3]) / a2
        return g

    @property
    def neumann(self) -> np.ndarray:
        return ~self.dirichlet

    @cached_property
    def signed_volume(self) -> float:
        c = self.corners
        return float(np.einsum("ij,ij->i", c[:, 0], np.cross(c[:, 1], c[:, 2])).sum() / 6.0)

    def with_labels(self, dirichlet: np.ndarray) -> "SurfaceMesh":
        return _build(self.vertices, self.triangles, np.asarray(dirichlet, dtype=bool), check=False)


# --------------------------------------------------------------------- I/O


def read_off(path: Union[str, Path]) -> tuple[np.ndarray, np.ndarray]:
    """Read an ASCII OFF file holding triangles only."""
    text = Path(path).read_text()
    tokens: list[str] = []
    for line in text.splitlines():
        line = line.split("#", 1)[0].strip()
        if line:
            tokens.extend(line.split())
    try:
        pos = 0
        if tokens and tokens[0].upper() == "OFF":
            pos = 1
        nv, nf = int(tokens[pos]), int(tokens[pos + 1])
        pos += 3
        verts = np.array(tokens[pos : pos + 3 * nv], dtype=float).reshape(nv, 3)
        pos += 3 * nv
        tris = np.empty((nf, 3), dtype=np.int64)
        for f in range(nf):
            k = int(tokens[pos])
            if k != 3:
                raise MeshError(f"face {f} has {k} vertices; only triangles are supported")
            tris[f] = [int(t) for t in tokens[pos + 1 : pos + 4]]
            pos += 4
        if pos != len(tokens):
            raise MeshError(f"{len(tokens) - pos} trailing tokens after the last face")
    except MeshError:
        raise
    except (IndexError, ValueError) as exc:
        raise MeshError(f"cannot parse OFF file {path}: {exc}") from exc
    return verts, tris


def write_off(path: Union[str, Path], vertices: np.ndarray, triangles: np.ndarray) -> None:
    lines = ["OFF", f"{len(vertices)} {len(triangles)} 0"]
    lines += [f"{x:.17g} {y:.17g} {z:.17g}" for x, y, z in vertices]
    lines += [f"3 {a} {b} {c}" for a, b, c in triangles]
    Path(path).write_text("\n".join(lines) + "\n")


def read_labels(path: Union[str, Path], n_triangles: int) -> np.ndarray:
    """Sidecar label file: one ``D`` or ``N`` token per triangle, in order."""
    tokens = []
    for line in Path(path).read_text().splitlines():
        line = line.split("#", 1)[0]
        tokens.extend(line.split())
    if len(tokens) != n_triangles:
        raise MeshError(f"label file has {len(tokens)} labels for {n_triangles} triangles")
    bad = set(tokens) - {"D", "N"}
    if bad:
        raise MeshError(f"unknown labels {sorted(bad)}; expected D or N")
    return np.array([t == "D" for t in tokens])


def write_labels(path: Union[str, Path], dirichlet: np.ndarray) -> None:
    Path(path).write_text("\n".join("D" if d else "N" for d in dirichlet) + "\n")


# --------------------------------------------------------------- predicates

_CMP = {
    ast.Lt: operator.lt,
    ast.LtE: operator.le,
    ast.Gt: operator.gt,
    ast.GtE: operator.ge,
}
_BIN = {ast.Add: operator.add, ast.Sub: operator.sub, ast.Mult: operator.mul, ast.Div: operator.truediv}
_NAMES = {"x1": 0, "x2": 1, "x3": 2}
PREDICATE_TOL = 1e-9


def parse_predicate(source: str) -> Callable[[np.ndarray], np.ndarray]:
    """Compile a labelling predicate such as ``x1 == 1 or x2 == -1``.

    The grammar admits the coordinates ``x1 x2 x3``, numeric literals,
    ``+ - * /``, comparisons (``==`` and ``!=`` use an absolute tolerance of
    1e-9), ``and``, ``or``, ``not``, ``true``/``false`` and parentheses.  The
    returned function maps an (n, 3) array of points to a boolean mask.
    """
    try:
        tree = ast.parse(source.strip(), mode="eval")
    except SyntaxError as exc:
        raise MeshError(f"bad predicate {source!r}: {exc.msg}") from exc

    def ev(node, pts):
        if isinstance(node, ast.Expression):
            return ev(node.body, pts)
        if isinstance(node, ast.BoolOp):
            vals = [np.asarray(ev(v, pts), dtype=bool) for v in node.values]
            red = np.logical_and if isinstance(node.op, ast.And) else np.logical_or
            out = vals[0]
            for v in vals[1:]:
                out = red(out, v)
            return out
        if isinstance(node, ast.UnaryOp):
            if isinstance(node.op, ast.Not):
                return ~np.asarray(ev(node.operand, pts), dtype=bool)
            if isinstance(node.op, ast.USub):
                return -ev(node.operand, pts)
            if isinstance(node.op, ast.UAdd):
                return ev(node.operand, pts)
        if isinstance(node, ast.BinOp) and type(node.op) in _BIN:
            return _BIN[type(node.op)](ev(node.left, pts), ev(node.right, pts))
        if isinstance(node, ast.Compare):
            left = ev(node.left, pts)
            out = np.ones(len(pts), dtype=bool)
            for op, comp in zip(node.ops, node.comparators):
                right = ev(comp, pts)
                if isinstance(op, ast.Eq):
                    res = np.abs(left - right) <= PREDICATE_TOL
                elif isinstance(op, ast.NotEq):
                    res = np.abs(left - right) > PREDICATE_TOL
                elif type(op) in _CMP:
                    res = _CMP[type(op)](left, right)
                else:
                    raise MeshError(f"unsupported comparison in {source!r}")
                out = out & res
                left = right
            return out
        if isinstance(node, ast.Name):
            if node.id in _NAMES:
                return pts[:, _NAMES[node.id]]
            if node.id in ("true", "True"):
                return np.ones(len(pts), dtype=bool)
            if node.id in ("false", "False"):
                return np.zeros(len(pts), dtype=bool)
            raise MeshError(f"unknown name {node.id!r} in predicate")
        if isinstance(node, ast.Constant) and isinstance(node.value, (int, float)) and not isinstance(node.value, bool):
            return float(node.value)
        raise MeshError(f"unsupported syntax in predicate {source!r}")

    ev(tree, np.zeros((1, 3)))  # validate once

    def predicate(points: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        return np.broadcast_to(np.asarray(ev(tree, pts), dtype=bool), (len(pts),)).copy()

    return predicate


# --------------------------------------------------------------- validation


def _check_topology(vertices: np.ndarray, triangles: np.ndarray) -> np.ndarray:
    """Validate and return triangles, reoriented outwards if needed."""
    if triangles.ndim != 2 or triangles.shape[1] != 3:
        raise MeshError("triangles must be an (M, 3) index array")
    if len(triangles) == 0:
        raise MeshError("mesh has no triangles")
    if triangles.min() < 0 or triangles.max() >= len(vertices):
        raise MeshError("triangle references a vertex index out of range")
    t = triangles
    rep = (t[:, 0] == t[:, 1]) | (t[:, 1] == t[:, 2]) | (t[:, 0] == t[:, 2])
    if rep.any():
        raise MeshError(f"degenerate triangle {int(np.flatnonzero(rep)[0])}: repeated vertex index")
    c = vertices[t]
    area2 = np.linalg.norm(np.cross(c[:, 1] - c[:, 0], c[:, 2] - c[:, 0]), axis=1)
    scale = np.max(np.linalg.norm(c[:, 1] - c[:, 0], axis=1)) ** 2
    zero = area2 <= 1e-14 * scale
    if zero.any():
        raise MeshError(f"degenerate triangle {int(np.flatnonzero(zero)[0])}: zero area")
    key = np.sort(t, axis=1)
    _, counts = np.unique(key, axis=0, return_counts=True)
    if (counts > 1).any():
        raise MeshError("non-admissible triangulation: duplicated triangle")
    # every undirected edge shared by exactly two triangles, with opposite directions
    directed = np.concatenate([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]])
    undirected = np.sort(directed, axis=1)
    _, ucount = np.unique(undirected, axis=0, return_counts=True)
    if (ucount != 2).any():
        raise MeshError(
            "non-admissible triangulation: some edge is not shared by exactly two triangles "
            "(hanging node, open boundary or non-manifold edge)"
        )
    _, dcount = np.unique(directed, axis=0, return_counts=True)
    if (dcount != 1).any():
        raise MeshError("triangles are not consistently oriented")
    vol = np.einsum("ij,ij->i", c[:, 0], np.cross(c[:, 1], c[:, 2])).sum()
    if vol < 0:
        logger.info("reorienting triangles to outward normals")
        t = t[:, [0, 2, 1]]
    return t


def _build(vertices, triangles, dirichlet, check=True) -> SurfaceMesh:
    vertices = np.ascontiguousarray(vertices, dtype=float)
    triangles = np.ascontiguousarray(triangles, dtype=np.int64)
    if check:
        triangles = _check_topology(vertices, triangles)
    dirichlet = np.asarray(dirichlet, dtype=bool)
    if dirichlet.shape != (len(triangles),):
        raise MeshError("labelling must assign every triangle to exactly one boundary part")
    if not dirichlet.any():
        raise MeshError("empty Dirichlet part: the mixed problem needs a Dirichlet boundary")
    return SurfaceMesh(vertices.copy(), triangles.copy(), dirichlet.copy())


Labeling = Union[str, Path, np.ndarray, Callable[[np.ndarray], np.ndarray], None]


def make_mesh(vertices, triangles, labeling: Labeling = None) -> SurfaceMesh:
    """Validate raw arrays and attach a labelling (default: all Dirichlet)."""
    vertices = np.asarray(vertices, dtype=float)
    triangles = _check_topology(np.asarray(vertices, dtype=float), np.asarray(triangles, dtype=np.int64))
    mask = _resolve_labels(labeling, vertices, triangles)
    return _build(vertices, triangles, mask, check=False)


def _resolve_labels(labeling: Labeling, vertices, triangles) -> np.ndarray:
    m = len(triangles)
    if labeling is None:
        return np.ones(m, dtype=bool)
    if isinstance(labeling, np.ndarray):
        return labeling.astype(bool)
    if isinstance(labeling, Path) or (isinstance(labeling, str) and Path(labeling).is_file()):
        return read_labels(labeling, m)
    if isinstance(labeling, str):
        labeling = parse_predicate(labeling)
    centroids = vertices[triangles].mean(axis=1)
    return np.asarray(labeling(centroids), dtype=bool)


def load_mesh(path: Union[str, Path], labeling: Labeling = None) -> SurfaceMesh:
    """Load an OFF mesh and label its triangles.

    ``labeling`` is a sidecar label file, a predicate string evaluated at
    triangle centroids (true means Dirichlet), a callable with the same role,
    or a boolean mask.  ``None`` labels every triangle Dirichlet.
    """
    path = Path(path)
    if not path.is_file():
        raise MeshError(f"mesh file {path} does not exist")
    vertices, triangles = read_off(path)
    return make_mesh(vertices, triangles, labeling)


# ---------------------------------------------------------------------- DOFs


class DofError(ValueError):
    pass


@dataclass(frozen=True)
class DofLayout:
    """Unknowns of the mixed problem.

    ``t_triangles`` are the Dirichlet triangles carrying traction unknowns,
    ``u_nodes`` the Neumann-interior nodes carrying displacement unknowns.
    Vectors are ordered component-major: ``[x-block; y-block; z-block]``.
    """

    n_triangles: int
    n_nodes: int
    t_triangles: np.ndarray
    u_nodes: np.ndarray

    @property
    def n_t(self) -> int:
        return 3 * len(self.t_triangles)

    @property
    def n_u(self) -> int:
        return 3 * len(self.u_nodes)

    def t_index(self) -> np.ndarray:
        """Positions of the t-unknowns inside a full 3M triangle vector."""
        return np.concatenate([c * self.n_triangles + self.t_triangles for c in range(3)])

    def u_index(self) -> np.ndarray:
        """Positions of the u-unknowns inside a full 3N nodal vector."""
        if len(self.u_nodes) == 0:
            raise DofError("no Neumann-interior nodes: the D_NN block has no unknowns")
        return np.concatenate([c * self.n_nodes + self.u_nodes for c in range(3)])


def classify_dofs(mesh: SurfaceMesh) -> DofLayout:
    t_tris = np.flatnonzero(mesh.dirichlet)
    touches_d = np.zeros(mesh.n_vertices, dtype=bool)
    touches_d[mesh.triangles[mesh.dirichlet].ravel()] = True
    used = np.zeros(mesh.n_vertices, dtype=bool)
    used[mesh.triangles.ravel()] = True
    u_nodes = np.flatnonzero(used & ~touches_d)
    return DofLayout(mesh.n_triangles, mesh.n_vertices, t_tris, u_nodes)
