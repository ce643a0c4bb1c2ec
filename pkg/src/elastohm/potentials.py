"""Interior evaluation of the displacement by the representation formula.

``u(x) = (V~ t~)(x) - (W~ u~)(x)`` with the Kelvin single-layer potential
``V~`` acting on piecewise constant tractions and the double-layer potential
``W~`` acting on nodal displacements.  Both are collocation matrices (rows
are evaluation points) assembled componentwise as H-matrices.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .aca import EntryOracle
from .amvm import AmvmConfig, amvm_multiply
from .clustering import build_block_partition, build_cluster_tree
from .hmatrix import HMatrix, assemble
from .kernels import MaterialConfig, kelvin_tensor, kelvin_traction
from .mesh import SurfaceMesh
from .operators import BlockMatrix, Expr, Leaf
from .quadrature import gauss_rule

__all__ = [
    "PointTooCloseError",
    "PotentialConfig",
    "point_surface_distance",
    "single_layer_potential",
    "double_layer_potential",
    "full_boundary_data",
    "evaluate_interior",
]


class PointTooCloseError(ValueError):
    pass


@dataclass(frozen=True)
class PotentialConfig:
    eps: float = 1e-8
    b_min: int = 15
    beta: float = 0.8
    min_ratio: float = 1.0  # smallest allowed distance / element diameter
    near_ratio: float = 4.0  # below this use near_order
    order: int = 8
    near_order: int = 15


def _segment_distance(p, a, b):
    ab = b - a
    t = np.clip(np.einsum("...i,...i->...", p - a, ab) / np.einsum("...i,...i->...", ab, ab), 0.0, 1.0)
    return np.linalg.norm(p - (a + t[..., None] * ab), axis=-1)


def point_surface_distance(mesh: SurfaceMesh, points: np.ndarray) -> np.ndarray:
    """Euclidean distance from each point to the closest triangle."""
    P = np.atleast_2d(np.asarray(points, dtype=float))[:, None, :]  # (p, 1, 3)
    c = mesh.corners[None]  # (1, M, 3, 3)
    a, b, d = c[..., 0, :], c[..., 1, :], c[..., 2, :]
    n = mesh.normals[None]
    h = np.einsum("pmi,pmi->pm", P - a, np.broadcast_to(n, (P.shape[0],) + n.shape[1:]))
    foot = P - h[..., None] * n
    # inside test by signed sub-areas against the normal
    inside = np.ones(h.shape, dtype=bool)
    for u, v in ((a, b), (b, d), (d, a)):
        inside &= np.einsum("pmi,pmi->pm", np.cross(v - u, foot - u), np.broadcast_to(n, foot.shape)) >= 0
    edges = np.minimum(np.minimum(_segment_distance(P, a, b), _segment_distance(P, b, d)), _segment_distance(P, d, a))
    dist = np.where(inside, np.abs(h), edges)
    return dist.min(axis=1)


def _rules(cfg: PotentialConfig):
    out = []
    for order in (cfg.near_order, cfg.order):
        r = gauss_rule(order)
        a, b = r.points[:, 0], r.points[:, 1]
        out.append((np.stack([1 - a, a - b, b], axis=1), r.weights))
    return out


def _quadrature(mesh, pts, tris, cfg):
    """Quadrature points (P, T, Q, 3), weights incl. Jacobian (P, T, Q), hat weights (P, T, Q, 3)."""
    near, far = _rules(cfg)
    dist = np.linalg.norm(pts[:, None, :] - mesh.centroids[tris][None], axis=-1)
    is_near = dist < cfg.near_ratio * mesh.diameters[tris][None]
    out = []
    for lam, w in (near, far):
        Y = np.einsum("qa,tac->tqc", lam, mesh.corners[tris])
        W = w[None, :] * 2.0 * mesh.areas[tris][:, None]
        out.append((Y, W, lam))
    return is_near, out


def _collocation(mesh, kernel, pts, tris, cfg):
    """Integrals ``K[p, t, q, i, j] -> (P, T, 3 hats, 3, 3)`` of ``kernel(x, y, n_y)`` times hat functions."""
    is_near, rules = _quadrature(mesh, pts, tris, cfg)
    n = mesh.normals[tris]
    out = np.zeros((len(pts), len(tris), 3, 3, 3))
    for sel, (Y, W, lam) in ((is_near, rules[0]), (~is_near, rules[1])):
        pi, ti = np.nonzero(sel)
        if len(pi) == 0:
            continue
        vals = kernel(pts[pi][:, None, :], Y[ti], n[ti][:, None, :])  # (k, Q, 3, 3)
        out[pi, ti] = np.einsum("kq,qa,kqij->kaij", W[ti], lam, vals)
    return out


def _single_kernel(material):
    return lambda x, y, n: kelvin_tensor(x - y, material)


def _double_kernel(material):
    # T[i, j]: traction at y of the field S(. - x) e_i; (W u)_i = int T[i, j] u_j
    return lambda x, y, n: kelvin_traction(x, y, n, material)


def _component_oracle(mesh, kernel, pts, i, j, columns, cfg):
    def block(rows, cols):
        if columns == "triangles":
            vals = _collocation(mesh, kernel, pts[rows], cols, cfg)
            return vals[:, :, :, i, j].sum(axis=2)
        indptr, tri, loc = mesh.node_incidence
        out = np.zeros((len(rows), len(cols)))
        for c, node in enumerate(cols):
            ts, ls = tri[indptr[node] : indptr[node + 1]], loc[indptr[node] : indptr[node + 1]]
            vals = _collocation(mesh, kernel, pts[rows], ts, cfg)
            out[:, c] = vals[:, np.arange(len(ts)), ls, i, j].sum(axis=1)
        return out

    n_cols = mesh.n_triangles if columns == "triangles" else mesh.n_vertices
    return EntryOracle(block, (len(pts), n_cols))


def _check_points(mesh, pts, cfg):
    d = point_surface_distance(mesh, pts)
    limit = cfg.min_ratio * float(mesh.diameters.max())
    bad = np.flatnonzero(d < limit)
    if len(bad):
        raise PointTooCloseError(
            f"{len(bad)} point(s) closer than {limit:.3g} to the boundary (minimum distance {d.min():.3g})"
        )
    inside = _winding(mesh, pts)
    if not np.all(inside):
        raise PointTooCloseError(f"{int(np.sum(~inside))} point(s) lie outside the domain")


def _winding(mesh, pts):
    """Solid-angle test: total solid angle 4 pi for interior points."""
    c = mesh.corners[None] - pts[:, None, None, :]  # (p, M, 3, 3)
    a, b, d = c[..., 0, :], c[..., 1, :], c[..., 2, :]
    la, lb, ld = (np.linalg.norm(v, axis=-1) for v in (a, b, d))
    num = np.einsum("pmi,pmi->pm", a, np.cross(b, d))
    den = la * lb * ld + np.einsum("pmi,pmi->pm", a, b) * ld + np.einsum("pmi,pmi->pm", a, d) * lb
    den += np.einsum("pmi,pmi->pm", b, d) * la
    omega = 2.0 * np.arctan2(num, den).sum(axis=1)
    return np.abs(omega) > 2.0 * np.pi


def _potential(mesh, material, pts, cfg, columns, kernel, name) -> Expr:
    pts = np.atleast_2d(np.asarray(pts, dtype=float))
    _check_points(mesh, pts, cfg)
    supports = mesh.boxes if columns == "triangles" else mesh.vertex_boxes
    prow = build_cluster_tree(pts, cfg.b_min)
    pcol = build_cluster_tree(supports, cfg.b_min)
    part = build_block_partition(prow, pcol, cfg.beta)
    grid = []
    for i in range(3):
        row = []
        for j in range(3):
            oracle = _component_oracle(mesh, kernel, pts, i, j, columns, cfg)
            h: HMatrix = assemble(oracle, part, eps=cfg.eps, name=f"{name}{i + 1}{j + 1}")
            row.append(Leaf(h))
        grid.append(row)
    return BlockMatrix(grid, name=name)


def single_layer_potential(mesh, material: MaterialConfig, points, cfg: PotentialConfig = PotentialConfig()) -> Expr:
    """``V~`` (3P x 3M): Kelvin kernel against piecewise constant densities."""
    return _potential(mesh, material, points, cfg, "triangles", _single_kernel(material), "Vt")


def double_layer_potential(mesh, material: MaterialConfig, points, cfg: PotentialConfig = PotentialConfig()) -> Expr:
    """``W~`` (3P x 3N): traction kernel against nodal hat functions."""
    return _potential(mesh, material, points, cfg, "nodes", _double_kernel(material), "Wt")


def full_boundary_data(system, x: np.ndarray, g_D: np.ndarray, g_N: np.ndarray):
    """Complete tractions (3M) and displacements (3N) from a solution ``x``.

    Tractions are the unknowns on Dirichlet triangles and ``g_N`` elsewhere;
    displacements are the unknowns on free Neumann nodes and ``g_D`` elsewhere.
    """
    t = np.array(g_N, dtype=float)
    u = np.array(g_D, dtype=float)
    t_part, u_part = system.split(np.asarray(x, dtype=float))
    t[system.layout.t_index()] = t_part
    if len(u_part):
        u[system.layout.u_index()] = u_part
    return t, u


def evaluate_interior(
    mesh: SurfaceMesh,
    material: MaterialConfig,
    t: np.ndarray,
    u: np.ndarray,
    points,
    mode: str = "fixed",
    cfg: PotentialConfig = PotentialConfig(),
    amvm: Optional[AmvmConfig] = None,
) -> np.ndarray:
    """Displacements (P, 3) at interior points from full boundary data."""
    points = np.atleast_2d(np.asarray(points, dtype=float))
    t = np.asarray(t, dtype=float)
    u = np.asarray(u, dtype=float)
    if t.shape != (3 * mesh.n_triangles,) or u.shape != (3 * mesh.n_vertices,):
        raise ValueError("t must have length 3M and u length 3N")
    Vt = single_layer_potential(mesh, material, points, cfg)
    Wt = double_layer_potential(mesh, material, points, cfg)
    op = BlockMatrix([[Vt, Wt]], signs=[[1.0, -1.0]], name="representation")
    x = np.concatenate([t, u])
    if mode == "fixed":
        v = op.matvec(x)
    elif mode == "amvm":
        v, _ = amvm_multiply(op, x, amvm or AmvmConfig(eps_amvm=cfg.eps, relative=True))
    else:
        raise ValueError(f"unknown mode {mode!r}")
    return v.reshape(3, -1).T
