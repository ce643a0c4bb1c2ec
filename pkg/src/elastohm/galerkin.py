"""Galerkin entries of the scalar kernels building the elastic operators.

All kernels carry the factor 1/(4 pi):

* ``VDelta``:  1 / |x - y|
* ``Vkl``:     (x_k - y_k)(x_l - y_l) / |x - y|^3
* ``KDelta``:  (x - y) . n(y) / |x - y|^3, tested with hat functions in y

Rows are triangles (piecewise constant test functions).  Columns are
triangles for the single-layer kernels and nodes for ``KDelta``.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import Optional, Union

import numpy as np
from numba import njit

from .aca import EntryOracle
from .mesh import SurfaceMesh
from .quadrature import _MAX_ORDER, gauss_rule, sauter_schwab

__all__ = [
    "KernelId",
    "VDELTA",
    "KDELTA",
    "vkl",
    "QuadratureConfig",
    "pair_integrals",
    "galerkin_entry",
    "galerkin_block",
    "make_oracle",
    "kernel_values",
]

FOUR_PI = 4.0 * np.pi


@dataclass(frozen=True)
class KernelId:
    name: str
    k: int = 0
    l: int = 0

    def __post_init__(self):
        if self.name not in ("VDelta", "Vkl", "KDelta"):
            raise ValueError(f"unknown kernel {self.name!r}")
        if self.name == "Vkl":
            if not (1 <= self.k <= 3 and 1 <= self.l <= 3):
                raise ValueError("Vkl indices must lie in 1..3")
            if self.k > self.l:  # alias V_lk to V_kl
                k, l = self.l, self.k
                object.__setattr__(self, "k", k)
                object.__setattr__(self, "l", l)

    @property
    def label(self) -> str:
        return f"V{self.k}{self.l}" if self.name == "Vkl" else self.name

    @property
    def column_space(self) -> str:
        return "nodes" if self.name == "KDelta" else "triangles"

    @property
    def linear(self) -> bool:
        return self.name == "KDelta"


VDELTA = KernelId("VDelta")
KDELTA = KernelId("KDelta")


def vkl(k: int, l: int) -> KernelId:
    return KernelId("Vkl", k, l)


@dataclass(frozen=True)
class QuadratureConfig:
    """Orders of the tensor Gauss rules and the singular rules.

    Disjoint pairs are graded by the centroid distance over the larger
    diameter: ``close_order`` below ``close_ratio``, ``near_order`` below
    ``near_ratio``, ``order`` below ``far_ratio`` and ``far_order`` beyond.
    The defaults keep every entry within about 5e-7 of its converged value,
    relative to the magnitude of the single-layer entry of the pair.
    ``singular_points`` is the number of Gauss-Legendre points per angular
    direction of the 4D singular rules and ``singular_radial`` the number in
    the radial one.
    """

    order: int = 6
    near_order: int = 8
    far_order: int = 4
    close_order: int = 12
    close_ratio: float = 1.5
    near_ratio: float = 3.0
    far_ratio: float = 6.0
    singular_points: int = 10
    singular_radial: Optional[int] = 3

    def __post_init__(self):
        if not 0 < self.close_ratio <= self.near_ratio <= self.far_ratio:
            raise ValueError("distance ratios must satisfy 0 < close <= near <= far")
        for name in ("order", "close_order", "near_order", "far_order"):
            v = getattr(self, name)
            if not 1 <= v <= _MAX_ORDER:
                raise ValueError(f"{name} must lie in 1..{_MAX_ORDER}, got {v}")
        if self.singular_points < 1 or self.singular_radial < 1:
            raise ValueError("singular rule sizes must be >= 1")


def kernel_values(kernel: KernelId, d: np.ndarray, n_y: Optional[np.ndarray] = None) -> np.ndarray:
    """Kernel evaluated at ``d = x - y``; ``n_y`` broadcasts against ``d``."""
    r2 = np.einsum("...i,...i->...", d, d)
    r = np.sqrt(r2)
    if kernel.name == "VDelta":
        return 1.0 / (FOUR_PI * r)
    if kernel.name == "Vkl":
        return d[..., kernel.k - 1] * d[..., kernel.l - 1] / (FOUR_PI * r2 * r)
    return np.einsum("...i,...i->...", d, n_y) / (FOUR_PI * r2 * r)


# ---------------------------------------------------------------- integrals

_CODES = {"VDelta": 0, "Vkl": 1, "KDelta": 2}


@njit(cache=True)
def _kernel(code, k, l, d0, d1, d2, n0, n1, n2):
    r2 = d0 * d0 + d1 * d1 + d2 * d2
    r = np.sqrt(r2)
    if code == 0:
        return 1.0 / r
    if code == 1:
        d = (d0, d1, d2)
        return d[k] * d[l] / (r2 * r)
    return (d0 * n0 + d1 * n1 + d2 * n2) / (r2 * r)


@njit(cache=True)
def _map_point(c, a, b, out):
    for m in range(3):
        out[m] = c[0, m] + a * (c[1, m] - c[0, m]) + b * (c[2, m] - c[1, m])


@njit(cache=True)
def _regular_pair(cx, cy, ny, pts, w, code, k, l, out, x):
    """Tensor rule ``pts x pts``; adds raw sums (hat weights of cy for code 2)."""
    Q = w.shape[0]
    for q in range(Q):
        _map_point(cx, pts[q, 0], pts[q, 1], x[q])
    y = np.empty(3)
    for qy in range(Q):
        a, b = pts[qy, 0], pts[qy, 1]
        _map_point(cy, a, b, y)
        acc = 0.0
        for qx in range(Q):
            acc += w[qx] * _kernel(code, k, l, x[qx, 0] - y[0], x[qx, 1] - y[1], x[qx, 2] - y[2], ny[0], ny[1], ny[2])
        acc *= w[qy]
        if code == 2:
            out[0] += acc * (1.0 - a)
            out[1] += acc * (a - b)
            out[2] += acc * b
        else:
            out[0] += acc


@njit(cache=True)
def _singular_pair(ca, cb, ny, xr, yr, w, code, k, l, out):
    """Paired rule ``(xr[q], yr[q])`` on reordered corners; adds raw sums."""
    g0 = ca[0] - cb[0]
    e0 = ca[1] - ca[0]
    e1 = ca[2] - ca[1]
    f0 = cb[1] - cb[0]
    f1 = cb[2] - cb[1]
    for q in range(w.shape[0]):
        a, b = xr[q, 0], xr[q, 1]
        c, d = yr[q, 0], yr[q, 1]
        d0 = g0[0] + a * e0[0] + b * e1[0] - c * f0[0] - d * f1[0]
        d1 = g0[1] + a * e0[1] + b * e1[1] - c * f0[1] - d * f1[1]
        d2 = g0[2] + a * e0[2] + b * e1[2] - c * f0[2] - d * f1[2]
        v = w[q] * _kernel(code, k, l, d0, d1, d2, ny[0], ny[1], ny[2])
        if code == 2:
            out[0] += v * (1.0 - c)
            out[1] += v * (c - d)
            out[2] += v * d
        else:
            out[0] += v


@njit(cache=True)
def _reorder(ti, tj, shared, pa, pb):
    """Local vertex orders placing the shared vertices first, consistently."""
    if shared == 3:
        for m in range(3):
            pa[m] = m
            for n in range(3):
                if tj[n] == ti[m]:
                    pb[m] = n
        return
    if shared == 2:
        cnt = 0
        for m in range(3):
            for n in range(3):
                if ti[m] == tj[n]:
                    pa[cnt] = m
                    pb[cnt] = n
                    cnt += 1
        pa[2] = 3 - pa[0] - pa[1]
        pb[2] = 3 - pb[0] - pb[1]
        return
    for m in range(3):
        for n in range(3):
            if ti[m] == tj[n]:
                for s in range(3):
                    pa[s] = (m + s) % 3
                    pb[s] = (n + s) % 3


@njit(cache=True)
def _pair_value(i, j, tris, geom, code, k, l, reg, reg_off, sing, sing_off, ratios, out, scratch):
    """Integral over the pair (i, j) written to ``out[:3]`` (entry 0 unless code 2)."""
    shared = 0
    for m in range(3):
        for n in range(3):
            if tris[i, m] == tris[j, n]:
                shared += 1
    for m in range(3):
        out[m] = 0.0
    gi, gj = geom[i], geom[j]
    ny = gj[9:12]
    if shared == 0:
        d0 = gi[13] - gj[13]
        d1 = gi[14] - gj[14]
        d2 = gi[15] - gj[15]
        q = np.sqrt(d0 * d0 + d1 * d1 + d2 * d2) / max(gi[16], gj[16])
        r = 0
        while r < ratios.shape[0] and q >= ratios[r]:
            r += 1
        rule = reg[reg_off[r] : reg_off[r + 1]]
        _regular_pair(gi[:9].reshape(3, 3), gj[:9].reshape(3, 3), ny, rule[:, :2], rule[:, 2], code, k, l, out, scratch)
    else:
        pa = np.empty(3, dtype=np.int64)
        pb = np.empty(3, dtype=np.int64)
        _reorder(tris[i], tris[j], shared, pa, pb)
        ca = np.empty((3, 3))
        cb = np.empty((3, 3))
        for m in range(3):
            for c in range(3):
                ca[m, c] = gi[3 * pa[m] + c]
                cb[m, c] = gj[3 * pb[m] + c]
        rule = sing[sing_off[shared - 1] : sing_off[shared]]
        tmp = np.zeros(3)
        _singular_pair(ca, cb, ny, rule[:, 0:2], rule[:, 2:4], rule[:, 4], code, k, l, tmp)
        if code == 2:
            for m in range(3):
                out[pb[m]] = tmp[m]
        else:
            out[0] = tmp[0]
    f = gi[12] * gj[12] / np.pi
    for m in range(3):
        out[m] *= f


@njit(cache=True)
def _pairs(I, J, tris, geom, code, k, l, reg, reg_off, sing, sing_off, ratios):
    out = np.empty((I.shape[0], 3))
    scratch = np.empty((reg.shape[0], 3))
    for p in range(I.shape[0]):
        i, j = I[p], J[p]
        if code != 2 and i > j:
            i, j = j, i
        _pair_value(i, j, tris, geom, code, k, l, reg, reg_off, sing, sing_off, ratios, out[p], scratch)
    return out


@njit(cache=True)
def _triangle_block(rows, cols, tris, geom, code, k, l, reg, reg_off, sing, sing_off, ratios):
    out = np.empty((rows.shape[0], cols.shape[0]))
    tmp = np.empty(3)
    scratch = np.empty((reg.shape[0], 3))
    for a in range(rows.shape[0]):
        for b in range(cols.shape[0]):
            i, j = rows[a], cols[b]
            if code != 2 and i > j:
                i, j = j, i
            _pair_value(i, j, tris, geom, code, k, l, reg, reg_off, sing, sing_off, ratios, tmp, scratch)
            out[a, b] = tmp[0]
    return out


@njit(cache=True)
def _node_block(rows, cols, indptr, inc_tri, inc_loc, tris, geom, code, k, l, reg, reg_off, sing, sing_off, ratios):
    # unique triangles in the supports of the column nodes
    slot = np.full(geom.shape[0], -1, dtype=np.int64)
    utri = np.empty(indptr[-1], dtype=np.int64)
    nu = 0
    for b in range(cols.shape[0]):
        for s in range(indptr[cols[b]], indptr[cols[b] + 1]):
            t = inc_tri[s]
            if slot[t] < 0:
                slot[t] = nu
                utri[nu] = t
                nu += 1
    vals = np.empty((nu, 3))
    scratch = np.empty((reg.shape[0], 3))
    out = np.zeros((rows.shape[0], cols.shape[0]))
    for a in range(rows.shape[0]):
        for u in range(nu):
            _pair_value(rows[a], utri[u], tris, geom, code, k, l, reg, reg_off, sing, sing_off, ratios, vals[u], scratch)
        for b in range(cols.shape[0]):
            acc = 0.0
            for s in range(indptr[cols[b]], indptr[cols[b] + 1]):
                acc += vals[slot[inc_tri[s]], inc_loc[s]]
            out[a, b] = acc
    return out


@lru_cache(maxsize=None)
def _rules(quad: QuadratureConfig):
    regular = [gauss_rule(o) for o in (quad.close_order, quad.near_order, quad.order, quad.far_order)]
    reg = np.vstack([np.column_stack([r.points, r.weights]) for r in regular])
    reg_off = np.cumsum([0] + [len(r.weights) for r in regular]).astype(np.int64)
    singular = [sauter_schwab(c, quad.singular_points, quad.singular_radial) for c in ("vertex", "edge", "coincident")]
    sing = np.vstack([np.column_stack([r.x, r.y, r.w]) for r in singular])
    sing_off = np.cumsum([0] + [len(r.w) for r in singular]).astype(np.int64)
    ratios = np.array([quad.close_ratio, quad.near_ratio, quad.far_ratio], dtype=float)
    return reg, reg_off, sing, sing_off, ratios


def _args(mesh: SurfaceMesh, kernel: KernelId, quad: QuadratureConfig):
    code = _CODES[kernel.name]
    return (mesh.triangles, mesh.packed_geometry, code, max(kernel.k - 1, 0), max(kernel.l - 1, 0), *_rules(quad))


def pair_integrals(
    mesh: SurfaceMesh,
    I: np.ndarray,
    J: np.ndarray,
    kernel: KernelId,
    quad: QuadratureConfig = QuadratureConfig(),
) -> np.ndarray:
    """Integrals over triangle pairs ``(I[p], J[p])``.

    Returns shape (P,) for the single-layer kernels and (P, 3) for
    ``KDelta``, whose last axis holds the hat-function weights of the local
    vertices of ``J[p]``.  Pairs sharing vertices use the singular rules;
    disjoint pairs use a tensor Gauss rule whose order drops with the
    centroid distance relative to the larger diameter.  Symmetric kernels are
    evaluated in one canonical pair order so that assembled matrices are
    bitwise symmetric.
    """
    I = np.ascontiguousarray(I, dtype=np.int64)
    J = np.ascontiguousarray(J, dtype=np.int64)
    out = _pairs(I, J, *_args(mesh, kernel, quad))
    return out if kernel.linear else out[:, 0]


def galerkin_block(
    mesh: SurfaceMesh,
    kernel: KernelId,
    rows: np.ndarray,
    cols: np.ndarray,
    quad: QuadratureConfig = QuadratureConfig(),
) -> np.ndarray:
    """Dense submatrix of a kernel for row triangles and column triangles/nodes."""
    rows = np.ascontiguousarray(rows, dtype=np.int64)
    cols = np.ascontiguousarray(cols, dtype=np.int64)
    if kernel.column_space == "triangles":
        return _triangle_block(rows, cols, *_args(mesh, kernel, quad))
    # nodes: sum triangle contributions over the support of each hat function
    indptr, tri, loc = mesh.node_incidence
    return _node_block(rows, cols, indptr, tri, loc, *_args(mesh, kernel, quad))


def _incidence(mesh: SurfaceMesh, nodes: np.ndarray):
    """Triangles, column positions and local vertex numbers in the supports of ``nodes``."""
    indptr, tri, loc = mesh.node_incidence
    start, stop = indptr[nodes], indptr[nodes + 1]
    counts = stop - start
    cols = np.repeat(np.arange(len(nodes)), counts)
    pos = np.repeat(start - np.cumsum(counts) + counts, counts) + np.arange(counts.sum())
    return tri[pos], cols, loc[pos]


def galerkin_entry(
    kernel: KernelId, i: int, j: int, mesh: SurfaceMesh, quad: QuadratureConfig = QuadratureConfig()
) -> float:
    n_cols = mesh.n_vertices if kernel.column_space == "nodes" else mesh.n_triangles
    if not (0 <= i < mesh.n_triangles and 0 <= j < n_cols):
        raise IndexError(f"index ({i}, {j}) out of range for kernel {kernel.label}")
    return float(galerkin_block(mesh, kernel, np.array([i]), np.array([j]), quad)[0, 0])


def make_oracle(
    mesh: SurfaceMesh, kernel: Union[KernelId, str], quad: QuadratureConfig = QuadratureConfig()
) -> EntryOracle:
    if isinstance(kernel, str):
        kernel = KernelId(kernel) if kernel != "Vkl" else vkl(1, 1)
    n_cols = mesh.n_vertices if kernel.column_space == "nodes" else mesh.n_triangles
    oracle = EntryOracle(lambda r, c: galerkin_block(mesh, kernel, r, c, quad), (mesh.n_triangles, n_cols))
    oracle.kernel = kernel
    return oracle
