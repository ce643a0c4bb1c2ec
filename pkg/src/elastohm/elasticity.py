"""Discrete elastic boundary operators built from scalar H-matrix leaves.

The single-layer, double-layer and hypersingular operators of isotropic
elastostatics are assembled as expressions over four kinds of leaves:
``V_Delta`` (Laplace single layer), the six distinct ``V_kl``, ``K_Delta``
(Laplace double layer tested against hat functions) and sparse tangential
derivative matrices.  Refining a leaf therefore refines every operator that
references it.

With ``G = 1/(4 pi r)`` built into ``V_Delta`` the hypersingular operator reads

    D = mu sum_k S_k^T V3 S_k + 2 mu T^T V3 T - 4 mu^2 T^T V T + mu D',

where ``V3`` is ``V_Delta`` repeated on the three diagonal blocks.  The signs
and factors are pinned down by tests: D annihilates rigid motions and is
positive semi-definite.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.sparse as sp

from .clustering import BlockPartition, build_block_partition, build_cluster_tree
from .galerkin import KDELTA, VDELTA, KernelId, QuadratureConfig, make_oracle, vkl
from .hmatrix import HMatrix, assemble
from .kernels import MaterialConfig
from .mesh import DofLayout, SurfaceMesh, classify_dofs
from .operators import BlockMatrix, Compose, Expr, Leaf, Scale, Sum, restrict

logger = logging.getLogger(__name__)

__all__ = [
    "ClusterConfig",
    "AssemblyConfig",
    "SparseOps",
    "ElasticLeaves",
    "ElasticOperators",
    "tangential_matrix",
    "build_sparse_ops",
    "build_partitions",
    "assemble_leaves",
    "diag3",
    "compose_Vh",
    "compose_Kh",
    "compose_Dh",
    "build_operators",
]

PAIRS = ((1, 1), (1, 2), (1, 3), (2, 2), (2, 3), (3, 3))


@dataclass(frozen=True)
class ClusterConfig:
    b_min: int = 15
    beta: float = 0.8


@dataclass(frozen=True)
class AssemblyConfig:
    """How the leaves are assembled.

    Full mode uses ``eps``; coarse mode uses ``rank_v`` for the single-layer
    leaves and ``rank_k`` for ``K_Delta``.  ``aca_beta`` overrides the
    admissibility parameter inside the ACA stopping rule.
    """

    eps: Optional[float] = 1e-6
    rank_v: Optional[int] = None
    rank_k: Optional[int] = None
    lookahead: int = 2
    max_rank: Optional[int] = None
    aca_beta: Optional[float] = None

    @property
    def coarse(self) -> bool:
        return self.rank_v is not None

    def __post_init__(self):
        if self.coarse and self.rank_k is None:
            raise ValueError("coarse assembly needs both rank_v and rank_k")
        if not self.coarse and (self.eps is None or self.eps <= 0):
            raise ValueError("full assembly needs eps > 0")


# ------------------------------------------------------------- sparse ops


def tangential_matrix(mesh: SurfaceMesh, k: int, l: int) -> sp.csr_matrix:
    """``T_kl`` (M x N): ``n_l d_k psi_j - n_k d_l psi_j`` on each triangle."""
    if not (1 <= k <= 3 and 1 <= l <= 3):
        raise ValueError("component indices must lie in 1..3")
    M, N = mesh.n_triangles, mesh.n_vertices
    g = mesh.surface_gradients  # (M, 3 local, 3)
    n = mesh.normals
    vals = n[:, None, l - 1] * g[:, :, k - 1] - n[:, None, k - 1] * g[:, :, l - 1]
    rows = np.repeat(np.arange(M), 3)
    return sp.csr_matrix((vals.ravel(), (rows, mesh.triangles.ravel())), shape=(M, N))


def _kron3(a: sp.spmatrix) -> sp.csr_matrix:
    return sp.block_diag([a, a, a], format="csr")


@dataclass
class SparseOps:
    T: dict  # (k, l) -> M x N for all k, l
    Th: sp.csr_matrix  # 3M x 3N
    S: list  # three 3M x 3N block-diagonal maps
    mass: sp.csr_matrix  # M x N
    mass3: sp.csr_matrix  # 3M x 3N


def build_sparse_ops(mesh: SurfaceMesh) -> SparseOps:
    T = {}
    for k in range(1, 4):
        for l in range(1, 4):
            T[(k, l)] = tangential_matrix(mesh, k, l)
    Th = sp.bmat([[T[(i, j)] for j in range(1, 4)] for i in range(1, 4)], format="csr")
    # dS_1 = T_32, dS_2 = T_13, dS_3 = T_12 (the sign of each is irrelevant in S^T V S)
    S = [_kron3(T[(3, 2)]), _kron3(T[(1, 3)]), _kron3(T[(1, 2)])]
    M, N = mesh.n_triangles, mesh.n_vertices
    rows = np.repeat(np.arange(M), 3)
    mass = sp.csr_matrix((np.repeat(mesh.areas / 3.0, 3), (rows, mesh.triangles.ravel())), shape=(M, N))
    return SparseOps(T, Th, S, mass, _kron3(mass))


# ------------------------------------------------------------------ leaves


def build_partitions(mesh: SurfaceMesh, cfg: ClusterConfig) -> tuple[BlockPartition, BlockPartition]:
    """Triangle x triangle partition for the single layer, triangle x node for K."""
    tri_tree = build_cluster_tree(mesh.boxes, cfg.b_min)
    node_tree = build_cluster_tree(mesh.vertex_boxes, cfg.b_min)
    return build_block_partition(tri_tree, tri_tree, cfg.beta), build_block_partition(tri_tree, node_tree, cfg.beta)


@dataclass
class ElasticLeaves:
    mesh: SurfaceMesh
    p_v: BlockPartition
    p_k: BlockPartition
    vdelta: HMatrix
    vkl: dict  # (k, l) with k <= l -> HMatrix
    kdelta: HMatrix
    quad: QuadratureConfig = field(default_factory=QuadratureConfig)

    def get_vkl(self, k: int, l: int) -> HMatrix:
        return self.vkl[(min(k, l), max(k, l))]

    @property
    def all(self) -> list[HMatrix]:
        return [self.vdelta, *self.vkl.values(), self.kdelta]

    @property
    def single_layer(self) -> list[HMatrix]:
        return [self.vdelta, *self.vkl.values()]


def _assemble_one(mesh, kernel: KernelId, partition, cfg: AssemblyConfig, rank, quad) -> HMatrix:
    oracle = make_oracle(mesh, kernel, quad)
    if cfg.coarse:
        return assemble(oracle, partition, initial_rank=rank, lookahead=cfg.lookahead, max_rank=cfg.max_rank,
                        name=kernel.label)
    return assemble(oracle, partition, eps=cfg.eps, lookahead=cfg.lookahead, beta=cfg.aca_beta,
                    max_rank=cfg.max_rank, name=kernel.label)


def assemble_leaves(
    mesh: SurfaceMesh,
    cluster: ClusterConfig = ClusterConfig(),
    cfg: AssemblyConfig = AssemblyConfig(),
    quad: QuadratureConfig = QuadratureConfig(),
    partitions: Optional[tuple[BlockPartition, BlockPartition]] = None,
) -> ElasticLeaves:
    p_v, p_k = partitions or build_partitions(mesh, cluster)
    vd = _assemble_one(mesh, VDELTA, p_v, cfg, cfg.rank_v, quad)
    vk = {kl: _assemble_one(mesh, vkl(*kl), p_v, cfg, cfg.rank_v, quad) for kl in PAIRS}
    kd = _assemble_one(mesh, KDELTA, p_k, cfg, cfg.rank_k, quad)
    return ElasticLeaves(mesh, p_v, p_k, vd, vk, kd, quad)


# --------------------------------------------------------------- operators


def diag3(e: Expr, name: str = "") -> Expr:
    return BlockMatrix([[e, None, None], [None, e, None], [None, None, e]], name=name)


def compose_Vh(leaves: ElasticLeaves, material: MaterialConfig) -> Expr:
    nu, E = material.nu, material.E
    vd = Leaf(leaves.vdelta, "V_Delta")
    grid = [[Leaf(leaves.get_vkl(k, l), f"V{min(k, l)}{max(k, l)}") for l in range(1, 4)] for k in range(1, 4)]
    pre = 0.5 / E * (1.0 + nu) / (1.0 - nu)
    return Scale(pre, Sum([Scale(3.0 - 4.0 * nu, diag3(vd)), BlockMatrix(grid)]), name="V_h")


def compose_Kh(leaves: ElasticLeaves, material: MaterialConfig, ops: SparseOps, Vh: Optional[Expr] = None) -> Expr:
    Vh = Vh if Vh is not None else compose_Vh(leaves, material)
    T = Leaf(ops.Th, "T_h")
    kd3 = diag3(Leaf(leaves.kdelta, "K_Delta"))
    vd3 = diag3(Leaf(leaves.vdelta, "V_Delta"))
    two_mu = material.E / (1.0 + material.nu)
    return Sum([kd3, Scale(-1.0, Compose([vd3, T])), Scale(two_mu, Compose([Vh, T]))], name="K_h")


def compose_Dh(leaves: ElasticLeaves, material: MaterialConfig, ops: SparseOps, Vh: Optional[Expr] = None) -> Expr:
    Vh = Vh if Vh is not None else compose_Vh(leaves, material)
    mu = material.mu
    vd = Leaf(leaves.vdelta, "V_Delta")
    vd3 = diag3(vd)
    Th = Leaf(ops.Th, "T_h")
    ThT = Leaf(ops.Th.T.tocsr(), "T_h^T")
    terms = []
    for S in ops.S:
        terms.append(Scale(mu, Compose([Leaf(S.T.tocsr()), vd3, Leaf(S)])))
    terms.append(Scale(2.0 * mu, Compose([ThT, vd3, Th])))
    terms.append(Scale(-4.0 * mu * mu, Compose([ThT, Vh, Th])))
    grid = []
    for i in range(1, 4):
        row = []
        for j in range(1, 4):
            parts = [
                Compose([Leaf(ops.T[(k, j)].T.tocsr()), vd, Leaf(ops.T[(k, i)])])
                for k in range(1, 4)
                if k != i and k != j
            ]
            row.append(Sum(parts))
        grid.append(row)
    terms.append(Scale(mu, BlockMatrix(grid)))
    return Sum(terms, name="D_h")


@dataclass
class ElasticOperators:
    """Composite operators on the full boundary plus their restrictions."""

    mesh: SurfaceMesh
    material: MaterialConfig
    leaves: ElasticLeaves
    ops: SparseOps
    layout: DofLayout
    Vh: Expr
    Kh: Expr
    Dh: Expr

    def restricted(self):
        """``(V_DD, K_ND, D_NN)``; ``K_ND`` and ``D_NN`` are ``None`` without u-unknowns."""
        ti = self.layout.t_index()
        V_DD = restrict(self.Vh, ti, ti, name="V_DD")
        if self.layout.n_u == 0:
            return V_DD, None, None
        ui = self.layout.u_index()
        K_ND = restrict(self.Kh, ti, ui, name="K_ND")
        D_NN = restrict(self.Dh, ui, ui, name="D_NN")
        return V_DD, K_ND, D_NN


def build_operators(mesh: SurfaceMesh, material: MaterialConfig, leaves: ElasticLeaves) -> ElasticOperators:
    ops = build_sparse_ops(mesh)
    Vh = compose_Vh(leaves, material)
    Kh = compose_Kh(leaves, material, ops, Vh)
    Dh = compose_Dh(leaves, material, ops, Vh)
    return ElasticOperators(mesh, material, leaves, ops, classify_dofs(mesh), Vh, Kh, Dh)
