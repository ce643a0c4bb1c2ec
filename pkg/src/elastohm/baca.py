"""Saddle-point system of the mixed problem and its block-adaptive solution.

The unknowns are the tractions ``t`` on the Dirichlet triangles and the
displacements ``u`` on the free Neumann nodes.  The system

    [ V_DD   -K_ND ] [t]   [f_D]
    [ K_ND^T  D_NN ] [u] = [f_N]

shares its H-matrix leaves between all four blocks.  :func:`baca_solve`
alternates inner Bramble-Pasciak CG solves with Doerfler marking of the
per-block look-ahead contributions and promotes the marked blocks.
"""
from __future__ import annotations

import csv
import io
import json
import logging
import time
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np
import scipy.linalg as sla
import scipy.sparse.linalg as spla

from .amvm import AmvmConfig, AmvmReport, amvm_multiply, form_leaves
from .elasticity import (
    AssemblyConfig,
    ClusterConfig,
    ElasticLeaves,
    ElasticOperators,
    assemble_leaves,
    build_operators,
)
from .galerkin import KDELTA, VDELTA, QuadratureConfig, galerkin_block, vkl
from .hmatrix import HMatrix
from .kernels import MaterialConfig, kelvin_tensor, kelvin_traction
from .mesh import SurfaceMesh
from .operators import BlockMatrix, Expr, Leaf, Scale, Sum, Transpose, block2x2, densify, restrict
from .quadrature import gauss_rule

logger = logging.getLogger(__name__)

__all__ = [
    "BacaConfig",
    "SaddleSystem",
    "BPCGResult",
    "BacaIteration",
    "BacaReport",
    "SolverError",
    "assemble_saddle",
    "saddle_from_leaves",
    "dense_leaves",
    "rhs_operator",
    "assemble_rhs",
    "extend_data",
    "bpcg_solve",
    "estimator_Ek",
    "dorfler_mark",
    "baca_solve",
    "kelvin_boundary_data",
    "dense_solve",
]

TAGS = (("V", "K"), ("K", "D"))
SIGNS = ((1, -1), (1, 1))


class SolverError(RuntimeError):
    pass


@dataclass(frozen=True)
class BacaConfig:
    theta: float = 0.8
    alpha: float = 10.0
    eps_baca: float = 1e-4  # relative to |f|
    inner_tol: float = 1e-1
    rank_v: int = 8
    rank_k: int = 4
    lookahead_steps: int = 2
    max_outer: int = 40
    max_inner: int = 2000
    tol_floor: float = 1e-12
    promote_all_vdd: bool = True  # step (ii) promotes the whole of V_DD
    solver: str = "bpcg"  # or "gmres"

    def __post_init__(self):
        if not 0.0 < self.theta < 1.0:
            raise ValueError("theta must lie in (0, 1)")
        if self.alpha < 0:
            raise ValueError("alpha must be >= 0")
        if not self.eps_baca > 0:
            raise ValueError("eps_baca must be positive")
        if not 0.0 < self.inner_tol < 1.0:
            raise ValueError("inner_tol must lie in (0, 1)")
        if self.rank_v < 1 or self.rank_k < 1:
            raise ValueError("starting ranks must be >= 1")
        if self.solver not in ("bpcg", "gmres"):
            raise ValueError("solver must be 'bpcg' or 'gmres'")


# ------------------------------------------------------------------ system


@dataclass
class SaddleSystem:
    mesh: SurfaceMesh
    material: MaterialConfig
    operators: ElasticOperators
    A: Expr
    V_DD: Expr
    K_ND: Optional[Expr]
    D_NN: Optional[Expr]
    c_sp: dict
    depth: int

    @property
    def K_T(self) -> Optional[Expr]:
        if self.K_ND is None:
            return None
        if "_kt" not in self.__dict__:
            self.__dict__["_kt"] = Transpose(self.K_ND, name="K_ND^T")
        return self.__dict__["_kt"]

    @property
    def leaves(self) -> ElasticLeaves:
        return self.operators.leaves

    @property
    def layout(self):
        return self.operators.layout

    @property
    def shape(self):
        return self.A.shape

    @property
    def n_t(self) -> int:
        return self.V_DD.shape[0]

    @property
    def reduced(self) -> bool:
        return self.D_NN is None

    @property
    def C_sp(self) -> int:
        return max(self.c_sp.values())

    def split(self, x: np.ndarray):
        return x[: self.n_t], x[self.n_t :]

    def storage(self) -> dict:
        """Bytes of the current approximation per leaf."""
        out = {}
        for leaf in self.leaves.all:
            if isinstance(leaf, HMatrix):
                out[leaf.name] = leaf.storage_bytes("current")
        return out

    def family_leaves(self, tag: str) -> list[HMatrix]:
        """H-matrix leaves reachable from one operator family."""
        expr = {"V": self.V_DD, "K": self.K_ND, "D": self.D_NN}[tag]
        return [] if expr is None else form_leaves(expr.form)


def saddle_from_leaves(mesh: SurfaceMesh, material: MaterialConfig, leaves: ElasticLeaves) -> SaddleSystem:
    ops = build_operators(mesh, material, leaves)
    V, K, D = ops.restricted()
    if D is None:
        A = BlockMatrix([[V]], tags=[["V"]], name="A")
    else:
        A = block2x2(V, K, Transpose(K), D, signs=SIGNS, tags=TAGS, name="A")
    c_sp, depth = {}, 1
    if leaves.p_v is not None:
        c_sp = {"V": leaves.p_v.sparsity_constant, "K": leaves.p_k.sparsity_constant}
        c_sp["D"] = c_sp["V"]
        depth = max(leaves.p_v.depth, leaves.p_k.depth)
    else:
        c_sp = {"V": 1, "K": 1, "D": 1}
    return SaddleSystem(mesh, material, ops, A, V, K, D, c_sp, depth)


def assemble_saddle(
    mesh: SurfaceMesh,
    material: MaterialConfig = MaterialConfig(),
    cluster: ClusterConfig = ClusterConfig(),
    cfg: BacaConfig = BacaConfig(),
    quad: QuadratureConfig = QuadratureConfig(),
    full_eps: Optional[float] = None,
    max_rank: Optional[int] = None,
) -> SaddleSystem:
    """Coarse assembly at the starting ranks of ``cfg`` (or full ACA with ``full_eps``)."""
    if full_eps is None:
        acfg = AssemblyConfig(eps=None, rank_v=cfg.rank_v, rank_k=cfg.rank_k, lookahead=cfg.lookahead_steps,
                              max_rank=max_rank)
    else:
        acfg = AssemblyConfig(eps=full_eps, lookahead=cfg.lookahead_steps, max_rank=max_rank)
    leaves = assemble_leaves(mesh, cluster, acfg, quad)
    return saddle_from_leaves(mesh, material, leaves)


def dense_leaves(mesh: SurfaceMesh, quad: QuadratureConfig = QuadratureConfig()) -> ElasticLeaves:
    """Leaves holding the exact Galerkin matrices (the dense oracle)."""
    tri = np.arange(mesh.n_triangles)
    vd = galerkin_block(mesh, VDELTA, tri, tri, quad)
    vk = {kl: galerkin_block(mesh, vkl(*kl), tri, tri, quad) for kl in ((1, 1), (1, 2), (1, 3), (2, 2), (2, 3), (3, 3))}
    kd = galerkin_block(mesh, KDELTA, tri, np.arange(mesh.n_vertices), quad)
    return ElasticLeaves(mesh, None, None, vd, vk, kd, quad)


# --------------------------------------------------------------------- rhs


def kelvin_boundary_data(mesh: SurfaceMesh, material: MaterialConfig, p=(5.0, 5.0, 5.0), column: int = 0, order: int = 8):
    """Manufactured data from the displacement field ``x -> S(x - p) e_column``.

    Returns ``(g_D, g_N)``: nodal displacements (3N, component-major) on all
    nodes and triangle-averaged tractions (3M) on all triangles.
    """
    p = np.asarray(p, dtype=float)
    g = kelvin_tensor(mesh.vertices - p, material)[:, :, column]
    r = gauss_rule(order)
    a, b = r.points[:, 0], r.points[:, 1]
    lam = np.stack([1 - a, a - b, b], axis=1)
    Y = np.einsum("qa,mac->mqc", lam, mesh.corners)
    # the field is symmetric in (x, p): its traction is row `column` of the kernel
    T = kelvin_traction(p, Y, mesh.normals[:, None, :], material)[:, :, column, :]
    t = np.einsum("q,mqc->mc", r.weights, T) / r.weights.sum()
    return g.T.ravel(), t.T.ravel()


def rhs_operator(system: SaddleSystem) -> Expr:
    """``[-V, M/2 + K; M^T/2 - K^T, -D]`` restricted to the unknown rows."""
    ops = system.operators
    half_m = Scale(0.5, Leaf(ops.ops.mass3, "M"))
    half_mt = Scale(0.5, Leaf(ops.ops.mass3.T.tocsr(), "M^T"))
    grid = [
        [Scale(-1.0, ops.Vh), Sum([half_m, ops.Kh])],
        [Sum([half_mt, Scale(-1.0, Transpose(ops.Kh))]), Scale(-1.0, ops.Dh)],
    ]
    full = BlockMatrix(grid, tags=TAGS, name="rhs")
    ti = system.layout.t_index()
    rows = ti if system.reduced else np.concatenate([ti, ops.Vh.shape[0] + system.layout.u_index()])
    return restrict(full, rows, None, name="rhs")


def extend_data(system: SaddleSystem, g_D: np.ndarray, g_N: np.ndarray):
    """Extensions by zero: ``g_D`` off the free Neumann nodes, ``g_N`` off the Dirichlet triangles."""
    gd = np.array(g_D, dtype=float)
    gn = np.array(g_N, dtype=float)
    gn[system.layout.t_index()] = 0.0
    if system.layout.n_u:
        gd[system.layout.u_index()] = 0.0
    return gd, gn


def assemble_rhs(
    system: SaddleSystem,
    g_D: np.ndarray,
    g_N: np.ndarray,
    mode: str = "fixed",
    amvm: AmvmConfig = AmvmConfig(),
) -> tuple[np.ndarray, Optional[AmvmReport]]:
    """Right-hand side for data ``g_D`` (3N nodal) and ``g_N`` (3M per triangle).

    Values of ``g_D`` on free Neumann nodes and of ``g_N`` on Dirichlet
    triangles are ignored (the data are extended by zero).

    ``mode="fixed"`` multiplies with the leaves as they are; ``mode="amvm"``
    runs the adaptive multiplication, refining the shared leaves in place.
    """
    M, N = system.mesh.n_triangles, system.mesh.n_vertices
    g_D = np.asarray(g_D, dtype=float)
    g_N = np.asarray(g_N, dtype=float)
    if g_D.shape != (3 * N,) or g_N.shape != (3 * M,):
        raise ValueError(f"expected g_D of length {3 * N} and g_N of length {3 * M}")
    R = rhs_operator(system)
    x = np.concatenate(extend_data(system, g_D, g_N)[::-1])
    if mode == "fixed":
        return R.matvec(x), None
    if mode == "amvm":
        return amvm_multiply(R, x, amvm)
    raise ValueError(f"unknown rhs mode {mode!r}")


def dense_solve(system: SaddleSystem, f: np.ndarray, mode: str = "current") -> np.ndarray:
    A = densify(system.A, mode)
    return sla.solve(A, f)


# ------------------------------------------------------------------- BP-CG


@dataclass
class BPCGResult:
    x: np.ndarray
    iterations: int
    residual: float  # relative |f - A x| / |f|
    solver: str
    converged: bool


class _Preconditioner:
    """``C_V = eta * V0`` with ``V0`` a fixed dense snapshot of ``V_DD``."""

    def __init__(self, V0: np.ndarray, A_mv, lanczos_steps: int = 10):
        self.chol = sla.cho_factor(V0)
        self.V0 = V0
        self.eta = 1.0
        self.eta = 0.5 * self._min_ritz(A_mv, lanczos_steps)

    def solve(self, r):
        return sla.cho_solve(self.chol, r) / self.eta

    def apply(self, x):
        return self.eta * (self.V0 @ x)

    def _min_ritz(self, A_mv, steps):
        # Lanczos for the pencil (A, V0) in the V0 inner product
        n = self.V0.shape[0]
        q = np.ones(n)
        q /= np.sqrt(q @ (self.V0 @ q))
        q_prev = np.zeros(n)
        alphas, betas = [], []
        beta = 0.0
        for _ in range(min(steps, n)):
            w = sla.cho_solve(self.chol, A_mv(q))
            a = float(w @ (self.V0 @ q))
            w = w - a * q - beta * q_prev
            alphas.append(a)
            beta = float(np.sqrt(max(w @ (self.V0 @ w), 0.0)))
            if beta < 1e-14 * abs(a):
                break
            betas.append(beta)
            q_prev, q = q, w / beta
        k = len(alphas)
        T = np.diag(alphas) + np.diag(betas[: k - 1], 1) + np.diag(betas[: k - 1], -1)
        return float(np.linalg.eigvalsh(T)[0])


def _prepare_preconditioner(system: SaddleSystem) -> _Preconditioner:
    V0 = densify(system.V_DD, "current")
    V0 = 0.5 * (V0 + V0.T)
    return _Preconditioner(V0, lambda v: system.V_DD.matvec(v))


def _gmres(system: SaddleSystem, f, x0, tol, maxiter, pre: Optional[_Preconditioner]) -> BPCGResult:
    n, nt = system.shape[0], system.n_t
    A = spla.LinearOperator((n, n), matvec=lambda v: system.A.matvec(v), dtype=float)
    M = None
    if pre is not None:
        M = spla.LinearOperator((n, n), matvec=lambda v: np.concatenate([pre.solve(v[:nt]), v[nt:]]), dtype=float)
    count = [0]

    def cb(_):
        count[0] += 1

    x, info = spla.gmres(A, f, x0=x0, rtol=tol, atol=0.0, restart=200, maxiter=maxiter, M=M, callback=cb,
                         callback_type="pr_norm")
    res = float(np.linalg.norm(f - system.A.matvec(x)) / np.linalg.norm(f))
    return BPCGResult(x, count[0], res, "gmres", info == 0)


def bpcg_solve(
    system: SaddleSystem,
    f: np.ndarray,
    tol: float,
    x0: Optional[np.ndarray] = None,
    maxiter: int = 2000,
    preconditioner: Optional[_Preconditioner] = None,
    solver: str = "bpcg",
) -> BPCGResult:
    """Solve ``A x = f`` to ``|f - A x| <= tol |f|`` with the current leaves.

    Bramble-Pasciak CG runs on the transformed system in the inner product
    induced by ``diag(V_DD - C_V, I)``; a loss of positivity falls back to
    GMRES on the original system.  The reduced (all Dirichlet) system is
    solved with preconditioned CG.
    """
    f = np.asarray(f, dtype=float)
    n = system.shape[0]
    if f.shape != (n,):
        raise ValueError(f"right-hand side must have length {n}")
    x = np.zeros(n) if x0 is None else np.array(x0, dtype=float)
    fn = float(np.linalg.norm(f))
    if fn == 0.0:
        return BPCGResult(np.zeros(n), 0, 0.0, solver, True)
    pre = preconditioner or _prepare_preconditioner(system)
    if solver == "gmres":
        return _gmres(system, f, x, tol, maxiter, pre)
    if system.reduced:
        return _pcg(system, f, x, tol, maxiter, pre)
    try:
        return _bpcg(system, f, x, tol, maxiter, pre)
    except SolverError as exc:
        logger.warning("Bramble-Pasciak CG broke down (%s); falling back to GMRES", exc)
        return _gmres(system, f, x, tol, maxiter, pre)


def _pcg(system, f, x, tol, maxiter, pre) -> BPCGResult:
    V = system.V_DD
    fn = np.linalg.norm(f)
    r = f - V.matvec(x)
    z = pre.solve(r)
    p = z.copy()
    rz = r @ z
    it = 0
    while np.linalg.norm(r) > tol * fn and it < maxiter:
        Ap = V.matvec(p)
        pAp = p @ Ap
        if pAp <= 0:
            raise SolverError("V_DD is not positive definite")
        a = rz / pAp
        x += a * p
        r -= a * Ap
        z = pre.solve(r)
        rz_new = r @ z
        p = z + (rz_new / rz) * p
        rz = rz_new
        it += 1
    res = float(np.linalg.norm(f - V.matvec(x)) / fn)
    return BPCGResult(x, it, res, "pcg", res <= tol * (1 + 1e-8))


def _bpcg(system, f, x, tol, maxiter, pre) -> BPCGResult:
    nt = system.n_t
    V, K, D = system.V_DD, system.K_ND, system.D_NN
    fD, fN = f[:nt], f[nt:]
    fn = np.linalg.norm(f)
    # A = V, B = -K^T, C = D, g = -f_N:   [A B^T; B -C] [t; u] = [f_D; g]
    KT = system.K_T

    def Bt(y):
        return -K.matvec(y)

    def B(v):
        return -KT.matvec(v)

    g = -fN

    def original_residual(t, u):
        rD = fD - V.matvec(t) + K.matvec(u)
        rN = fN - KT.matvec(t) - D.matvec(u)
        return np.concatenate([rD, rN])

    def apply(t, u, Vt):
        # transformed operator; Vt = V t is passed in
        w = pre.solve(Vt + Bt(u))
        return w, B(w - t) + D.matvec(u)

    def inner(a1, Va1, a2, b1, b2):
        # <(a1, a2), (b1, b2)> with weight diag(V - C_V, I); Va1 = V a1
        return float(b1 @ (Va1 - pre.apply(a1)) + a2 @ b2)

    t, u = x[:nt].copy(), x[nt:].copy()
    Vt = V.matvec(t)
    z1, z2 = apply(t, u, Vt)
    w0 = pre.solve(fD)
    r1 = w0 - z1
    r2 = B(w0) - g - z2
    Vr1 = V.matvec(r1)
    p1, p2, Vp1 = r1.copy(), r2.copy(), Vr1.copy()
    rr = inner(r1, Vr1, r2, r1, r2)
    it = 0
    res = np.linalg.norm(original_residual(t, u)) / fn
    check_every = 5
    while res > tol and it < maxiter:
        q1, q2 = apply(p1, p2, Vp1)
        Vq1 = V.matvec(q1)
        pq = inner(q1, Vq1, q2, p1, p2)
        if pq <= 0 or rr <= 0:
            raise SolverError(f"non-positive inner product at iteration {it}")
        a = rr / pq
        t += a * p1
        u += a * p2
        r1 -= a * q1
        r2 -= a * q2
        Vr1 -= a * Vq1
        rr_new = inner(r1, Vr1, r2, r1, r2)
        beta = rr_new / rr
        rr = rr_new
        p1 = r1 + beta * p1
        p2 = r2 + beta * p2
        Vp1 = Vr1 + beta * Vp1
        it += 1
        if it % check_every == 0 or rr <= 0:
            res = np.linalg.norm(original_residual(t, u)) / fn
    x = np.concatenate([t, u])
    res = float(np.linalg.norm(original_residual(t, u)) / fn)
    return BPCGResult(x, it, res, "bpcg", res <= tol)


# --------------------------------------------------------------- estimator


def estimator_Ek(system: SaddleSystem, x: np.ndarray):
    """``E_k`` and the per-item look-ahead contributions at ``x``.

    Returns ``(E, contributions)`` where ``contributions.item_norms[q]`` is
    ``|(A_hat - A)_b x_b|`` for item ``(tag, leaf, block)`` ``q``.
    """
    tc = system.A.form.tail_contributions(x)
    norms = tc.item_norms
    return float(np.sqrt(np.sum(norms**2))), tc


def _gamma(system: SaddleSystem, x: np.ndarray) -> float:
    return float(np.linalg.norm(system.A.matvec(x, "tail")))


def dorfler_mark(norms: np.ndarray, theta: float) -> np.ndarray:
    """Smallest descending prefix with ``sum norms^2 >= theta^2 sum norms^2``."""
    norms = np.asarray(norms, dtype=float)
    total = float(np.sum(norms**2))
    if total == 0.0:
        return np.zeros(0, dtype=np.int64)
    order = np.argsort(-norms, kind="stable")
    csum = np.cumsum(norms[order] ** 2)
    k = int(np.searchsorted(csum, theta**2 * total * (1 - 1e-15))) + 1
    return order[: min(k, len(order))]


# ------------------------------------------------------------------ driver


@dataclass
class BacaIteration:
    k: int
    E: float
    gamma: float  # |(A_k - A_hat_k) x_k|
    residual: float  # |f - A_k x_k|
    inner_tol: float
    inner_iterations: int
    solver: str
    marked: dict
    promoted: list  # refinement log: (step, leaf, count)
    storage: dict
    wall: float


@dataclass
class BacaReport:
    iterations: list[BacaIteration] = field(default_factory=list)
    reason: str = ""
    x: Optional[np.ndarray] = None

    @property
    def E(self) -> np.ndarray:
        return np.array([it.E for it in self.iterations])

    def to_json(self, wall: bool = True) -> str:
        rows = []
        for it in self.iterations:
            d = asdict(it)
            d["promoted"] = [list(p) for p in it.promoted]
            if not wall:
                del d["wall"]
            rows.append(d)
        return json.dumps({"reason": self.reason, "iterations": rows}, indent=1)

    def to_csv(self, wall: bool = True) -> str:
        """One row per outer iteration; ``wall=False`` drops the timing column."""
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        head = ["iteration", "E", "gamma", "inner_iterations", "marked_V", "marked_K", "marked_D", "storage_mb"]
        w.writerow(head + ["wall_s"] if wall else head)
        for it in self.iterations:
            row = [
                it.k, f"{it.E:.6e}", f"{it.gamma:.6e}", it.inner_iterations,
                it.marked.get("V", 0), it.marked.get("K", 0), it.marked.get("D", 0),
                f"{sum(it.storage.values()) / 2**20:.6f}",
            ]
            w.writerow(row + [f"{it.wall:.3f}"] if wall else row)
        return buf.getvalue()


def _promote(system: SaddleSystem, tc, marked: np.ndarray, cfg: BacaConfig) -> list:
    """Refinement in the order (i) D_NN, (ii) V_DD plus marked K blocks, (iii) marked V blocks."""
    tags = {tc.items[q][0] for q in marked}
    log = []
    done: dict[int, set] = {}

    def promote(step, leaf, blocks):
        blocks = set(blocks) - done.setdefault(id(leaf), set())
        blocks = {b for b in blocks if leaf.has_tail(b)}
        if not blocks:
            return
        changed = leaf.refine(blocks)
        done[id(leaf)].update(blocks)
        log.append((step, leaf.name, len(changed)))

    def selected(tag):
        out: dict[int, tuple] = {}
        for q in marked:
            tg, leaf, b = tc.items[q]
            if tg == tag:
                out.setdefault(id(leaf), (leaf, set()))[1].add(b)
        return out.values()

    if "D" in tags:
        for leaf in system.family_leaves("D"):
            promote("i", leaf, leaf.factors.keys())
    if "K" in tags:
        if cfg.promote_all_vdd:
            for leaf in system.family_leaves("V"):
                promote("ii", leaf, leaf.factors.keys())
        for leaf, blocks in selected("K"):
            promote("ii", leaf, blocks)
    for leaf, blocks in selected("V"):
        promote("iii", leaf, blocks)
    return log


def baca_solve(system: SaddleSystem, f: np.ndarray, cfg: BacaConfig = BacaConfig()) -> tuple[np.ndarray, BacaReport]:
    """Block-adaptive solve of ``A x = f``; refines the shared leaves in place."""
    f = np.asarray(f, dtype=float)
    fn = float(np.linalg.norm(f))
    report = BacaReport()
    n = system.shape[0]
    if fn == 0.0:
        report.reason = "zero rhs"
        report.x = np.zeros(n)
        return report.x, report
    for leaf in form_leaves(system.A.form):
        leaf.lookahead = cfg.lookahead_steps
    pre = _prepare_preconditioner(system)
    x = np.zeros(n)
    tol = cfg.inner_tol
    start = time.perf_counter()
    for k in range(cfg.max_outer):
        inner_its = 0
        for _ in range(6):
            res = bpcg_solve(system, f, tol, x, cfg.max_inner, pre, cfg.solver)
            x, inner_its = res.x, inner_its + res.iterations
            gamma = _gamma(system, x)
            bound = max(cfg.alpha * gamma, cfg.tol_floor * fn)
            if res.residual * fn <= bound * (1 + 1e-10) or tol <= cfg.tol_floor:
                break
            tol = max(0.5 * bound / fn, cfg.tol_floor)
        E, tc = estimator_Ek(system, x)
        it = BacaIteration(k, E, gamma, res.residual * fn, tol, inner_its, res.solver, {}, [], system.storage(),
                           time.perf_counter() - start)
        report.iterations.append(it)
        logger.info("baca k=%d E=%.3e gamma=%.3e inner=%d", k, E, gamma, inner_its)
        if E <= cfg.eps_baca * fn:
            report.reason = "converged"
            break
        marked = dorfler_mark(tc.item_norms, cfg.theta)
        for q in marked:
            tag = tc.items[q][0]
            it.marked[tag] = it.marked.get(tag, 0) + 1
        it.promoted = _promote(system, tc, marked, cfg)
        if not any(c for _, _, c in it.promoted):
            report.reason = "exhausted"
            break
        # adapt the inner tolerance with the refined operator at the old iterate
        tol = max(cfg.alpha * _gamma(system, x) / fn, cfg.tol_floor)
        tol = min(tol, cfg.inner_tol)
    else:
        report.reason = "max_outer"
    report.x = x
    return x, report
