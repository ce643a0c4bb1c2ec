"""Desk-scale invariant suites run by ``elastohm verify``.

Each suite returns a :class:`SuiteResult`; an exception inside a suite counts
as a failure with the message as detail.  Suites whose preconditions do not
hold for the given configuration are reported as skipped.
"""
from __future__ import annotations

import time
import traceback
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import mesh_path
from .aca import aca_run
from .amvm import AmvmConfig, amvm_multiply
from .baca import dense_leaves, dorfler_mark, saddle_from_leaves
from .clustering import admissible, build_block_partition, build_cluster_tree
from .config import RunConfig
from .elasticity import build_partitions, build_sparse_ops
from .galerkin import VDELTA, make_oracle
from .hmatrix import assemble
from .kernels import kelvin_tensor
from .mesh import load_mesh
from .operators import Leaf, densify
from .quadrature import gauss_rule, sauter_schwab

__all__ = ["SuiteResult", "SUITES", "run_verify"]


@dataclass
class SuiteResult:
    suite: str
    status: str  # "pass", "fail" or "skip"
    detail: str
    seconds: float = 0.0


class _Skip(Exception):
    pass


class _Context:
    """Lazily built shared objects so that each suite pays only for what it uses."""

    def __init__(self, cfg: RunConfig):
        self.cfg = cfg
        self._cache = {}

    def get(self, key, make):
        if key not in self._cache:
            self._cache[key] = make()
        return self._cache[key]

    @property
    def cube(self):
        return self.get("cube", lambda: load_mesh(mesh_path("cube_488"), "x1 == 1 or x2 == -1 or x3 == 1"))

    @property
    def tet(self):
        return self.get("tet", lambda: load_mesh(mesh_path("tetrahedron"), "x3 <= 0"))

    @property
    def vdelta(self):
        def make():
            p_v, _ = build_partitions(self.cube, self.cfg.cluster)
            oracle = make_oracle(self.cube, VDELTA, self.cfg.quadrature)
            return p_v, oracle
        return self.get("vdelta", make)


def _geometry(ctx: _Context) -> str:
    from .bench import resolve_mesh

    m = resolve_mesh(ctx.cfg)
    assert np.all(m.areas > 0), "degenerate triangle"
    assert np.allclose(np.linalg.norm(m.normals, axis=1), 1.0), "normals not unit"
    assert m.signed_volume > 0, "mesh not outward oriented"
    return f"{m.n_vertices} nodes, {m.n_triangles} triangles, volume {m.signed_volume:.6g}"


def _quadrature(ctx: _Context) -> str:
    for order in sorted({ctx.cfg.quad_order, ctx.cfg.quad_close, ctx.cfg.quad_near, ctx.cfg.quad_far}):
        r = gauss_rule(order)
        x, y = r.points[:, 0], r.points[:, 1]
        for a in range(order + 1):
            b = order - a
            exact = _monomial(a, b)
            assert abs(r.weights @ (x**a * y**b) - exact) <= 1e-13, f"order {order} fails on x^{a} y^{b}"
    for case in ("coincident", "edge", "vertex"):
        rule = sauter_schwab(case, ctx.cfg.singular_points, ctx.cfg.singular_radial)
        assert abs(rule.w.sum() - 0.25) < 1e-12, f"{case} rule does not integrate 1"
    return "polynomial exactness and singular rule weights"


def _monomial(a: int, b: int) -> float:
    # int_0^1 int_0^x x^a y^b dy dx = 1 / ((b + 1) (a + b + 2))
    return 1.0 / ((b + 1) * (a + b + 2))


def _kernels(ctx: _Context) -> str:
    rng = np.random.default_rng(ctx.cfg.seed)
    d = rng.standard_normal((50, 3))
    S = kelvin_tensor(d, ctx.cfg.material)
    assert np.allclose(S, np.swapaxes(S, -1, -2)), "Kelvin tensor not symmetric"
    assert np.allclose(S, kelvin_tensor(-d, ctx.cfg.material)), "Kelvin tensor not even"
    return "symmetry and parity"


def _clustering(ctx: _Context) -> str:
    m = ctx.cube
    tree = build_cluster_tree(m.boxes, ctx.cfg.b_min)
    part = build_block_partition(tree, tree, ctx.cfg.beta)
    cover = np.zeros((m.n_triangles, m.n_triangles), dtype=np.int32)
    for b in part.blocks:
        cover[np.ix_(part.row_indices(b), part.col_indices(b))] += 1
        if b.admissible:
            assert admissible(b.row, b.col, ctx.cfg.beta), "inadmissible block marked admissible"
    assert np.all(cover == 1), "partition does not cover the index set exactly once"
    return f"{len(part.blocks)} blocks, sparsity constant {part.sparsity_constant}"


def _aca(ctx: _Context) -> str:
    part, oracle = ctx.vdelta
    rng = np.random.default_rng(ctx.cfg.seed)
    adm = part.admissible_blocks
    worst = 0.0
    for i in rng.choice(len(adm), size=min(10, len(adm)), replace=False):
        b = adm[i]
        r, c = part.row_indices(b), part.col_indices(b)
        f = aca_run(oracle, r, c, ctx.cfg.eps_aca, ctx.cfg.beta)
        A = oracle.block(r, c)
        worst = max(worst, np.linalg.norm(A - f.dense()) / np.linalg.norm(A))
    assert worst <= 3 * ctx.cfg.eps_aca, f"block error {worst:.2e}"
    return f"worst relative block error {worst:.2e}"


def _hmatrix(ctx: _Context) -> str:
    part, oracle = ctx.vdelta
    h = ctx.get("h_fixed", lambda: assemble(oracle, part, eps=ctx.cfg.eps_aca, name="VDelta"))
    x = np.random.default_rng(ctx.cfg.seed).standard_normal(h.shape[1])
    A = ctx.get("vdelta_dense", lambda: oracle.block(np.arange(h.shape[0]), np.arange(h.shape[1])))
    err = np.linalg.norm(h.matvec(x) - A @ x) / np.linalg.norm(A @ x)
    assert err <= 1e-5, f"matvec error {err:.2e}"
    return f"relative matvec error {err:.2e}"


def _elasticity(ctx: _Context) -> str:
    m = ctx.tet
    sys_ = saddle_from_leaves(m, ctx.cfg.material, dense_leaves(m, ctx.cfg.quadrature))
    D = densify(sys_.operators.Dh)
    ops = build_sparse_ops(m)
    N = m.n_vertices
    worst = 0.0
    for comp in range(3):
        c = np.zeros(3 * N)
        c[comp * N : (comp + 1) * N] = 1.0
        worst = max(worst, np.linalg.norm(D @ c) / np.linalg.norm(D))
        assert np.abs(ops.Th @ c).max() <= 1e-12, "T_h does not annihilate constants"
    assert worst <= 1e-12, f"|D_h c| / |D_h|_F = {worst:.2e}"
    assert np.allclose(np.asarray(ops.mass.sum(axis=1)).ravel(), m.areas, rtol=0, atol=1e-15)
    return f"rigid translations: {worst:.1e}"


def _amvm_run(ctx: _Context):
    def make():
        part, oracle = ctx.vdelta
        h = assemble(oracle, part, initial_rank=2, lookahead=2, name="VDelta")
        op = Leaf(h)
        x = np.ones(h.shape[1])
        cfg = AmvmConfig(theta=ctx.cfg.amvm_theta, eps_amvm=1e-7, lookahead_steps=2, relative=True)
        return op, x, amvm_multiply(op, x, cfg)[1]
    return ctx.get("amvm", make)


def _amvm(ctx: _Context) -> str:
    op, x, rep = _amvm_run(ctx)
    theta = ctx.cfg.amvm_theta
    for it in rep.iterations[:-1]:
        assert it.remainder <= (1 - theta) * it.gamma + 1e-12 * it.gamma, f"marking failed at k={it.k}"
    z, zrep = amvm_multiply(Leaf(op.payload), np.zeros(op.shape[1]), AmvmConfig())
    assert zrep.refinements == 0 and not z.any(), "zero vector triggered refinement"
    return f"{len(rep.iterations)} iterations, final gamma {rep.gammas[-1]:.2e}"


def _estimator_reduction(ctx: _Context) -> str:
    s, theta = 2.0, ctx.cfg.amvm_theta
    if not theta > 1.0 - 1.0 / np.sqrt(s):
        raise _Skip(f"theta = {theta} violates theta > 1 - 1/sqrt(s) = {1 - 1 / np.sqrt(s):.4f}")
    _, _, rep = _amvm_run(ctx)
    c2 = 1.0 / (1.0 - s * (1.0 - theta) ** 2)
    its = rep.iterations
    for a, b in zip(its, its[1:]):
        assert b.gamma**2 <= a.gamma**2 / s + c2 * a.e_hat**2 + 1e-24, f"reduction fails at k={a.k}"
    return f"{max(len(its) - 1, 0)} steps checked with c2 = {c2:.4f}"


def _marking(ctx: _Context) -> str:
    rng = np.random.default_rng(ctx.cfg.seed)
    for _ in range(20):
        v = rng.random(rng.integers(1, 50))
        k = dorfler_mark(v, ctx.cfg.baca_theta)
        assert np.sum(v[k] ** 2) >= ctx.cfg.baca_theta**2 * np.sum(v**2) * (1 - 1e-12)
    return "Doerfler bulk criterion"


SUITES: dict[str, Callable[[_Context], str]] = {
    "geometry": _geometry,
    "quadrature": _quadrature,
    "kernels": _kernels,
    "clustering": _clustering,
    "aca": _aca,
    "hmatrix": _hmatrix,
    "elasticity": _elasticity,
    "amvm_marking": _amvm,
    "estimator_reduction": _estimator_reduction,
    "doerfler": _marking,
}


def run_verify(cfg: RunConfig, only=None) -> list[SuiteResult]:
    ctx = _Context(cfg)
    out = []
    for name, fn in SUITES.items():
        if only and name not in only:
            continue
        t0 = time.perf_counter()
        try:
            detail, status = fn(ctx), "pass"
        except _Skip as exc:
            detail, status = str(exc), "skip"
        except Exception as exc:  # any failure is reported, not raised
            detail = f"{type(exc).__name__}: {exc}".strip()
            status = "fail"
            if not str(exc):
                detail += " " + traceback.format_exc(limit=1).splitlines()[-1]
        out.append(SuiteResult(name, status, detail, time.perf_counter() - t0))
    return out
