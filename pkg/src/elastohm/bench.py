"""Experiment drivers behind the command-line front end.

Each driver takes a :class:`RunConfig`, runs the fixed-accuracy ACA pipeline
next to the adaptive one and returns a :class:`Result` holding tables and
arrays.  Timings are kept apart from the tables so that the tables are
reproducible byte for byte.
"""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import mesh_path
from .amvm import AmvmReport
from .baca import (
    BacaConfig,
    SaddleSystem,
    assemble_rhs,
    assemble_saddle,
    baca_solve,
    bpcg_solve,
    dense_leaves,
    dense_solve,
    kelvin_boundary_data,
    saddle_from_leaves,
)
from .config import RunConfig
from .kernels import kelvin_tensor
from .mesh import SurfaceMesh, load_mesh
from .potentials import evaluate_interior, full_boundary_data, point_surface_distance
from .report import storage_report

logger = logging.getLogger(__name__)

__all__ = ["Result", "OracleTooLarge", "resolve_mesh", "boundary_data", "interior_points", "run_rhs", "run_solve",
           "run_ratios"]


class OracleTooLarge(ValueError):
    pass


@dataclass
class Result:
    tables: dict = field(default_factory=dict)  # name -> list of rows
    arrays: dict = field(default_factory=dict)  # name -> ndarray
    timings: dict = field(default_factory=dict)  # name -> seconds
    ok: bool = True
    notes: list = field(default_factory=list)


def resolve_mesh(cfg: RunConfig) -> SurfaceMesh:
    """``cfg.mesh`` is a shipped mesh name or a path to an OFF file."""
    p = Path(cfg.mesh)
    path = p if p.suffix == ".off" or p.exists() else mesh_path(cfg.mesh)
    return load_mesh(path, cfg.labeling)


def boundary_data(cfg: RunConfig, mesh: SurfaceMesh):
    """``(g_D, g_N)`` component-major on all nodes / triangles."""
    if cfg.load == "kelvin":
        return kelvin_boundary_data(mesh, cfg.material, cfg.point, cfg.kelvin_column)
    # beam: uniform vertical traction on the far quarter of the top face
    c = mesh.centroids
    lo, hi = mesh.vertices[:, 0].min(), mesh.vertices[:, 0].max()
    top = np.abs(c[:, 2] - mesh.vertices[:, 2].max()) < 1e-9
    loaded = top & (c[:, 0] > lo + 0.75 * (hi - lo))
    if not loaded.any():
        raise ValueError("beam load: no triangles on the far end of the top face")
    M = mesh.n_triangles
    g_N = np.zeros(3 * M)
    g_N[2 * M + np.flatnonzero(loaded)] = cfg.beam_traction / mesh.areas[loaded].sum()
    return np.zeros(3 * mesh.n_vertices), g_N


def interior_points(mesh: SurfaceMesh, n: int, seed: int = 0, clearance: float = 2.0) -> np.ndarray:
    """``n`` random points inside the mesh at least ``clearance`` element diameters from the boundary."""
    from .potentials import _winding

    rng = np.random.default_rng(seed)
    lo, hi = mesh.vertices.min(axis=0), mesh.vertices.max(axis=0)
    limit = clearance * float(mesh.diameters.max())
    out = []
    for _ in range(200):
        cand = lo + (hi - lo) * rng.random((4 * n, 3))
        ok = _winding(mesh, cand)
        cand = cand[ok]
        if len(cand):
            cand = cand[point_surface_distance(mesh, cand) >= limit]
        out.extend(cand)
        if len(out) >= n:
            return np.array(out[:n])
    raise ValueError("could not place interior points; the domain may be too thin")


def _check_oracle(cfg: RunConfig, mesh: SurfaceMesh):
    if mesh.n_triangles > cfg.oracle_max_triangles:
        raise OracleTooLarge(
            f"dense oracle refused: {mesh.n_triangles} triangles > oracle_max_triangles = {cfg.oracle_max_triangles}"
        )


def _rel(a, b) -> float:
    nb = float(np.linalg.norm(b))
    return float(np.linalg.norm(a - b)) / (nb if nb > 0 else 1.0)


def _amvm_rows(rep: AmvmReport) -> list[dict]:
    return [
        {"iteration": it.k, "gamma": it.gamma, "marked": it.marked, "refined": it.refined,
         "cumulative_aca_steps": it.aca_steps, "storage_mb": round(it.storage_bytes / 2**20, 6)}
        for it in rep.iterations
    ]


def _dense_system(cfg: RunConfig, mesh: SurfaceMesh) -> SaddleSystem:
    return saddle_from_leaves(mesh, cfg.material, dense_leaves(mesh, cfg.quadrature))


def _max_rank(cfg: RunConfig) -> Optional[int]:
    return cfg.max_rank or None


# ------------------------------------------------------------------- rhs


def run_rhs(cfg: RunConfig, oracle: bool = False) -> Result:
    """Right-hand side by fixed-accuracy ACA and by AMVM from a coarse start."""
    mesh = resolve_mesh(cfg)
    if oracle:
        _check_oracle(cfg, mesh)
    g_D, g_N = boundary_data(cfg, mesh)
    res = Result()

    t0 = time.perf_counter()
    full = assemble_saddle(mesh, cfg.material, cfg.cluster, cfg.baca, cfg.quadrature, full_eps=cfg.eps_aca,
                           max_rank=_max_rank(cfg))
    f_aca, _ = assemble_rhs(full, g_D, g_N)
    res.timings["aca_rhs"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    start = BacaConfig(rank_v=cfg.rhs_rank, rank_k=cfg.rhs_rank, lookahead_steps=cfg.lookahead)
    coarse = assemble_saddle(mesh, cfg.material, cfg.cluster, start, cfg.quadrature, max_rank=_max_rank(cfg))
    f_amvm, rep = assemble_rhs(coarse, g_D, g_N, mode="amvm", amvm=cfg.amvm)
    res.timings["amvm_rhs"] = time.perf_counter() - t0

    err = {"aca": float("nan"), "amvm": float("nan")}
    if oracle:
        t0 = time.perf_counter()
        f_dense, _ = assemble_rhs(_dense_system(cfg, mesh), g_D, g_N)
        res.timings["dense_rhs"] = time.perf_counter() - t0
        err = {"aca": _rel(f_aca, f_dense), "amvm": _rel(f_amvm, f_dense)}
        res.arrays["rhs_dense"] = f_dense
    res.tables["rhs_summary"] = [
        {"method": m, "N": mesh.n_vertices, "M": mesh.n_triangles, "b_min": cfg.b_min, "error": err[m],
         "iterations": len(rep.iterations) if m == "amvm" else 0}
        for m in ("aca", "amvm")
    ]
    res.tables["rhs_storage_aca"] = storage_report(full.leaves.all)
    res.tables["rhs_storage_amvm"] = storage_report(coarse.leaves.all)
    res.tables["amvm_iterations"] = _amvm_rows(rep)
    res.arrays["rhs_aca"] = f_aca
    res.arrays["rhs_amvm"] = f_amvm
    if rep.reason != "converged":
        res.notes.append(f"amvm stopped: {rep.reason}")
    return res


# ----------------------------------------------------------------- solve


def run_solve(cfg: RunConfig, oracle: bool = False, interior: int = 10) -> Result:
    """Full-ACA solve next to the block-adaptive solve; optional dense truth and interior check."""
    mesh = resolve_mesh(cfg)
    if oracle:
        _check_oracle(cfg, mesh)
    g_D, g_N = boundary_data(cfg, mesh)
    res = Result()

    t0 = time.perf_counter()
    full = assemble_saddle(mesh, cfg.material, cfg.cluster, cfg.baca, cfg.quadrature, full_eps=cfg.eps_aca,
                           max_rank=_max_rank(cfg))
    f_full, _ = assemble_rhs(full, g_D, g_N)
    sol = bpcg_solve(full, f_full, cfg.solve_tol, solver=cfg.solver)
    res.timings["aca_total"] = time.perf_counter() - t0
    x_aca = sol.x

    t0 = time.perf_counter()
    coarse = assemble_saddle(mesh, cfg.material, cfg.cluster, cfg.baca, cfg.quadrature, max_rank=_max_rank(cfg))
    res.timings["baca_assembly"] = time.perf_counter() - t0
    f, rep_rhs = assemble_rhs(coarse, g_D, g_N, mode="amvm", amvm=cfg.amvm)
    x_baca, rep = baca_solve(coarse, f, cfg.baca)
    res.timings["baca_total"] = time.perf_counter() - t0

    scale = float(np.abs(x_aca).max()) or 1.0
    summary = {
        "N": mesh.n_vertices,
        "M": mesh.n_triangles,
        "unknowns": len(x_aca),
        "aca_iterations": sol.iterations,
        "baca_outer": len(rep.iterations),
        "baca_inner": sum(it.inner_iterations for it in rep.iterations),
        "baca_reason": rep.reason,
        "baca_vs_aca_max_rel": float(np.abs(x_baca - x_aca).max()) / scale,
        "baca_vs_aca_l2_rel": _rel(x_baca, x_aca),
        "baca_vs_dense": float("nan"),
        "aca_vs_dense": float("nan"),
        "interior_error": float("nan"),
    }
    if oracle:
        t0 = time.perf_counter()
        dense = _dense_system(cfg, mesh)
        f_dense, _ = assemble_rhs(dense, g_D, g_N)
        x_dense = dense_solve(dense, f_dense)
        res.timings["dense_solve"] = time.perf_counter() - t0
        summary["baca_vs_dense"] = _rel(x_baca, x_dense)
        summary["aca_vs_dense"] = _rel(x_aca, x_dense)
        res.arrays["x_dense"] = x_dense
    pts = None
    if cfg.load == "kelvin" and interior > 0:
        try:
            pts = interior_points(mesh, interior, cfg.seed)
        except ValueError as exc:
            res.notes.append(f"interior check skipped: {exc}")
    if pts is not None:
        t, u = full_boundary_data(coarse, x_baca, g_D, g_N)
        got = evaluate_interior(mesh, cfg.material, t, u, pts)
        exact = kelvin_tensor(pts - np.asarray(cfg.point), cfg.material)[:, :, cfg.kelvin_column]
        summary["interior_error"] = _rel(got.ravel(), exact.ravel())
        res.arrays["interior_points"] = pts
        res.arrays["interior_values"] = got
    res.tables["solve_summary"] = [summary]
    res.tables["solve_storage_aca"] = storage_report(full.leaves.all)
    res.tables["solve_storage_baca"] = storage_report(coarse.leaves.all)
    res.tables["baca_iterations"] = [
        {"iteration": it.k, "E": it.E, "gamma": it.gamma, "inner_iterations": it.inner_iterations,
         "marked_V": it.marked.get("V", 0), "marked_K": it.marked.get("K", 0), "marked_D": it.marked.get("D", 0),
         "storage_mb": round(sum(it.storage.values()) / 2**20, 6)}
        for it in rep.iterations
    ]
    res.tables["amvm_iterations"] = _amvm_rows(rep_rhs)
    res.arrays["x_aca"] = x_aca
    res.arrays["x_baca"] = x_baca
    res.ok = rep.reason == "converged" and sol.converged
    if not res.ok:
        res.notes.append(f"solver status: aca converged={sol.converged}, baca {rep.reason}")
    return res


# ---------------------------------------------------------------- ratios


def run_ratios(cfg: RunConfig, beam: Optional[RunConfig] = None) -> Result:
    """Efficiency ratios: K_Delta storage after AMVM against full ACA (on ``cfg``) and BACA against full-ACA wall time (on ``beam``)."""
    res = Result()
    rhs = run_rhs(cfg)
    a = {r["operator"]: r for r in rhs.tables["rhs_storage_aca"]}["KDelta"]
    b = {r["operator"]: r for r in rhs.tables["rhs_storage_amvm"]}["KDelta"]
    rows = [
        {"quantity": "kdelta_lowrank_storage", "adaptive": b["lowrank_mb"], "full_aca": a["lowrank_mb"],
         "ratio": b["lowrank_mb"] / a["lowrank_mb"]},
        {"quantity": "kdelta_total_storage", "adaptive": b["storage_mb"], "full_aca": a["storage_mb"],
         "ratio": b["storage_mb"] / a["storage_mb"]},
    ]
    if beam is not None:
        sol = run_solve(beam)
        ta, tb = sol.timings["aca_total"], sol.timings["baca_total"]
        rows.append({"quantity": "solve_wall_time", "adaptive": tb, "full_aca": ta, "ratio": tb / ta})
        res.tables["solve_summary"] = sol.tables["solve_summary"]
    res.tables["ratios"] = rows
    res.timings = rhs.timings
    return res
