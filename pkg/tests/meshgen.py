"""Small closed meshes for tests, built on the generator in ``scripts/``."""
from __future__ import annotations

import importlib.util
from pathlib import Path

import numpy as np

_spec = importlib.util.spec_from_file_location(
    "_make_meshes", Path(__file__).resolve().parents[1] / "scripts" / "make_meshes.py")
_mod = importlib.util.module_from_spec(_spec)
_spec.loader.exec_module(_mod)

voxel_surface = _mod.voxel_surface


def box(nx: int = 1, ny: int = 1, nz: int = 1, sub: int = 1, cell: float = 1.0, origin=(0.0, 0.0, 0.0)):
    """Vertices and triangles of an ``nx x ny x nz`` voxel box."""
    vox = [(i, j, k) for i in range(nx) for j in range(ny) for k in range(nz)]
    return voxel_surface(vox, origin, cell, sub)


def octahedron(scale: float = 1.0):
    v = scale * np.array([[1, 0, 0], [-1, 0, 0], [0, 1, 0], [0, -1, 0], [0, 0, 1], [0, 0, -1]], dtype=float)
    t = []
    for a in (0, 1):
        for b in (2, 3):
            for c in (4, 5):
                tri = [a, b, c]
                p = v[tri]
                if np.dot(np.cross(p[1] - p[0], p[2] - p[0]), p.mean(axis=0)) < 0:
                    tri = [a, c, b]
                t.append(tri)
    return v, np.array(t)


def point_problem(n: int = 300, seed: int = 0, b_min: int = 12, beta: float = 0.8):
    """Dense smooth kernel matrix on points of the unit sphere and its block partition."""
    from elastohm.clustering import build_block_partition, build_cluster_tree

    rng = np.random.default_rng(seed)
    p = rng.standard_normal((n, 3))
    p /= np.linalg.norm(p, axis=1)[:, None]
    d = np.linalg.norm(p[:, None] - p[None], axis=2)
    a = 1.0 / (d + 0.05)
    tree = build_cluster_tree(p, b_min)
    return a, build_block_partition(tree, tree, beta)
