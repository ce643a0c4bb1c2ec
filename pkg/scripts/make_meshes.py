"""Regenerate the shipped OFF meshes under src/elastohm/data/meshes.

Voxel solids are triangulated on a uniform lattice so that all boundary
faces conform.  Usage: ``python scripts/make_meshes.py``.
"""
from __future__ import annotations

from pathlib import Path

import numpy as np

OUT = Path(__file__).resolve().parents[1] / "src" / "elastohm" / "data" / "meshes"


def voxel_surface(voxels, origin, cell, sub):
    """Closed surface of a union of unit voxels, each face split into sub x sub squares."""
    voxels = {tuple(v) for v in voxels}
    index: dict[tuple[int, int, int], int] = {}
    verts: list[tuple[int, int, int]] = []
    tris: list[tuple[int, int, int]] = []

    def vid(p):
        if p not in index:
            index[p] = len(verts)
            verts.append(p)
        return index[p]

    for v in sorted(voxels):
        for axis in range(3):
            for side in (0, 1):
                nb = list(v)
                nb[axis] += 1 if side else -1
                if tuple(nb) in voxels:
                    continue
                # face lies at coordinate v[axis] + side, spans the other two axes
                a, b = [d for d in range(3) if d != axis]
                for i in range(sub):
                    for j in range(sub):
                        quad = []
                        for di, dj in ((0, 0), (1, 0), (1, 1), (0, 1)):
                            p = [0, 0, 0]
                            p[axis] = (v[axis] + side) * sub
                            p[a] = v[a] * sub + i + di
                            p[b] = v[b] * sub + j + dj
                            quad.append(vid(tuple(p)))
                        # orientation: (a, b, axis) right-handed => normal +axis
                        outward_positive = side == 1
                        right_handed = (b - a) % 3 == 1
                        q = quad if outward_positive == right_handed else quad[::-1]
                        # alternate diagonals for a more isotropic pattern
                        if (i + j) % 2 == 0:
                            tris += [(q[0], q[1], q[2]), (q[0], q[2], q[3])]
                        else:
                            tris += [(q[0], q[1], q[3]), (q[1], q[2], q[3])]
    pts = np.array(verts, dtype=float) * (cell / sub) + np.asarray(origin, dtype=float)
    return pts, np.array(tris, dtype=np.int64)


def write_off(path, vertices, triangles):
    lines = ["OFF", f"{len(vertices)} {len(triangles)} 0"]
    lines += [f"{x:.17g} {y:.17g} {z:.17g}" for x, y, z in vertices]
    lines += [f"3 {a} {b} {c}" for a, b, c in triangles]
    Path(path).write_text("\n".join(lines) + "\n")


def tetrahedron():
    s = 1.0 / np.sqrt(2.0)
    v = np.array([[1, 0, -s], [-1, 0, -s], [0, 1, s], [0, -1, s]], dtype=float)
    t = np.array([[0, 1, 2], [0, 3, 1], [0, 2, 3], [1, 3, 2]])
    c = v.mean(axis=0)
    for k, (a, b, d) in enumerate(t):
        n = np.cross(v[b] - v[a], v[d] - v[a])
        if np.dot(n, v[a] - c) < 0:
            t[k] = [a, d, b]
    return v, t


def double_t_voxels():
    # cross-section in (y, z) on a 4 x 4 grid of 0.5 cells: full flanges, web of width 1
    section = [(y, z) for z in (0, 3) for y in range(4)] + [(y, z) for z in (1, 2) for y in (1, 2)]
    return [(x, y, z) for x in range(4) for (y, z) in section]


def main():
    OUT.mkdir(parents=True, exist_ok=True)
    for n, name in ((9, "cube_488"), (18, "cube_1946"), (36, "cube_7778")):
        v, t = voxel_surface([(0, 0, 0)], origin=(-1, -1, -1), cell=2.0, sub=n)
        write_off(OUT / f"{name}.off", v, t)
        print(name, len(v), len(t))
    v, t = tetrahedron()
    write_off(OUT / "tetrahedron.off", v, t)
    v, t = voxel_surface(double_t_voxels(), origin=(0, -1, -1), cell=0.5, sub=2)
    write_off(OUT / "double_t_beam.off", v, t)
    print("double_t_beam", len(v), len(t))


if __name__ == "__main__":
    main()
