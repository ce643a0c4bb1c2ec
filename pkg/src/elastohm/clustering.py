"""Cluster trees, block-cluster partitions and the sparsity constant."""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "Cluster",
    "ClusterTree",
    "Block",
    "BlockPartition",
    "build_cluster_tree",
    "admissible",
    "build_block_partition",
    "sparsity_constant",
    "box_diameter",
    "box_distance",
]


@dataclass(eq=False)
class Cluster:
    start: int
    stop: int
    box: np.ndarray  # (2, 3) lower / upper corner
    level: int
    children: tuple["Cluster", ...] = ()
    id: int = -1

    @property
    def size(self) -> int:
        return self.stop - self.start

    @property
    def is_leaf(self) -> bool:
        return not self.children


@dataclass(eq=False)
class ClusterTree:
    """Binary tree over an index set.

    ``perm[k]`` is the external index stored at internal position ``k``;
    every cluster owns the contiguous internal range ``[start, stop)``.
    """

    root: Cluster
    perm: np.ndarray
    b_min: int
    nodes: list[Cluster] = field(default_factory=list)

    def indices(self, c: Cluster) -> np.ndarray:
        return self.perm[c.start : c.stop]

    @property
    def inverse_perm(self) -> np.ndarray:
        inv = np.empty_like(self.perm)
        inv[self.perm] = np.arange(len(self.perm))
        return inv

    @property
    def depth(self) -> int:
        return max(c.level for c in self.nodes)

    @property
    def leaves(self) -> list[Cluster]:
        return [c for c in self.nodes if c.is_leaf]

    def __len__(self) -> int:
        return len(self.perm)


def _as_boxes(supports: np.ndarray) -> np.ndarray:
    s = np.asarray(supports, dtype=float)
    if s.ndim == 2 and s.shape[1] == 3:  # points
        return np.stack([s, s], axis=1)
    if s.ndim == 3 and s.shape[1:] == (2, 3):
        return s
    raise ValueError("supports must be (n, 3) points or (n, 2, 3) boxes")


def build_cluster_tree(supports: np.ndarray, b_min: int) -> ClusterTree:
    """Longest-axis median bisection of support boxes.

    The split axis is the longest axis of the cluster's bounding box; indices
    are ordered by the midpoint coordinate along that axis (stable, so ties
    keep their external order) and the lower half gets the extra element.
    """
    boxes = _as_boxes(supports)
    n = len(boxes)
    if n == 0:
        raise ValueError("cannot build a cluster tree over an empty index set")
    if b_min < 1:
        raise ValueError("b_min must be >= 1")
    mids = boxes.mean(axis=1)
    perm = np.arange(n)
    nodes: list[Cluster] = []

    def bbox(idx):
        b = boxes[idx]
        return np.stack([b[:, 0].min(axis=0), b[:, 1].max(axis=0)])

    def build(start, stop, level):
        idx = perm[start:stop]
        c = Cluster(start, stop, bbox(idx), level, id=len(nodes))
        nodes.append(c)
        size = stop - start
        if size <= b_min:
            return c
        centers = mids[idx]
        ext = centers.max(axis=0) - centers.min(axis=0)
        if ext.max() <= 0.0:
            return c  # all midpoints coincide: cannot subdivide
        axis = int(np.argmax(ext))
        order = np.argsort(centers[:, axis], kind="stable")
        perm[start:stop] = idx[order]
        half = (size + 1) // 2
        c.children = (build(start, start + half, level + 1), build(start + half, stop, level + 1))
        return c

    root = build(0, n, 0)
    return ClusterTree(root, perm, b_min, nodes)


def box_diameter(box: np.ndarray) -> float:
    return float(np.linalg.norm(box[1] - box[0]))


def box_distance(a: np.ndarray, b: np.ndarray) -> float:
    gap = np.maximum(0.0, np.maximum(a[0] - b[1], b[0] - a[1]))
    return float(np.linalg.norm(gap))


def admissible(t: Cluster | np.ndarray, s: Cluster | np.ndarray, beta: float) -> bool:
    """``min(diam t, diam s) < beta * dist(t, s)`` evaluated on bounding boxes."""
    if beta <= 0:
        raise ValueError("beta must be positive")
    bt = t.box if isinstance(t, Cluster) else np.asarray(t)
    bs = s.box if isinstance(s, Cluster) else np.asarray(s)
    return min(box_diameter(bt), box_diameter(bs)) < beta * box_distance(bt, bs)


@dataclass(eq=False)
class Block:
    row: Cluster
    col: Cluster
    admissible: bool
    level: int
    index: int = -1


@dataclass(eq=False)
class BlockPartition:
    rows: ClusterTree
    cols: ClusterTree
    beta: float
    blocks: list[Block]

    @property
    def admissible_blocks(self) -> list[Block]:
        return [b for b in self.blocks if b.admissible]

    @property
    def nonadmissible_blocks(self) -> list[Block]:
        return [b for b in self.blocks if not b.admissible]

    @property
    def shape(self) -> tuple[int, int]:
        return len(self.rows), len(self.cols)

    @property
    def depth(self) -> int:
        return max(self.rows.depth, self.cols.depth) + 1

    def row_indices(self, b: Block) -> np.ndarray:
        return self.rows.indices(b.row)

    def col_indices(self, b: Block) -> np.ndarray:
        return self.cols.indices(b.col)

    @property
    def sparsity_constant(self) -> int:
        return sparsity_constant(self)

    def to_json(self) -> str:
        return json.dumps(
            {
                "shape": list(self.shape),
                "beta": self.beta,
                "sparsity_constant": self.sparsity_constant,
                "blocks": [
                    {
                        "rows": [int(b.row.start), int(b.row.stop)],
                        "cols": [int(b.col.start), int(b.col.stop)],
                        "admissible": b.admissible,
                        "level": b.level,
                    }
                    for b in self.blocks
                ],
            },
            indent=1,
        )


def build_block_partition(rows: ClusterTree, cols: ClusterTree, beta: float) -> BlockPartition:
    """Leaves of the block-cluster tree obtained by recursive subdivision."""
    blocks: list[Block] = []
    stack = [(rows.root, cols.root, 0)]
    while stack:
        t, s, level = stack.pop()
        if admissible(t, s, beta):
            blocks.append(Block(t, s, True, level))
        elif t.is_leaf or s.is_leaf:
            blocks.append(Block(t, s, False, level))
        else:
            for tc in reversed(t.children):
                for sc in reversed(s.children):
                    stack.append((tc, sc, level + 1))
    for k, b in enumerate(blocks):
        b.index = k
    return BlockPartition(rows, cols, beta, blocks)


def sparsity_constant(p: BlockPartition) -> int:
    """Maximum number of blocks sharing one row cluster or one column cluster."""
    row_count: dict[int, int] = {}
    col_count: dict[int, int] = {}
    for b in p.blocks:
        row_count[b.row.id] = row_count.get(b.row.id, 0) + 1
        col_count[b.col.id] = col_count.get(b.col.id, 0) + 1
    return max(max(row_count.values()), max(col_count.values()))


def blocks_per_row(p: BlockPartition) -> np.ndarray:
    """Number of blocks covering each external row index (diagnostic)."""
    count = np.zeros(len(p.rows), dtype=int)
    for b in p.blocks:
        count[p.row_indices(b)] += 1
    return count
