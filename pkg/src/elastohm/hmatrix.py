"""H-matrices with a current and a look-ahead approximation per block.

Every admissible block stores a single resumable ACA factor holding the
look-ahead approximation; the current approximation is the prefix formed by
its first ``k_cur`` crosses.  Promoting a block (adopting its look-ahead)
moves ``k_cur`` to the factor rank and extends the factor by the look-ahead
depth, so no cross is ever recomputed.

Matrix-vector products go through a compiled form: for each mode the
low-rank crosses are gathered into two sparse "stack" matrices and the dense
blocks into one sparse near-field matrix.  The compiled form is rebuilt lazily
after refinement.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Iterable, Optional

import numpy as np
import scipy.sparse as sp

from .aca import EntryOracle, LowRankFactor, aca_extend, aca_fixed_rank, aca_run
from .clustering import BlockPartition

logger = logging.getLogger(__name__)

__all__ = ["HMatrix", "assemble", "MODES"]

MODES = ("current", "lookahead", "tail")


@dataclass
class _Compiled:
    U: sp.csr_matrix  # rows x R
    Vt: sp.csr_matrix  # R x cols
    near: Optional[sp.csr_matrix]
    block_of_col: np.ndarray  # owning block index of each stacked cross


class HMatrix:
    """Low-rank and dense leaves over a block partition.

    Use :func:`assemble` to build one.  ``lookahead`` is the number of ACA
    steps the look-ahead approximation runs ahead of the current one.
    """

    def __init__(self, partition: BlockPartition, oracle: EntryOracle, lookahead: int, name: str = ""):
        if lookahead < 0:
            raise ValueError("lookahead must be >= 0")
        self.partition = partition
        self.oracle = oracle
        self.lookahead = int(lookahead)
        self.name = name
        self.shape = partition.shape
        n_blocks = len(partition.blocks)
        self.factors: dict[int, LowRankFactor] = {}
        self.dense: dict[int, np.ndarray] = {}
        self.k_cur = np.zeros(n_blocks, dtype=np.int64)
        self.max_rank: Optional[int] = None
        self.refinements = 0
        self.version = 0
        self._compiled: dict[str, _Compiled] = {}
        self._near: Optional[sp.csr_matrix] = None

    # ----------------------------------------------------------- structure

    @property
    def blocks(self):
        return self.partition.blocks

    def rows_of(self, b) -> np.ndarray:
        return self.partition.row_indices(b)

    def cols_of(self, b) -> np.ndarray:
        return self.partition.col_indices(b)

    def rank(self, index: int, mode: str = "current") -> int:
        f = self.factors.get(index)
        if f is None:
            return 0
        return int(self.k_cur[index]) if mode == "current" else f.k

    def exhausted(self, index: int) -> bool:
        """True when current and look-ahead coincide and cannot move further."""
        f = self.factors.get(index)
        if f is None:
            return True
        return f.done and self.k_cur[index] == f.k

    def has_tail(self, index: int) -> bool:
        f = self.factors.get(index)
        return f is not None and f.k > self.k_cur[index]

    @property
    def aca_steps(self) -> np.ndarray:
        """Rows examined by ACA in each block (zero for dense blocks)."""
        out = np.zeros(len(self.blocks), dtype=np.int64)
        for i, f in self.factors.items():
            out[i] = f.steps
        return out

    # ---------------------------------------------------------- refinement

    def refine(self, indices: Iterable[int]) -> list[int]:
        """Adopt the look-ahead on the given blocks and rebuild their look-ahead.

        Returns the indices that actually changed.
        """
        changed = []
        for i in sorted(set(int(i) for i in indices)):
            f = self.factors.get(i)
            if f is None:
                continue
            before = (int(self.k_cur[i]), f.k)
            self.k_cur[i] = f.k
            aca_extend(f, self.lookahead, self.oracle, self.max_rank)
            if (int(self.k_cur[i]), f.k) != before:
                changed.append(i)
        if changed:
            self.refinements += len(changed)
            self.version += 1
            self._compiled.clear()
        return changed

    def refine_all(self) -> list[int]:
        return self.refine(self.factors.keys())

    # -------------------------------------------------------------- matvec

    def _compile(self, mode: str) -> _Compiled:
        if mode not in MODES:
            raise ValueError(f"unknown mode {mode!r}")
        hit = self._compiled.get(mode)
        if hit is not None:
            return hit
        m, n = self.shape
        u_rows, u_cols, u_vals = [], [], []
        v_rows, v_cols, v_vals = [], [], []
        owner = []
        r = 0
        for i, f in self.factors.items():
            lo = int(self.k_cur[i]) if mode == "tail" else 0
            hi = int(self.k_cur[i]) if mode == "current" else f.k
            k = hi - lo
            if k <= 0:
                continue
            rows, cols = f.rows, f.cols
            cidx = np.arange(r, r + k)
            u_rows.append(np.repeat(rows, k))
            u_cols.append(np.tile(cidx, len(rows)))
            u_vals.append(f.U[:, lo:hi].ravel())
            v_rows.append(np.repeat(cidx, len(cols)))
            v_cols.append(np.tile(cols, k))
            v_vals.append(f.V[:, lo:hi].T.ravel())
            owner.append(np.full(k, i))
            r += k
        cat = lambda a, dt=float: np.concatenate(a) if a else np.zeros(0, dtype=dt)  # noqa: E731
        U = sp.csr_matrix((cat(u_vals), (cat(u_rows, np.int64), cat(u_cols, np.int64))), shape=(m, r))
        Vt = sp.csr_matrix((cat(v_vals), (cat(v_rows, np.int64), cat(v_cols, np.int64))), shape=(r, n))
        near = self._near_field() if mode != "tail" else None
        c = _Compiled(U, Vt, near, cat(owner, np.int64))
        self._compiled[mode] = c
        return c

    def _near_field(self) -> Optional[sp.csr_matrix]:
        # dense blocks never change, so this survives refinement
        if self._near is None and self.dense:
            rr, cc, vv = [], [], []
            for i, a in self.dense.items():
                b = self.blocks[i]
                rows, cols = self.rows_of(b), self.cols_of(b)
                rr.append(np.repeat(rows, len(cols)))
                cc.append(np.tile(cols, len(rows)))
                vv.append(a.ravel())
            m, n = self.shape
            self._near = sp.csr_matrix((np.concatenate(vv), (np.concatenate(rr), np.concatenate(cc))), shape=(m, n))
        return self._near

    def matvec(self, x: np.ndarray, mode: str = "current") -> np.ndarray:
        """``A x`` for a vector or a column stack ``x`` (n, m)."""
        x = np.asarray(x, dtype=float)
        if x.shape[0] != self.shape[1]:
            raise ValueError(f"{self.name or 'HMatrix'}: expected {self.shape[1]} rows, got {x.shape[0]}")
        c = self._compile(mode)
        y = c.U @ (c.Vt @ x)
        if c.near is not None:
            y = y + c.near @ x
        return y

    def rmatvec(self, x: np.ndarray, mode: str = "current") -> np.ndarray:
        """``A^T x``."""
        x = np.asarray(x, dtype=float)
        if x.shape[0] != self.shape[0]:
            raise ValueError(f"{self.name or 'HMatrix'}: expected {self.shape[0]} rows, got {x.shape[0]}")
        c = self._compile(mode)
        y = c.Vt.T @ (c.U.T @ x)
        if c.near is not None:
            y = y + c.near.T @ x
        return y

    def tail_stacks(self) -> _Compiled:
        """Sparse stacks of all look-ahead tails with their owning blocks."""
        return self._compile("tail")

    def densify(self, mode: str = "current") -> np.ndarray:
        return self.matvec(np.eye(self.shape[1]), mode)

    # ------------------------------------------------------------- storage

    def storage_bytes(self, mode: str = "current") -> int:
        """Bytes of the factor and dense payloads in the given mode."""
        total = 0
        for i, f in self.factors.items():
            k = int(self.k_cur[i]) if mode == "current" else f.k
            if mode == "tail":
                k = f.k - int(self.k_cur[i])
            total += 8 * k * (len(f.rows) + len(f.cols))
        if mode != "tail":
            total += sum(8 * a.size for a in self.dense.values())
        return total

    def dense_bytes(self) -> int:
        return 8 * self.shape[0] * self.shape[1]

    def rank_summary(self) -> dict:
        ranks = [int(self.k_cur[i]) for i in self.factors]
        return {
            "admissible": len(self.factors),
            "dense": len(self.dense),
            "max_rank": max(ranks, default=0),
            "mean_rank": float(np.mean(ranks)) if ranks else 0.0,
        }


def assemble(
    oracle: EntryOracle,
    partition: BlockPartition,
    eps: Optional[float] = None,
    initial_rank: Optional[int] = None,
    lookahead: int = 2,
    beta: Optional[float] = None,
    max_rank: Optional[int] = None,
    name: str = "",
) -> HMatrix:
    """Build an :class:`HMatrix`.

    Coarse mode (``initial_rank`` given): every admissible block gets exactly
    ``initial_rank`` crosses unless it is exhausted earlier.  Full mode
    (``eps`` given): ACA runs until its stopping rule holds.  In both modes the
    look-ahead is ``lookahead`` further crosses.  ``beta`` overrides the
    partition's admissibility parameter inside the stopping rule.
    """
    if (eps is None) == (initial_rank is None):
        raise ValueError("give exactly one of eps (full mode) or initial_rank (coarse mode)")
    if tuple(oracle.shape) != partition.shape:
        raise ValueError(f"oracle shape {oracle.shape} does not match partition {partition.shape}")
    h = HMatrix(partition, oracle, lookahead, name)
    h.max_rank = max_rank
    beta = partition.beta if beta is None else beta
    for b in partition.blocks:
        rows, cols = partition.row_indices(b), partition.col_indices(b)
        if not b.admissible:
            h.dense[b.index] = oracle.block(rows, cols)
            continue
        if initial_rank is not None:
            f = aca_fixed_rank(oracle, rows, cols, initial_rank + lookahead, max_rank)
            h.k_cur[b.index] = min(initial_rank, f.k)
        else:
            f = aca_run(oracle, rows, cols, eps, beta, max_rank)
            h.k_cur[b.index] = f.k
            aca_extend(f, lookahead, oracle, max_rank)
        h.factors[b.index] = f
    logger.debug("assembled %s: %s", name or "HMatrix", h.rank_summary())
    return h
