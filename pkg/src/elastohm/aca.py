"""Resumable adaptive cross approximation of a single matrix block."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

__all__ = [
    "EntryOracle",
    "DenseOracle",
    "LowRankFactor",
    "aca_run",
    "aca_extend",
    "increment_matvec",
    "stop_constant",
]

VANISH_TOL = 1e-14


class EntryOracle:
    """Entry access for a matrix given a submatrix callable.

    ``block_fn(rows, cols)`` returns the dense submatrix for two arrays of
    (external) indices.  Queries must be deterministic.
    """

    def __init__(self, block_fn: Callable[[np.ndarray, np.ndarray], np.ndarray], shape: tuple[int, int]):
        self._fn = block_fn
        self.shape = tuple(shape)
        self.calls = 0
        self.entries = 0

    def block(self, rows, cols) -> np.ndarray:
        rows = np.atleast_1d(np.asarray(rows, dtype=np.int64))
        cols = np.atleast_1d(np.asarray(cols, dtype=np.int64))
        self.calls += 1
        self.entries += len(rows) * len(cols)
        out = np.asarray(self._fn(rows, cols), dtype=float)
        if out.shape != (len(rows), len(cols)):
            raise ValueError(f"oracle returned shape {out.shape}, expected {(len(rows), len(cols))}")
        return out

    def entry(self, i: int, j: int) -> float:
        return float(self.block([i], [j])[0, 0])

    def row(self, i: int, cols) -> np.ndarray:
        return self.block([i], cols)[0]

    def col(self, rows, j: int) -> np.ndarray:
        return self.block(rows, [j])[:, 0]


class DenseOracle(EntryOracle):
    """Oracle backed by an explicit array (tests and small problems)."""

    def __init__(self, a: np.ndarray):
        a = np.asarray(a, dtype=float)
        super().__init__(lambda r, c: a[np.ix_(r, c)], a.shape)
        self.array = a


def stop_constant(eps: float, beta: float) -> float:
    """Right-hand factor of the stopping rule, ``eps (1 - beta) / (1 + eps)``."""
    return eps * (1.0 - beta) / (1.0 + eps)


@dataclass
class LowRankFactor:
    """State of an ACA run on one block; ``U[:, :k] @ V[:, :k].T`` is S_k.

    ``rows``/``cols`` are the external indices of the block.  ``consumed``
    marks rows in Z.  A candidate cross that failed the stopping test is kept
    in ``pending`` so that resuming never recomputes it.
    """

    rows: np.ndarray
    cols: np.ndarray
    U: np.ndarray
    V: np.ndarray
    k: int = 0
    pivots: list[tuple[int, int]] = field(default_factory=list)
    consumed: np.ndarray = None
    frob_sq: float = 0.0
    exhausted: bool = False
    capped: bool = False
    next_row: int = -1
    pending: Optional[tuple] = None
    steps: int = 0  # rows examined, including vanishing ones

    @classmethod
    def empty(cls, rows, cols, capacity: int = 4) -> "LowRankFactor":
        rows = np.asarray(rows, dtype=np.int64)
        cols = np.asarray(cols, dtype=np.int64)
        cap = max(1, min(capacity, len(rows), len(cols)))
        return cls(
            rows,
            cols,
            np.zeros((len(rows), cap)),
            np.zeros((len(cols), cap)),
            consumed=np.zeros(len(rows), dtype=bool),
        )

    @property
    def shape(self) -> tuple[int, int]:
        return len(self.rows), len(self.cols)

    @property
    def rank(self) -> int:
        return self.k

    @property
    def Z(self) -> set[int]:
        return set(np.flatnonzero(self.consumed).tolist())

    @property
    def done(self) -> bool:
        return self.exhausted or self.capped

    def u(self, lo: int = 0, hi: Optional[int] = None) -> np.ndarray:
        return self.U[:, lo : self.k if hi is None else hi]

    def v(self, lo: int = 0, hi: Optional[int] = None) -> np.ndarray:
        return self.V[:, lo : self.k if hi is None else hi]

    def dense(self, k: Optional[int] = None) -> np.ndarray:
        k = self.k if k is None else k
        return self.U[:, :k] @ self.V[:, :k].T

    def nbytes(self, k: Optional[int] = None) -> int:
        k = self.k if k is None else k
        return 8 * k * (len(self.rows) + len(self.cols))

    def prefix(self, k: int) -> "LowRankFactor":
        """Independent copy truncated to the first ``k`` crosses."""
        if k > self.k:
            raise ValueError("prefix longer than the factor")
        f = LowRankFactor.empty(self.rows, self.cols, max(k, 1))
        f.U[:, :k] = self.U[:, :k]
        f.V[:, :k] = self.V[:, :k]
        f.k = k
        f.pivots = list(self.pivots[:k])
        for i, _ in f.pivots:
            f.consumed[i] = True
        f.frob_sq = float(np.sum((f.U[:, :k].T @ f.U[:, :k]) * (f.V[:, :k].T @ f.V[:, :k])))
        return f

    def copy(self) -> "LowRankFactor":
        f = LowRankFactor(
            self.rows,
            self.cols,
            self.U.copy(),
            self.V.copy(),
            self.k,
            list(self.pivots),
            self.consumed.copy(),
            self.frob_sq,
            self.exhausted,
            self.capped,
            self.next_row,
            self.pending,
            self.steps,
        )
        return f

    # ------------------------------------------------------------ internals

    def _grow(self):
        cap = self.U.shape[1]
        new = min(2 * cap, min(self.shape))
        if new <= cap:
            return
        U = np.zeros((len(self.rows), new))
        V = np.zeros((len(self.cols), new))
        U[:, :cap] = self.U
        V[:, :cap] = self.V
        self.U, self.V = U, V

    def _choose_row(self) -> int:
        if self.next_row >= 0 and not self.consumed[self.next_row]:
            return self.next_row
        free = np.flatnonzero(~self.consumed)
        return int(free[0])

    def _candidate(self, oracle: EntryOracle):
        """Next non-vanishing cross, consuming vanishing rows on the way.

        Returns ``None`` when every row has been consumed.
        """
        if self.pending is not None:
            return self.pending
        while not self.consumed.all():
            i = self._choose_row()
            row = oracle.row(self.rows[i], self.cols)
            vt = row - self.U[i, : self.k] @ self.V[:, : self.k].T
            self.steps += 1
            j = int(np.argmax(np.abs(vt)))
            scale = np.abs(row).max()
            if np.abs(vt[j]) <= VANISH_TOL * scale or vt[j] == 0.0:
                # vanishing residual row: consume and move on
                self.consumed[i] = True
                self.next_row = -1
                continue
            v = vt / vt[j]
            col = oracle.col(self.rows, self.cols[j])
            u = col - self.U[:, : self.k] @ self.V[j, : self.k]
            self.pending = (i, j, u, v)
            return self.pending
        self.exhausted = True
        return None

    def _commit(self):
        i, j, u, v = self.pending
        if self.k == self.U.shape[1]:
            self._grow()
        k = self.k
        cross = 2.0 * float(np.dot(self.U[:, :k].T @ u, self.V[:, :k].T @ v)) if k else 0.0
        self.frob_sq += cross + float(u @ u) * float(v @ v)
        self.U[:, k] = u
        self.V[:, k] = v
        self.k = k + 1
        self.pivots.append((i, j))
        self.consumed[i] = True
        self.pending = None
        au = np.abs(u)
        au[self.consumed] = -1.0
        self.next_row = int(np.argmax(au)) if not self.consumed.all() else -1
        if self.consumed.all():
            self.exhausted = True


def _check_rank(factor: LowRankFactor, max_rank: Optional[int]) -> int:
    lim = min(factor.shape)
    return lim if max_rank is None else min(max_rank, lim)


def aca_run(
    oracle: EntryOracle,
    rows,
    cols,
    eps: float,
    beta: float,
    max_rank: Optional[int] = None,
    start: Optional[LowRankFactor] = None,
) -> LowRankFactor:
    """Run ACA on the block ``rows x cols`` until the stopping rule holds.

    The rule ``|u| |v| <= eps (1 - beta) / (1 + eps) |S_k|_F`` is tested on the
    candidate cross before it is appended.  The run also ends when every row
    is consumed (``exhausted``) or the rank reaches ``max_rank`` (``capped``).
    ``start`` resumes a previous run in place.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    if not 0 < beta < 1:
        raise ValueError("beta must lie in (0, 1)")
    f = start if start is not None else LowRankFactor.empty(rows, cols)
    limit = _check_rank(f, max_rank)
    c = stop_constant(eps, beta)
    while not f.exhausted:
        if f.k >= limit:
            f.capped = True
            break
        cand = f._candidate(oracle)
        if cand is None:
            break
        _, _, u, v = cand
        if f.k > 0 and np.linalg.norm(u) * np.linalg.norm(v) <= c * np.sqrt(max(f.frob_sq, 0.0)):
            break
        f._commit()
    return f


def aca_extend(
    factor: LowRankFactor,
    steps: int,
    oracle: EntryOracle,
    max_rank: Optional[int] = None,
) -> LowRankFactor:
    """Append up to ``steps`` further crosses, ignoring the stopping rule.

    Pivots are chosen exactly as a fresh run would choose them, so extending
    in several calls or at once gives the same factor.  Exhausted or capped
    factors are returned unchanged.
    """
    limit = _check_rank(factor, max_rank)
    for _ in range(steps):
        if factor.exhausted:
            break
        if factor.k >= limit:
            factor.capped = True
            break
        if factor._candidate(oracle) is None:
            break
        factor._commit()
    return factor


def aca_fixed_rank(oracle: EntryOracle, rows, cols, rank: int, max_rank: Optional[int] = None) -> LowRankFactor:
    """Coarse start: exactly ``rank`` crosses unless the block is exhausted first."""
    f = LowRankFactor.empty(rows, cols, max(rank, 1))
    return aca_extend(f, rank, oracle, max_rank)


def increment_matvec(lo, hi, x: np.ndarray, k_lo: Optional[int] = None, k_hi: Optional[int] = None) -> np.ndarray:
    """``(S_hi - S_lo) x`` from the tail crosses only.

    ``lo`` and ``hi`` are factors with a shared pivot prefix; alternatively
    pass one factor twice with explicit ranks ``k_lo <= k_hi``.
    """
    a = lo.k if k_lo is None else k_lo
    b = hi.k if k_hi is None else k_hi
    if lo is not hi:
        if hi.pivots[: lo.k] != lo.pivots or a > b:
            raise ValueError("factors are not prefix-related")
    if b == a:
        return np.zeros(hi.shape[0])
    return hi.U[:, a:b] @ (hi.V[:, a:b].T @ x)
