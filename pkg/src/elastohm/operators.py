"""Operator expressions over H-matrix, sparse and dense leaves.

An expression is a tree of :class:`Leaf`, :class:`Scale`, :class:`Sum`,
:class:`Compose`, :class:`Transpose` and :class:`BlockMatrix` nodes.  For
evaluation it is flattened into a :class:`LinearForm`:

    E = sum_o L_o A_o^{(T)} R_o + C

where each ``A_o`` is an H-matrix leaf, ``L_o`` and ``R_o`` are sparse and
``C`` collects all sparse and dense leaves.  The expressions built for the
elastic operators are linear in their H-matrix leaves (no products of two
H-matrices), which is what the flattening requires.

The flat form drives fast matrix-vector products (each leaf is applied once
to a stack of vectors), densification, and the per-block look-ahead
contributions used by the error estimators.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence, Union

import numpy as np
import scipy.sparse as sp

from .hmatrix import HMatrix

__all__ = [
    "Expr",
    "Leaf",
    "Scale",
    "Sum",
    "Compose",
    "Transpose",
    "BlockMatrix",
    "block2x2",
    "selection",
    "restrict",
    "LinearForm",
    "Occurrence",
    "TailContributions",
    "densify",
    "DensifyCapError",
    "DENSIFY_CAP",
]

DENSIFY_CAP = 16_000_000  # entries (128 MB of float64)


class DensifyCapError(RuntimeError):
    pass


def _csr(a) -> sp.csr_matrix:
    return a.tocsr() if sp.issparse(a) else sp.csr_matrix(a)


# ------------------------------------------------------------ expressions


class Expr:
    """Base class; subclasses define ``shape`` and ``_linearize``."""

    name: str = ""
    shape: tuple[int, int]

    _form: Optional["LinearForm"] = None

    @property
    def form(self) -> "LinearForm":
        if self._form is None:
            self._form = self._linearize().simplified()
        return self._form

    def _linearize(self) -> "LinearForm":  # pragma: no cover - abstract
        raise NotImplementedError

    def matvec(self, x: np.ndarray, mode: str = "current") -> np.ndarray:
        return self.form.matvec(x, mode)

    def __matmul__(self, other):
        if isinstance(other, Expr):
            return Compose([self, other])
        return self.matvec(other)

    def __add__(self, other: "Expr") -> "Expr":
        return Sum([self, other])

    def __sub__(self, other: "Expr") -> "Expr":
        return Sum([self, Scale(-1.0, other)])

    def __neg__(self) -> "Expr":
        return Scale(-1.0, self)

    def __rmul__(self, c: float) -> "Expr":
        return Scale(float(c), self)

    @property
    def T(self) -> "Expr":
        return Transpose(self)

    def leaves(self) -> list[HMatrix]:
        seen: dict[int, HMatrix] = {}
        for o in self.form.occ:
            seen.setdefault(id(o.leaf), o.leaf)
        return list(seen.values())


class Leaf(Expr):
    """An H-matrix, a sparse matrix or a dense array."""

    def __init__(self, payload: Union[HMatrix, np.ndarray, sp.spmatrix], name: str = ""):
        if isinstance(payload, HMatrix):
            self.payload = payload
            self.shape = payload.shape
            self.name = name or payload.name
        else:
            a = payload if sp.issparse(payload) else np.asarray(payload, dtype=float)
            if a.ndim != 2:
                raise ValueError("leaf must be two-dimensional")
            self.payload = a
            self.shape = a.shape
            self.name = name

    @property
    def is_adaptive(self) -> bool:
        return isinstance(self.payload, HMatrix)

    def _linearize(self):
        m, n = self.shape
        if self.is_adaptive:
            occ = Occurrence(self.payload, sp.identity(m, format="csr"), sp.identity(n, format="csr"), False, "")
            return LinearForm(self.shape, [occ], sp.csr_matrix((m, n)))
        return LinearForm(self.shape, [], _csr(self.payload))


class Scale(Expr):
    def __init__(self, c: float, child: Expr, name: str = ""):
        self.c = float(c)
        self.child = child
        self.shape = child.shape
        self.name = name

    def _linearize(self):
        return self.child.form.scaled(self.c)


class Sum(Expr):
    def __init__(self, children: Sequence[Expr], name: str = ""):
        if not children:
            raise ValueError("empty sum")
        shape = children[0].shape
        for c in children:
            if c.shape != shape:
                raise ValueError(f"sum of mismatched shapes {shape} and {c.shape}")
        self.children = list(children)
        self.shape = shape
        self.name = name

    def _linearize(self):
        out = self.children[0].form
        for c in self.children[1:]:
            out = out.plus(c.form)
        return out


class Compose(Expr):
    """Product ``children[0] @ children[1] @ ...`` (applied right to left)."""

    def __init__(self, children: Sequence[Expr], name: str = ""):
        if not children:
            raise ValueError("empty composition")
        for a, b in zip(children[:-1], children[1:]):
            if a.shape[1] != b.shape[0]:
                raise ValueError(f"cannot compose shapes {a.shape} and {b.shape}")
        self.children = list(children)
        self.shape = (children[0].shape[0], children[-1].shape[1])
        self.name = name

    def _linearize(self):
        out = self.children[0].form
        for c in self.children[1:]:
            out = out.times(c.form)
        return out


class Transpose(Expr):
    def __init__(self, child: Expr, name: str = ""):
        self.child = child
        self.shape = (child.shape[1], child.shape[0])
        self.name = name

    def _linearize(self):
        return self.child.form.transposed()


class BlockMatrix(Expr):
    """Grid of sub-expressions with explicit signs; ``None`` entries are zero.

    ``tags`` label the occurrences coming from each grid cell; the estimators
    use them to attribute block contributions to operator families.
    """

    def __init__(self, grid, signs=None, tags=None, name: str = ""):
        grid = [list(r) for r in grid]
        nr, nc = len(grid), len(grid[0])
        signs = signs or [[1.0] * nc for _ in range(nr)]
        heights = [None] * nr
        widths = [None] * nc
        for i in range(nr):
            for j in range(nc):
                e = grid[i][j]
                if e is None:
                    continue
                for lst, k, v in ((heights, i, e.shape[0]), (widths, j, e.shape[1])):
                    if lst[k] is None:
                        lst[k] = v
                    elif lst[k] != v:
                        raise ValueError(f"block ({i}, {j}) has a conflicting shape {e.shape}")
        if any(h is None for h in heights) or any(w is None for w in widths):
            raise ValueError("every block row and column needs at least one non-empty entry")
        self.grid, self.signs, self.tags = grid, signs, tags
        self.row_offsets = np.concatenate([[0], np.cumsum(heights)])
        self.col_offsets = np.concatenate([[0], np.cumsum(widths)])
        self.shape = (int(self.row_offsets[-1]), int(self.col_offsets[-1]))
        self.name = name

    def _linearize(self):
        m, n = self.shape
        out = LinearForm(self.shape, [], sp.csr_matrix((m, n)))
        for i, row in enumerate(self.grid):
            for j, e in enumerate(row):
                if e is None:
                    continue
                h, w = e.shape
                P = sp.csr_matrix((np.ones(h), (self.row_offsets[i] + np.arange(h), np.arange(h))), shape=(m, h))
                Q = sp.csr_matrix((np.ones(w), (np.arange(w), self.col_offsets[j] + np.arange(w))), shape=(w, n))
                f = e.form.scaled(self.signs[i][j]).embedded(P, Q)
                if self.tags is not None:
                    f = f.tagged(self.tags[i][j])
                out = out.plus(f)
        return out


def block2x2(a11, a12, a21, a22, signs=((1, 1), (1, 1)), tags=None, name: str = "") -> BlockMatrix:
    return BlockMatrix([[a11, a12], [a21, a22]], [list(map(float, s)) for s in signs], tags, name)


def selection(indices: np.ndarray, n: int) -> sp.csr_matrix:
    """0/1 matrix picking ``indices`` out of a length-``n`` vector."""
    indices = np.asarray(indices, dtype=np.int64)
    return sp.csr_matrix((np.ones(len(indices)), (np.arange(len(indices)), indices)), shape=(len(indices), n))


def restrict(expr: Expr, rows: Optional[np.ndarray], cols: Optional[np.ndarray], name: str = "") -> Expr:
    """``expr[rows, cols]`` as a composition with selection maps (``None`` keeps all)."""
    parts = []
    if rows is not None:
        if len(rows) == 0:
            raise ValueError("empty row subset")
        parts.append(Leaf(selection(rows, expr.shape[0])))
    parts.append(expr)
    if cols is not None:
        if len(cols) == 0:
            raise ValueError("empty column subset")
        parts.append(Leaf(selection(cols, expr.shape[1]).T.tocsr()))
    return Compose(parts, name=name) if len(parts) > 1 else expr


def densify(expr: Expr, mode: str = "current", cap: int = DENSIFY_CAP) -> np.ndarray:
    m, n = expr.shape
    if m * n > cap:
        raise DensifyCapError(f"densifying {m}x{n} exceeds the cap of {cap} entries")
    return expr.form.dense(mode)


# ------------------------------------------------------------ linear forms


@dataclass
class Occurrence:
    """One term ``L A R`` (or ``L A^T R``) of a flattened expression."""

    leaf: HMatrix
    L: sp.csr_matrix
    R: sp.csr_matrix
    transposed: bool
    tag: str

    @property
    def key(self):
        return (id(self.leaf), self.transposed, self.tag)


def _sig(a: sp.csr_matrix):
    a = a.tocsr()
    a.sum_duplicates()
    a.sort_indices()
    return (a.shape, a.indptr.tobytes(), a.indices.tobytes(), a.data.tobytes())


@dataclass
class LinearForm:
    shape: tuple[int, int]
    occ: list[Occurrence]
    const: sp.csr_matrix
    _groups: Optional[list] = field(default=None, repr=False)

    # algebra
    def scaled(self, c: float) -> "LinearForm":
        return LinearForm(
            self.shape, [Occurrence(o.leaf, c * o.L, o.R, o.transposed, o.tag) for o in self.occ], c * self.const
        )

    def plus(self, other: "LinearForm") -> "LinearForm":
        if other.shape != self.shape:
            raise ValueError("shape mismatch in sum")
        return LinearForm(self.shape, self.occ + other.occ, (self.const + other.const).tocsr())

    def times(self, other: "LinearForm") -> "LinearForm":
        if self.occ and other.occ:
            raise NotImplementedError("products of two adaptive operators are not supported")
        occ = [Occurrence(o.leaf, o.L, (o.R @ other.const).tocsr(), o.transposed, o.tag) for o in self.occ]
        occ += [Occurrence(o.leaf, (self.const @ o.L).tocsr(), o.R, o.transposed, o.tag) for o in other.occ]
        return LinearForm((self.shape[0], other.shape[1]), occ, (self.const @ other.const).tocsr())

    def transposed(self) -> "LinearForm":
        occ = [Occurrence(o.leaf, o.R.T.tocsr(), o.L.T.tocsr(), not o.transposed, o.tag) for o in self.occ]
        return LinearForm((self.shape[1], self.shape[0]), occ, self.const.T.tocsr())

    def embedded(self, P: sp.csr_matrix, Q: sp.csr_matrix) -> "LinearForm":
        occ = [Occurrence(o.leaf, (P @ o.L).tocsr(), (o.R @ Q).tocsr(), o.transposed, o.tag) for o in self.occ]
        return LinearForm((P.shape[0], Q.shape[1]), occ, (P @ self.const @ Q).tocsr())

    def tagged(self, tag: str) -> "LinearForm":
        occ = [Occurrence(o.leaf, o.L, o.R, o.transposed, tag) for o in self.occ]
        return LinearForm(self.shape, occ, self.const)

    def simplified(self) -> "LinearForm":
        """Merge occurrences sharing a leaf and an identical ``R`` (then ``L``)."""
        out: list[Occurrence] = []
        for side in ("R", "L"):
            merged: dict = {}
            for o in self.occ if side == "R" else out:
                other = o.R if side == "R" else o.L
                k = (o.key, _sig(other))
                if k in merged:
                    m = merged[k]
                    if side == "R":
                        m.L = (m.L + o.L).tocsr()
                    else:
                        m.R = (m.R + o.R).tocsr()
                else:
                    merged[k] = Occurrence(o.leaf, o.L.tocsr(), o.R.tocsr(), o.transposed, o.tag)
            out = list(merged.values())
        for o in out:
            o.L.eliminate_zeros()
            o.R.eliminate_zeros()
        return LinearForm(self.shape, out, self.const)

    # evaluation
    def _grouped(self):
        if self._groups is None:
            groups: dict = {}
            for o in self.occ:
                groups.setdefault((id(o.leaf), o.transposed), []).append(o)
            self._groups = list(groups.values())
        return self._groups

    def matvec(self, x: np.ndarray, mode: str = "current") -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.ndim != 1:
            raise ValueError("matvec expects a vector")
        if x.shape[0] != self.shape[1]:
            raise ValueError(f"dimension mismatch: operator has {self.shape[1]} columns, vector {x.shape[0]}")
        y = np.zeros(self.shape[0]) if mode == "tail" else self.const @ x
        for group in self._grouped():
            leaf, tr = group[0].leaf, group[0].transposed
            Z = np.column_stack([o.R @ x for o in group])
            Y = leaf.rmatvec(Z, mode) if tr else leaf.matvec(Z, mode)
            for c, o in enumerate(group):
                y += o.L @ Y[:, c]
        return y

    def dense(self, mode: str = "current") -> np.ndarray:
        out = np.zeros(self.shape) if mode == "tail" else self.const.toarray()
        for group in self._grouped():
            A = group[0].leaf.densify(mode)
            if group[0].transposed:
                A = A.T
            for o in group:
                out += o.L @ (o.R.T @ A.T).T
        return out

    def tail_contributions(self, x: np.ndarray) -> "TailContributions":
        """Per-block look-ahead contributions ``(A_hat - A)_b`` pushed through the form.

        Items are ``(tag, leaf, block)`` triples; column ``q`` of the result
        is the contribution of item ``q`` to ``(E_hat - E) x``.
        """
        x = np.asarray(x, dtype=float)
        m = self.shape[0]
        # each (tag, leaf) pair owns a contiguous range of block slots
        base: dict = {}
        owners_of: list[tuple[str, HMatrix]] = []
        offsets = [0]
        rows_acc, cols_acc, vals_acc = [], [], []
        for o in self.occ:
            st = o.leaf.tail_stacks()
            if st.U.shape[1] == 0:
                continue
            z = o.R @ x
            if o.transposed:
                w = st.U.T @ z
                basis = st.Vt.T.tocsr()  # leaf cols x r
            else:
                w = st.Vt @ z
                basis = st.U  # leaf rows x r
            n_blocks = len(o.leaf.blocks)
            agg = sp.csr_matrix((w, (np.arange(len(w)), st.block_of_col)), shape=(len(w), n_blocks))
            C = (o.L @ (basis @ agg)).tocoo()
            k = (o.tag, id(o.leaf))
            if k not in base:
                base[k] = offsets[-1]
                owners_of.append((o.tag, o.leaf))
                offsets.append(offsets[-1] + n_blocks)
            rows_acc.append(C.row)
            cols_acc.append(C.col + base[k])
            vals_acc.append(C.data)
        if rows_acc:
            cols = np.concatenate(cols_acc)
            used, inv = np.unique(cols, return_inverse=True)
            M = sp.csr_matrix((np.concatenate(vals_acc), (np.concatenate(rows_acc), inv)), shape=(m, len(used)))
            slot = np.searchsorted(offsets, used, side="right") - 1
            items = [(owners_of[s][0], owners_of[s][1], int(u - offsets[s])) for s, u in zip(slot, used)]
        else:
            M = sp.csr_matrix((m, 0))
            items = []
        M.sum_duplicates()
        return TailContributions(items, M)


@dataclass
class TailContributions:
    """Item contributions to ``(A_hat - A) x`` as a sparse (rows x items) matrix."""

    items: list[tuple[str, HMatrix, int]]
    matrix: sp.csr_matrix

    @property
    def total(self) -> np.ndarray:
        return np.asarray(self.matrix.sum(axis=1)).ravel()

    @property
    def gamma(self) -> float:
        return float(np.linalg.norm(self.total))

    @property
    def item_norms(self) -> np.ndarray:
        return np.sqrt(np.asarray(self.matrix.multiply(self.matrix).sum(axis=0)).ravel())

    def remainder(self, selected: np.ndarray) -> float:
        """Norm of the summed contributions of the items not in ``selected``."""
        keep = np.ones(len(self.items), dtype=bool)
        keep[np.asarray(selected, dtype=np.int64)] = False
        return float(np.linalg.norm(self.matrix @ keep.astype(float)))

    def blocks_by_leaf(self, selected) -> dict[int, tuple[HMatrix, set[int]]]:
        out: dict[int, tuple[HMatrix, set[int]]] = {}
        for q in selected:
            _, leaf, b = self.items[q]
            out.setdefault(id(leaf), (leaf, set()))[1].add(b)
        return out
