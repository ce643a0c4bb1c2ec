import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings, strategies as st

from elastohm.aca import DenseOracle
from elastohm.hmatrix import assemble
from elastohm.operators import (
    BlockMatrix,
    Compose,
    DensifyCapError,
    Leaf,
    Scale,
    Sum,
    Transpose,
    block2x2,
    densify,
    restrict,
    selection,
)
from meshgen import point_problem

MODES = ("current", "lookahead", "tail")


@pytest.fixture(scope="module")
def parts():
    a, part = point_problem(120, 5)
    h = assemble(DenseOracle(a), part, initial_rank=1, lookahead=2, name="A")
    b, part_b = point_problem(120, 6)
    g = assemble(DenseOracle(b), part_b, initial_rank=2, lookahead=1, name="B")
    rng = np.random.default_rng(0)
    S = sp.random(120, 120, density=0.05, random_state=1, format="csr")
    D = rng.standard_normal((120, 120))
    return h, g, S, D


def dense_of(h, mode):
    return h.densify(mode)


def check(expr, dense_fn, rng):
    for mode in MODES:
        want = dense_fn(mode)
        got = densify(expr, mode)
        assert np.allclose(got, want, rtol=1e-12, atol=1e-12 * max(1.0, np.abs(want).max()))
        x = rng.standard_normal(expr.shape[1])
        assert np.allclose(expr.matvec(x, mode), want @ x, rtol=1e-10, atol=1e-10 * max(1.0, np.abs(want).max()))


def _const(mode, m):
    # sparse and dense leaves are fixed: they contribute nothing to the tail
    return np.zeros_like(m) if mode == "tail" else m


def test_leaf_and_scale(parts, rng):
    h, g, S, D = parts
    check(Leaf(h), lambda m: h.densify(m), rng)
    check(Scale(-2.5, Leaf(h)), lambda m: -2.5 * h.densify(m), rng)
    check(Leaf(S), lambda m: _const(m, S.toarray()), rng)
    check(3.0 * Leaf(D), lambda m: _const(m, 3.0 * D), rng)


def test_sums_products_and_transposes(parts, rng):
    h, g, S, D = parts
    Sd = S.toarray()
    e = Leaf(h) + Leaf(S) @ Leaf(g) @ Leaf(D) - Transpose(Leaf(h))
    check(e, lambda m: h.densify(m) + Sd @ g.densify(m) @ D - h.densify(m).T + _const(m, 0 * D), rng)
    e2 = Compose([Leaf(D), Transpose(Leaf(g)), Leaf(S)]).T
    check(e2, lambda m: (D @ g.densify(m).T @ Sd).T, rng)


def test_block_matrix_and_restriction(parts, rng):
    h, g, S, D = parts
    Sd = S.toarray()
    bm = block2x2(Leaf(h), Leaf(S), None, Leaf(g), signs=((1, -1), (1, 2)))
    Z = np.zeros((120, 120))
    check(bm, lambda m: np.block([[h.densify(m), -_const(m, Sd)], [Z, 2 * g.densify(m)]]), rng)
    rows = np.array([5, 3, 200, 7])
    cols = np.arange(0, 240, 3)
    r = restrict(bm, rows, cols)
    check(r, lambda m: densify(bm, m)[np.ix_(rows, cols)], rng)
    assert restrict(bm, None, None) is bm


@settings(max_examples=20)
@given(st.lists(st.floats(-3, 3, allow_subnormal=False), min_size=4, max_size=4), st.integers(0, 10**6))
def test_random_linear_combinations(parts, coef, seed):
    h, g, S, D = parts
    Sd = S.toarray()
    a, b, c, d = coef
    e = Sum([Scale(a, Leaf(h)), Scale(b, Compose([Leaf(S), Leaf(g)])), Scale(c, Leaf(D)),
             Scale(d, Compose([Leaf(g), Leaf(S)]).T)])
    check(e, lambda m: a * h.densify(m) + b * Sd @ g.densify(m) + c * _const(m, D) + d * (g.densify(m) @ Sd).T,
          np.random.default_rng(seed))


def test_occurrences_are_merged(parts):
    h, g, S, D = parts
    e = Leaf(h) + 2.0 * Leaf(h) + Leaf(g)
    assert len(e.form.occ) == 2
    assert {id(x) for x in e.leaves()} == {id(h), id(g)}


def test_tail_contributions_match_dense_blocks(parts, rng):
    h, g, S, D = parts
    Sd = S.toarray()
    e = BlockMatrix([[Leaf(h), Compose([Leaf(S), Leaf(g)])], [Transpose(Leaf(h)), None]],
                    tags=[["a", "b"], ["c", None]])
    x = rng.standard_normal(240)
    tc = e.form.tail_contributions(x)
    assert np.allclose(tc.total, e.matvec(x, "tail"))
    assert tc.gamma == pytest.approx(np.linalg.norm(e.matvec(x, "tail")))
    for q, (tag, leaf, b) in enumerate(tc.items):
        blk = leaf.blocks[b]
        r, c = leaf.rows_of(blk), leaf.cols_of(blk)
        T = np.zeros(leaf.shape)
        T[np.ix_(r, c)] = leaf.densify("tail")[np.ix_(r, c)]
        y = np.zeros(240)
        if tag == "a":
            y[:120] = T @ x[:120]
        elif tag == "b":
            y[:120] = Sd @ T @ x[120:]
        else:
            y[120:] = T.T @ x[:120]
        assert np.allclose(tc.matrix[:, q].toarray().ravel(), y, atol=1e-12)
    norms = tc.item_norms
    assert np.allclose(norms, [np.linalg.norm(tc.matrix[:, q].toarray()) for q in range(len(tc.items))])
    sel = np.argsort(norms)[::-1][:5]
    rest = tc.total - np.asarray(tc.matrix[:, sel].sum(axis=1)).ravel()
    assert tc.remainder(sel) == pytest.approx(np.linalg.norm(rest))
    grouped = tc.blocks_by_leaf(sel)
    assert sum(len(bs) for _, bs in grouped.values()) <= 5


def test_selection():
    P = selection(np.array([2, 0]), 4)
    assert np.array_equal(P.toarray(), [[0, 0, 1, 0], [1, 0, 0, 0]])


def test_errors(parts):
    h, g, S, D = parts
    small = Leaf(np.ones((3, 4)))
    with pytest.raises(ValueError, match="mismatched"):
        Sum([Leaf(h), small])
    with pytest.raises(ValueError, match="empty"):
        Sum([])
    with pytest.raises(ValueError, match="compose"):
        Compose([Leaf(h), small])
    with pytest.raises(ValueError, match="conflicting"):
        BlockMatrix([[Leaf(h), small], [None, small]])
    with pytest.raises(ValueError, match="non-empty"):
        BlockMatrix([[Leaf(h), None], [None, None]])
    with pytest.raises(ValueError):
        Leaf(np.ones(3))
    with pytest.raises(NotImplementedError):
        Compose([Leaf(h), Leaf(g)]).form
    with pytest.raises(ValueError, match="dimension"):
        Leaf(h).matvec(np.ones(3))
    with pytest.raises(ValueError, match="vector"):
        Leaf(h).matvec(np.ones((120, 2)))
    with pytest.raises(DensifyCapError):
        densify(Leaf(h), cap=100)
    with pytest.raises(ValueError, match="empty"):
        restrict(Leaf(h), np.array([], dtype=int), None)
