import numpy as np
import pytest
from hypothesis import given, strategies as st

from elastohm.aca import (
    DenseOracle,
    EntryOracle,
    LowRankFactor,
    aca_extend,
    aca_fixed_rank,
    aca_run,
    increment_matvec,
    stop_constant,
)


def low_rank(seed, m, n, r):
    rng = np.random.default_rng(seed)
    return rng.standard_normal((m, r)) @ rng.standard_normal((r, n))


def separated_kernel(m=60, n=50, dist=3.0, seed=0):
    rng = np.random.default_rng(seed)
    x = rng.random((m, 3))
    y = rng.random((n, 3)) + np.array([dist, 0.0, 0.0])
    return 1.0 / np.linalg.norm(x[:, None] - y[None], axis=2)


def run(a, eps=1e-8, beta=0.5, **kw):
    o = DenseOracle(a)
    return aca_run(o, np.arange(a.shape[0]), np.arange(a.shape[1]), eps, beta, **kw), o


@given(st.integers(0, 10**6), st.integers(2, 30), st.integers(2, 30), st.integers(1, 5))
def test_exact_low_rank_is_recovered(seed, m, n, r):
    a = low_rank(seed, m, n, r)
    f, _ = run(a, eps=1e-10)
    assert f.rank <= min(m, n, r + 1)
    assert np.linalg.norm(a - f.dense()) <= 1e-8 * np.linalg.norm(a)


@given(st.integers(0, 10**6), st.integers(1, 6))
def test_cross_interpolates_pivot_rows_and_columns(seed, steps):
    a = separated_kernel(30, 25, 1.5, seed)
    f = aca_fixed_rank(DenseOracle(a), np.arange(30), np.arange(25), steps)
    for i, j in f.pivots:
        assert np.allclose(f.dense()[i], a[i], atol=1e-12 * np.abs(a).max())
        assert np.allclose(f.dense()[:, j], a[:, j], atol=1e-12 * np.abs(a).max())


@pytest.mark.parametrize("eps", [1e-2, 1e-4, 1e-6, 1e-8])
def test_accuracy_on_asymptotically_smooth_kernel(eps):
    a = separated_kernel()
    f, _ = run(a, eps=eps, beta=0.5)
    assert not f.done
    assert np.linalg.norm(a - f.dense()) <= 10 * eps * np.linalg.norm(a)


def test_stopping_rule_holds_at_termination():
    a = separated_kernel()
    eps, beta = 1e-5, 0.6
    f, o = run(a, eps=eps, beta=beta)
    _, _, u, v = f.pending
    assert np.linalg.norm(u) * np.linalg.norm(v) <= stop_constant(eps, beta) * np.linalg.norm(f.dense())
    assert f.frob_sq == pytest.approx(np.linalg.norm(f.dense()) ** 2, rel=1e-10)


@given(st.floats(1e-3, 1e-1), st.floats(1e-9, 1e-4))
def test_resuming_matches_a_fresh_run(eps_coarse, eps_fine):
    a = separated_kernel(40, 35, 2.0)
    rows, cols = np.arange(40), np.arange(35)
    fo = DenseOracle(a)
    fresh = aca_run(fo, rows, cols, eps_fine, 0.5)
    o = DenseOracle(a)
    f = aca_run(o, rows, cols, eps_coarse, 0.5)
    f = aca_run(o, rows, cols, eps_fine, 0.5, start=f)
    assert f.pivots == fresh.pivots
    assert np.allclose(f.dense(), fresh.dense(), rtol=0, atol=1e-13 * np.abs(a).max())
    # resuming from the stored candidate never recomputes entries already paid for
    assert o.entries == fo.entries


@given(st.lists(st.integers(0, 4), min_size=1, max_size=5))
def test_extension_in_pieces_equals_extension_at_once(pieces):
    a = separated_kernel(30, 30, 1.2)
    rows = cols = np.arange(30)
    once = aca_fixed_rank(DenseOracle(a), rows, cols, sum(pieces))
    f = LowRankFactor.empty(rows, cols)
    o = DenseOracle(a)
    for p in pieces:
        aca_extend(f, p, o)
    assert f.pivots == once.pivots
    assert np.array_equal(f.dense(), once.dense())


def test_increment_matvec(rng):
    a = separated_kernel(30, 30, 1.2)
    rows = cols = np.arange(30)
    lo = aca_fixed_rank(DenseOracle(a), rows, cols, 2)
    hi = aca_fixed_rank(DenseOracle(a), rows, cols, 6)
    x = rng.standard_normal(30)
    assert np.allclose(increment_matvec(lo, hi, x), hi.dense() @ x - lo.dense() @ x)
    assert np.allclose(increment_matvec(hi, hi, x, 2, 6), hi.dense() @ x - hi.dense(2) @ x)
    assert not increment_matvec(hi, hi, x, 3, 3).any()
    other = aca_fixed_rank(DenseOracle(a[::-1].copy()), rows, cols, 6)
    with pytest.raises(ValueError):
        increment_matvec(lo, other, x)


def test_prefix_is_an_independent_truncation():
    a = separated_kernel()
    f, _ = run(a)
    p = f.prefix(3)
    assert p.rank == 3 and p.pivots == f.pivots[:3]
    assert np.allclose(p.dense(), f.dense(3))
    assert p.frob_sq == pytest.approx(np.linalg.norm(f.dense(3)) ** 2)
    assert p.nbytes() == 8 * 3 * (60 + 50)
    with pytest.raises(ValueError):
        f.prefix(f.rank + 1)
    c = f.copy()
    c.U[:] = 0
    assert np.abs(f.U).max() > 0


def test_zero_block_is_exhausted_with_rank_zero():
    f, _ = run(np.zeros((7, 5)))
    assert f.exhausted and f.rank == 0 and not f.dense().any()


def test_full_rank_block_exhausts():
    a = np.random.default_rng(3).standard_normal((6, 9))
    f, _ = run(a, eps=1e-14)
    assert f.exhausted and f.rank == 6
    assert np.allclose(f.dense(), a)


def test_rank_cap():
    a = separated_kernel()
    f, _ = run(a, eps=1e-12, max_rank=3)
    assert f.capped and f.rank == 3 and f.done
    assert aca_extend(f, 5, DenseOracle(a), max_rank=3).rank == 3


@pytest.mark.parametrize("eps, beta", [(0.0, 0.5), (-1.0, 0.5), (1e-3, 0.0), (1e-3, 1.0)])
def test_parameter_errors(eps, beta):
    with pytest.raises(ValueError):
        run(np.eye(3), eps=eps, beta=beta)


def test_oracle_shape_is_checked():
    o = EntryOracle(lambda r, c: np.zeros((1, 1)), (4, 4))
    with pytest.raises(ValueError, match="shape"):
        o.block([0, 1], [2])
    d = DenseOracle(np.arange(12.0).reshape(3, 4))
    assert d.entry(2, 3) == 11.0
    assert d.row(1, [0, 3]).tolist() == [4.0, 7.0]
    assert d.col([0, 2], 1).tolist() == [1.0, 9.0]
