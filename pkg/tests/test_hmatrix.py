import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from elastohm.aca import DenseOracle
from elastohm.clustering import build_block_partition, build_cluster_tree
from elastohm.hmatrix import assemble
from meshgen import point_problem


@pytest.fixture(scope="module")
def problem():
    return point_problem()


def rel(a, b):
    return np.linalg.norm(a - b) / np.linalg.norm(b)


@pytest.mark.parametrize("eps", [1e-3, 1e-5, 1e-7])
def test_full_mode_accuracy(problem, eps):
    a, part = problem
    h = assemble(DenseOracle(a), part, eps=eps)
    assert rel(h.densify(), a) <= 10 * eps
    # the look-ahead is at least as accurate
    assert rel(h.densify("lookahead"), a) <= rel(h.densify(), a) * 1.01


def test_coarse_mode_ranks(problem):
    a, part = problem
    h = assemble(DenseOracle(a), part, initial_rank=3, lookahead=2)
    for i in h.factors:
        assert h.rank(i) == min(3, h.factors[i].k)
        assert h.rank(i, "lookahead") == h.factors[i].k
        assert h.factors[i].k == 5 or h.factors[i].exhausted
    assert h.rank_summary()["max_rank"] == 3
    assert set(h.dense) | set(h.factors) == set(range(len(part.blocks)))


def test_modes_are_consistent(problem, rng):
    a, part = problem
    h = assemble(DenseOracle(a), part, initial_rank=2)
    x = rng.standard_normal(a.shape[1])
    assert np.allclose(h.matvec(x, "lookahead"), h.matvec(x) + h.matvec(x, "tail"))
    X = rng.standard_normal((a.shape[1], 3))
    assert np.allclose(h.matvec(X), np.column_stack([h.matvec(X[:, k]) for k in range(3)]))
    assert np.allclose(h.rmatvec(x), h.densify().T @ x)
    assert h.storage_bytes("current") + h.storage_bytes("tail") == h.storage_bytes("lookahead")
    assert h.dense_bytes() == 8 * a.size


def test_refinement_adopts_the_lookahead_without_recomputation(problem):
    a, part = problem
    o = DenseOracle(a)
    h = assemble(o, part, initial_rank=2, lookahead=2)
    before = h.densify("lookahead")
    entries = o.entries
    adm = sorted(h.factors)
    changed = h.refine(adm[::2])
    assert changed == [i for i in adm[::2] if h.factors[i].k > 0]
    refined = h.densify()
    for i in adm[::2]:
        b = part.blocks[i]
        r, c = part.row_indices(b), part.col_indices(b)
        assert np.allclose(refined[np.ix_(r, c)], before[np.ix_(r, c)], rtol=0, atol=1e-13)
    # only the new look-ahead crosses were computed: at most two crosses per refined block
    bound = sum(2 * (len(part.row_indices(part.blocks[i])) + len(part.col_indices(part.blocks[i]))) for i in changed)
    assert o.entries - entries <= bound
    assert h.refinements == len(changed) and h.version == 1


@settings(max_examples=15)
@given(st.lists(st.lists(st.integers(0, 10**6), max_size=20), min_size=1, max_size=4))
def test_random_refinement_sequences(rounds):
    a, part = point_problem(150, 1)
    h = assemble(DenseOracle(a), part, initial_rank=1, lookahead=2)
    adm = sorted(h.factors)
    x = np.random.default_rng(0).standard_normal(a.shape[1])
    prev_err = rel(h.densify(), a)
    for picks in rounds:
        h.refine(adm[p % len(adm)] for p in picks)
        for i in adm:
            f = h.factors[i]
            assert f.k - h.k_cur[i] == 2 or f.done
            assert h.has_tail(i) == (f.k > h.k_cur[i])
        assert np.allclose(h.matvec(x, "lookahead") - h.matvec(x), h.matvec(x, "tail"))
        err = rel(h.densify(), a)
        assert err <= prev_err * (1 + 1e-9) + 1e-14 or not picks
        prev_err = err


def test_refining_exhausted_blocks_is_a_no_op():
    a = np.ones((40, 40))  # rank one everywhere
    p = np.linspace(0, 10, 40)[:, None] * np.array([1.0, 0.0, 0.0])
    tree = build_cluster_tree(p, 4)
    part = build_block_partition(tree, tree, 0.8)
    h = assemble(DenseOracle(a), part, initial_rank=1)
    assert all(h.exhausted(i) or h.factors[i].k == 1 for i in h.factors)
    h.refine_all()
    assert h.refine_all() == []
    assert np.allclose(h.densify(), a)


def test_rank_cap(problem):
    a, part = problem
    h = assemble(DenseOracle(a), part, eps=1e-12, max_rank=4)
    assert max(f.k for f in h.factors.values()) <= 4


def test_assembly_errors(problem):
    a, part = problem
    with pytest.raises(ValueError, match="exactly one"):
        assemble(DenseOracle(a), part)
    with pytest.raises(ValueError, match="exactly one"):
        assemble(DenseOracle(a), part, eps=1e-3, initial_rank=2)
    with pytest.raises(ValueError, match="does not match"):
        assemble(DenseOracle(a[:-1]), part, eps=1e-3)
    with pytest.raises(ValueError):
        assemble(DenseOracle(a), part, eps=1e-3, lookahead=-1)
    h = assemble(DenseOracle(a), part, initial_rank=1)
    with pytest.raises(ValueError, match="expected"):
        h.matvec(np.ones(3))
    with pytest.raises(ValueError, match="expected"):
        h.rmatvec(np.ones(3))
