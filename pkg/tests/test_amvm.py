import csv
import io

import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings, strategies as st

from elastohm.aca import DenseOracle
from elastohm.amvm import (
    AmvmConfig,
    MarkingError,
    amvm_multiply,
    form_leaves,
    gamma_contributions,
    mark_blocks,
    sparsity_constant,
)
from elastohm.hmatrix import assemble
from elastohm.operators import Leaf, TailContributions
from meshgen import point_problem


def fresh(rank=1, n=200, seed=2):
    a, part = point_problem(n, seed)
    return a, assemble(DenseOracle(a), part, initial_rank=rank, lookahead=2, name="A")


@pytest.mark.parametrize("theta", [0.3, 0.7, 0.9])
def test_converges_with_marking_criterion(theta, rng):
    a, h = fresh()
    x = rng.standard_normal(a.shape[1])
    cfg = AmvmConfig(theta=theta, eps_amvm=1e-6, max_iterations=100)
    b, rep = amvm_multiply(Leaf(h), x, cfg)
    assert rep.reason == "converged"
    assert rep.gammas[-1] <= 1e-6
    err = np.linalg.norm(a @ x - b)
    # the look-ahead estimator tracks the true error closely on this smooth kernel
    assert err <= 10 * max(rep.gammas[-1], 1e-14)
    for it in rep.iterations[:-1]:
        assert it.remainder <= (1 - theta) * it.gamma * (1 + 1e-12)
        assert 0 < it.refined <= it.marked
    steps = [it.aca_steps for it in rep.iterations]
    assert steps == sorted(steps)
    assert np.array_equal(b, rep.b)


def test_estimator_reduction(rng):
    a, h = fresh()
    theta, s = 0.7, 2.0
    c2 = 1.0 / (1.0 - s * (1.0 - theta) ** 2)
    x = rng.standard_normal(a.shape[1])
    _, rep = amvm_multiply(Leaf(h), x, AmvmConfig(theta=theta, eps_amvm=1e-8))
    its = rep.iterations
    assert len(its) > 3
    for p, q in zip(its, its[1:]):
        assert q.gamma**2 <= p.gamma**2 / s + c2 * p.e_hat**2 * (1 + 1e-10)


def test_relative_mode(rng):
    a, h = fresh()
    x = rng.standard_normal(a.shape[1])
    b, rep = amvm_multiply(Leaf(h), x, AmvmConfig(eps_amvm=1e-5, relative=True))
    assert rep.reason == "converged"
    assert rep.gammas[-1] <= 1e-5 * np.linalg.norm(b)


def test_zero_vector_triggers_no_refinement():
    a, h = fresh()
    b, rep = amvm_multiply(Leaf(h), np.zeros(a.shape[1]))
    assert not b.any() and rep.refinements == 0 and len(rep.iterations) == 1
    assert rep.reason == "converged"


def test_tiny_tolerance_runs_until_every_block_is_exact(rng):
    a, h = fresh(n=80)
    x = rng.standard_normal(80)
    b, rep = amvm_multiply(Leaf(h), x, AmvmConfig(eps_amvm=1e-300, max_iterations=500))
    # once every block is exhausted the tails vanish identically
    assert rep.gammas[-1] == 0.0
    assert all(h.exhausted(i) for i in h.factors)
    assert np.allclose(b, a @ x, rtol=1e-10)


def test_iteration_cap(rng):
    a, h = fresh()
    _, rep = amvm_multiply(Leaf(h), rng.standard_normal(a.shape[1]), AmvmConfig(eps_amvm=1e-14, max_iterations=2))
    assert rep.reason == "max_iterations" and len(rep.iterations) == 2


def test_report_csv(rng):
    a, h = fresh()
    _, rep = amvm_multiply(Leaf(h), rng.standard_normal(a.shape[1]))
    rows = list(csv.DictReader(io.StringIO(rep.to_csv())))
    assert [int(r["iteration"]) for r in rows] == list(range(len(rep.iterations)))
    assert np.allclose([float(r["gamma"]) for r in rows], rep.gammas, rtol=1e-6)


def test_contributions_and_sparsity(rng):
    a, h = fresh()
    x = rng.standard_normal(a.shape[1])
    tc = gamma_contributions(Leaf(h), x)
    assert np.allclose(tc.total, h.matvec(x, "tail"))
    assert form_leaves(Leaf(h).form) == [h]
    assert sparsity_constant(Leaf(h).form) == h.partition.sparsity_constant
    with pytest.raises(ValueError, match="dimension"):
        gamma_contributions(Leaf(h), np.ones(3))
    with pytest.raises(ValueError, match="dimension"):
        amvm_multiply(Leaf(h), np.ones(3))


contribution_matrices = st.tuples(st.integers(1, 30), st.integers(1, 30), st.integers(0, 10**6)).map(
    lambda t: sp.random(t[0], t[1], density=0.3, random_state=t[2], format="csr",
                        data_rvs=np.random.default_rng(t[2]).standard_normal))


@settings(max_examples=100)
@given(contribution_matrices, st.floats(0.05, 0.95))
def test_marking_satisfies_the_bulk_criterion(M, theta):
    tc = TailContributions([("", None, q) for q in range(M.shape[1])], M)
    marked = mark_blocks(tc, theta)
    assert len(set(marked.tolist())) == len(marked)
    assert tc.remainder(marked) <= (1 - theta) * tc.gamma + 1e-12 * tc.gamma
    if tc.gamma == 0:
        assert len(marked) == 0


def test_marking_rejects_bad_theta():
    tc = TailContributions([], sp.csr_matrix((3, 0)))
    for theta in (0.0, 1.0):
        with pytest.raises(ValueError):
            mark_blocks(tc, theta)
    assert issubclass(MarkingError, AssertionError)


@pytest.mark.parametrize("kw", [dict(theta=0.0), dict(theta=1.0), dict(eps_amvm=0.0), dict(lookahead_steps=0),
                                dict(max_iterations=0)])
def test_config_errors(kw):
    with pytest.raises(ValueError):
        AmvmConfig(**kw)
