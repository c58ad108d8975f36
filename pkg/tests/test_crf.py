"""Chain CRF tests against exhaustive path enumeration."""

import numpy as np
import pytest

import desatnet.autodiff as ad
from desatnet.autodiff import ShapeError, Tensor
from desatnet.crf import (CrfChain, crf_log_partition, crf_nll,
                          crf_sequence_score, crf_viterbi)
from oracles import crf_enum_best, crf_enum_logz, crf_path_score, numeric_grad

RNG = np.random.default_rng


def random_chain(rng, n_labels, scale=1.0):
    chain = CrfChain(n_labels)
    chain.trans.data[:] = rng.normal(0.0, scale, size=(n_labels, n_labels))
    chain.start.data[:] = rng.normal(0.0, scale, size=n_labels)
    return chain


def test_uniform_scores_give_log_path_count():
    chain = CrfChain(2)
    emis = Tensor(np.zeros((2, 2)))
    # all four paths score zero, so logZ = log 4
    assert np.isclose(crf_log_partition(emis, chain).item(), np.log(4.0))


def test_single_step_is_log_sum_exp():
    rng = RNG(0)
    chain = random_chain(rng, 3)
    e = rng.normal(size=(3, 1))
    got = crf_log_partition(Tensor(e), chain).item()
    want = np.log(np.exp(e[:, 0] + chain.start.data).sum())
    assert np.isclose(got, want, atol=1e-12)


def test_log_partition_matches_enumeration():
    rng = RNG(1)
    for trial in range(60):
        n_s = int(rng.integers(2, 4))
        w = int(rng.integers(1, 8))
        chain = random_chain(rng, n_s, scale=1.5)
        emis = rng.normal(0.0, 2.0, size=(n_s, w))
        got = crf_log_partition(Tensor(emis), chain).item()
        want = crf_enum_logz(emis, chain.trans.data, chain.start.data)
        assert abs(got - want) < 1e-8, (trial, n_s, w)


def test_log_partition_batched_matches_loop():
    rng = RNG(2)
    chain = random_chain(rng, 2)
    emis = rng.normal(size=(5, 2, 6))
    batch = crf_log_partition(Tensor(emis), chain)
    assert batch.shape == (5,)
    for b in range(5):
        one = crf_log_partition(Tensor(emis[b]), chain).item()
        assert np.isclose(batch.data[b], one, atol=1e-12)


def test_sequence_score_matches_oracle():
    rng = RNG(3)
    for _ in range(40):
        n_s = int(rng.integers(2, 4))
        w = int(rng.integers(1, 9))
        chain = random_chain(rng, n_s)
        emis = rng.normal(size=(n_s, w))
        labels = rng.integers(0, n_s, size=w)
        got = crf_sequence_score(Tensor(emis), labels, chain).item()
        want = crf_path_score(emis, chain.trans.data, chain.start.data, labels)
        assert np.isclose(got, want, atol=1e-10)


def test_sequence_score_validation():
    chain = CrfChain(2)
    emis = Tensor(np.zeros((2, 4)))
    with pytest.raises(ShapeError):
        crf_sequence_score(emis, np.array([0, 1, 2, 0]), chain)
    with pytest.raises(ShapeError):
        crf_sequence_score(emis, np.array([0, 1]), chain)
    with pytest.raises(ShapeError):
        crf_log_partition(Tensor(np.zeros((3, 4))), chain)
    with pytest.raises(ShapeError):
        crf_log_partition(Tensor(np.zeros((2, 0))), chain)


def test_nll_nonnegative_and_batched_sum():
    rng = RNG(4)
    chain = random_chain(rng, 2)
    emis = rng.normal(size=(6, 2, 5))
    labels = rng.integers(0, 2, size=(6, 5))
    total = crf_nll(Tensor(emis), labels, chain).item()
    assert total >= 0.0
    parts = [crf_nll(Tensor(emis[b]), labels[b], chain).item() for b in range(6)]
    assert np.isclose(total, sum(parts), atol=1e-10)
    for p in parts:
        assert p >= -1e-12


def test_nll_gradients_finite_difference():
    rng = RNG(5)
    chain = random_chain(rng, 2)
    emis = Tensor(rng.normal(size=(3, 2, 4)), requires_grad=True)
    labels = rng.integers(0, 2, size=(3, 4))
    leaves = [emis, chain.trans, chain.start]
    loss = crf_nll(emis, labels, chain)
    ad.backward(loss, leaves=leaves)

    def run():
        return crf_nll(Tensor(emis.data), labels, chain).item()

    for t in leaves:
        num = numeric_grad(run, t.data)
        np.testing.assert_allclose(t.grad, num, atol=1e-6, rtol=1e-4)


def test_nll_perfectly_separable_goes_to_zero():
    # huge margin on the gold path drives the NLL toward zero
    chain = CrfChain(2)
    emis = np.full((2, 5), -50.0)
    gold = np.array([0, 1, 1, 0, 1])
    emis[gold, np.arange(5)] = 50.0
    nll = crf_nll(Tensor(emis), gold, chain).item()
    assert nll < 1e-8


def test_emission_shift_invariance():
    # adding a constant to every emission at one step cancels in the NLL
    rng = RNG(6)
    chain = random_chain(rng, 2)
    emis = rng.normal(size=(2, 6))
    labels = rng.integers(0, 2, size=6)
    base = crf_nll(Tensor(emis), labels, chain).item()
    shifted = emis.copy()
    shifted[:, 3] += 11.7
    assert np.isclose(crf_nll(Tensor(shifted), labels, chain).item(), base, atol=1e-9)


def test_viterbi_matches_enumeration():
    rng = RNG(7)
    for trial in range(60):
        n_s = int(rng.integers(2, 4))
        w = int(rng.integers(1, 8))
        chain = random_chain(rng, n_s, scale=1.5)
        emis = rng.normal(0.0, 2.0, size=(n_s, w))
        got = crf_viterbi(Tensor(emis), chain)
        want = crf_enum_best(emis, chain.trans.data, chain.start.data)
        assert np.array_equal(got, want), (trial, got, want)


def test_viterbi_tie_breaks_toward_label_zero():
    # all-zero scores: every path ties, the all-zeros path must win
    chain = CrfChain(2)
    path = crf_viterbi(np.zeros((2, 6)), chain)
    assert np.array_equal(path, np.zeros(6, dtype=np.intp))
    # off-diagonal transitions make (0,1) and (1,0) tie above the rest;
    # the lexicographically smaller path must win
    chain2 = CrfChain(2)
    chain2.trans.data[:] = [[0.0, 1.0], [1.0, 0.0]]
    emis = np.zeros((2, 2))
    path2 = crf_viterbi(emis, chain2)
    best = crf_enum_best(emis, chain2.trans.data, chain2.start.data)
    assert np.array_equal(path2, [0, 1])
    assert np.array_equal(path2, best)


def test_viterbi_ties_randomized_integer_scores():
    # coarse integer scores force frequent exact ties
    rng = RNG(8)
    for trial in range(60):
        w = int(rng.integers(1, 7))
        chain = CrfChain(2)
        chain.trans.data[:] = rng.integers(-1, 2, size=(2, 2)).astype(float)
        chain.start.data[:] = rng.integers(-1, 2, size=2).astype(float)
        emis = rng.integers(-1, 2, size=(2, w)).astype(float)
        got = crf_viterbi(emis, chain)
        want = crf_enum_best(emis, chain.trans.data, chain.start.data)
        assert np.array_equal(got, want), (trial, got, want)


def test_viterbi_batched_matches_loop():
    rng = RNG(9)
    chain = random_chain(rng, 3)
    emis = rng.normal(size=(4, 3, 5))
    batch = crf_viterbi(emis, chain)
    assert batch.shape == (4, 5)
    for b in range(4):
        assert np.array_equal(batch[b], crf_viterbi(emis[b], chain))


def test_viterbi_accepts_plain_arrays():
    chain = CrfChain(2)
    chain.start.data[:] = [0.0, 1.0]
    path = crf_viterbi(np.zeros((2, 3)), chain)
    assert path[0] == 1


def test_chain_validation():
    with pytest.raises(ShapeError):
        CrfChain(0)
    chain = CrfChain(2)
    with pytest.raises(ShapeError):
        crf_viterbi(np.zeros((3, 4)), chain)
    with pytest.raises(ShapeError):
        crf_viterbi(np.zeros((2, 2, 2, 2)), chain)
