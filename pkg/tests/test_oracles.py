"""Noise oracles: stream management, unbiasedness, declared second-moment bounds."""

import numpy as np
import pytest

from sgdlab.errors import ParameterError
from sgdlab.oracles import (NoiseBound, gaussian_oracle, minibatch_oracle,
                            relative_noise_oracle, verify_bound)
from sgdlab.problems import least_squares_sum, pseudo_huber, quadratic
from sgdlab.rng import derive_key, replica_stream, stream


def test_same_seed_reproduces_samples():
    p = quadratic([1.0, 2.0])
    a = gaussian_oracle(p, 0.3, seed=5)
    b = gaussian_oracle(p, 0.3, seed=5)
    x = np.array([1.0, -1.0])
    for _ in range(5):
        assert np.array_equal(a.sample(x).stoch_grad, b.sample(x).stoch_grad)


def test_with_key_rewinds_to_a_fresh_stream():
    p = quadratic([1.0, 2.0])
    orc = gaussian_oracle(p, 0.3, seed=5)
    x = np.array([0.5, 0.5])
    first = orc.sample(x).stoch_grad
    orc.sample(x)  # advance
    again = orc.with_key(derive_key(5, 0)).sample(x).stoch_grad
    assert np.array_equal(first, again)


def test_sample_decomposition_is_exact():
    p = pseudo_huber(2)
    orc = gaussian_oracle(p, 0.4, seed=8)
    x = np.array([1.5, -0.5])
    s = orc.sample(x)
    assert np.array_equal(s.stoch_grad + s.noise, p.gradient(x))


def test_block_draws_equal_sequential_draws():
    # pre-drawing raw noise for many iterations must not change any stream
    p = quadratic([1.0, 2.0, 3.0])
    fsp = least_squares_sum(stream(1).normal(size=(8, 3)), stream(2).normal(size=8))
    oracles = [gaussian_oracle(p, 0.5, seed=3),
               relative_noise_oracle(p, 0.2, seed=3),
               minibatch_oracle(fsp, 3, seed=3)]
    for orc in oracles:
        block = orc.raw_block(replica_stream(3, 7), 50)
        seq_rng = replica_stream(3, 7)
        seq = np.concatenate([orc.raw_block(seq_rng, n) for n in (13, 17, 20)])
        assert np.array_equal(block, seq), orc.kind


def test_batched_apply_matches_single_rows_bitwise():
    # one state per raw row: the batched path must equal row-at-a-time exactly,
    # since the experiment engine relies on it for replica vectorization
    p = quadratic([1.0, 4.0])
    fsp = least_squares_sum(stream(21).normal(size=(5, 2)), stream(22).normal(size=5))
    oracles = [gaussian_oracle(p, 0.7, seed=9),
               relative_noise_oracle(p, 0.3, seed=9),
               minibatch_oracle(fsp, 2, seed=9)]
    xs = stream(4).normal(size=(6, 2))
    for orc in oracles:
        raws = orc.raw_block(replica_stream(9, 0), 6)
        prob = orc.problem
        one_at_a_time = np.stack([
            orc.stoch_grad(xs[i], raws[i], grad=prob.gradient(xs[i]))
            for i in range(6)
        ])
        together = orc.stoch_grad(xs, raws, grad=prob.gradient(xs))
        assert np.array_equal(one_at_a_time, together), orc.kind


def test_gaussian_bound_constants_and_verification():
    p = quadratic([2.0, 3.0], [0.5, -0.5])
    orc = gaussian_oracle(p, 0.4, seed=21)
    assert orc.bound == NoiseBound(m_const=0.4 ** 2 * 2, v_const=0.0)
    report = verify_bound(orc, p, stream(33).normal(size=(5, 2)) * 2.0, samples=20000)
    assert report.all_passed
    assert report.samples == 20000


def test_relative_noise_magnitude_is_exactly_proportional():
    p = pseudo_huber(3)
    eta = 0.3
    orc = relative_noise_oracle(p, eta, seed=2)
    assert orc.bound == NoiseBound(m_const=0.0, v_const=eta ** 2)
    x = np.array([1.0, -2.0, 0.5])
    gnorm = float(np.linalg.norm(p.gradient(x)))
    for _ in range(10):
        s = orc.sample(x)
        assert float(np.linalg.norm(s.noise)) == pytest.approx(eta * gnorm, rel=1e-12)


def test_relative_noise_at_the_minimum_is_zero():
    p = pseudo_huber(2)
    orc = relative_noise_oracle(p, 0.5, seed=4)
    s = orc.sample(np.zeros(2))
    assert np.array_equal(s.noise, np.zeros(2))


def test_zero_noise_flags_and_exact_gradients():
    p = quadratic([1.0])
    assert gaussian_oracle(p, 0.0).zero_noise
    assert not gaussian_oracle(p, 0.1).zero_noise
    assert relative_noise_oracle(p, 0.0).zero_noise
    s = gaussian_oracle(p, 0.0).sample(np.array([2.0]))
    assert np.array_equal(s.noise, np.zeros(1))
    assert np.array_equal(s.stoch_grad, p.gradient(np.array([2.0])))


def test_minibatch_is_unbiased():
    rng = stream(5)
    fsp = least_squares_sum(rng.normal(size=(9, 2)), rng.normal(size=9))
    orc = minibatch_oracle(fsp, 2, seed=17)
    x = np.array([0.7, -1.1])
    raws = orc.raw_block(replica_stream(17, 0), 40000)
    sg = orc.stoch_grad(np.broadcast_to(x, (40000, 2)).copy(), raws)
    err = sg.mean(axis=0) - fsp.aggregate.gradient(x)
    se = sg.std(axis=0, ddof=1) / np.sqrt(len(sg))
    assert np.all(np.abs(err) <= 4.0 * se + 1e-12)


def test_full_batch_without_replacement_recovers_the_exact_gradient():
    rng = stream(6)
    fsp = least_squares_sum(rng.normal(size=(6, 2)), rng.normal(size=6))
    orc = minibatch_oracle(fsp, 6, replace=False, seed=1)
    x = np.array([1.3, 0.2])
    s = orc.sample(x)
    assert np.allclose(s.stoch_grad, fsp.aggregate.gradient(x), rtol=1e-12, atol=1e-12)
    assert float(np.linalg.norm(s.noise)) < 1e-12


def test_minibatch_two_point_bound_closed_form():
    fsp = least_squares_sum([[1.0], [1.0]], [1.0, -1.0])
    orc = minibatch_oracle(fsp, 1, seed=0)
    assert not orc.bound.empirical
    assert orc.bound.m_const == pytest.approx(2.0, rel=1e-12)
    assert orc.bound.v_const == pytest.approx(2.0, rel=1e-12)


def test_minibatch_degenerate_gram_falls_back_to_an_empirical_bound():
    # rank-deficient design: no closed-form variance transfer constant exists
    fsp = least_squares_sum([[1.0, 0.0], [2.0, 0.0], [3.0, 0.0]], [1.0, 0.0, -1.0])
    orc = minibatch_oracle(fsp, 1, seed=0)
    assert orc.bound.empirical
    report = verify_bound(orc, fsp.aggregate, stream(8).normal(size=(5, 2)), samples=5000)
    assert report.all_passed


def test_minibatch_rejects_out_of_range_batches():
    fsp = least_squares_sum([[1.0], [1.0]], [1.0, -1.0])
    with pytest.raises(ParameterError):
        minibatch_oracle(fsp, 0)
    with pytest.raises(ParameterError):
        minibatch_oracle(fsp, 3)


@pytest.mark.parametrize("sigma_or_eta", [-0.1, float("nan")])
def test_noise_scales_must_be_finite_and_non_negative(sigma_or_eta):
    p = quadratic([1.0])
    with pytest.raises(ParameterError):
        gaussian_oracle(p, sigma_or_eta)
    with pytest.raises(ParameterError):
        relative_noise_oracle(p, sigma_or_eta)


def test_verify_bound_validates_inputs():
    p = quadratic([1.0, 1.0])
    orc = gaussian_oracle(p, 0.1)
    with pytest.raises(ParameterError):
        verify_bound(orc, p, np.zeros((2, 2)), samples=10)
    with pytest.raises(ParameterError):
        verify_bound(orc, p, np.zeros((2, 3)), samples=2000)
