import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ldpdist.core import ValidationError, make_rng, verify_channel_dp
from ldpdist.mechanisms import (
    RapporAccumulator,
    bit_patterns,
    build_krr_channel,
    build_rappor_channel,
    encode_krr,
    encode_rappor,
    krr_output_distribution,
    krr_report_counts,
    rappor_bit_counts,
    rappor_bit_marginal,
    rappor_flip_params,
    verify_rappor_dp,
    warner_channel,
)


def test_krr_channel_k3_ln2():
    q = build_krr_channel(3, math.log(2))
    assert np.allclose(np.diag(q), 0.5, atol=1e-15)
    assert np.allclose(q[~np.eye(3, dtype=bool)], 0.25, atol=1e-15)


@pytest.mark.parametrize("eps", [0.0, 0.1, math.log(3), 1.0, 4.0, 20.0])
def test_krr_k2_is_warner_exactly(eps):
    assert np.array_equal(build_krr_channel(2, eps), warner_channel(eps))


def test_krr_channel_eps0_uniform():
    assert np.allclose(build_krr_channel(5, 0.0), 0.2, atol=1e-16)


def test_krr_channel_rejects_small_k():
    with pytest.raises(ValidationError):
        build_krr_channel(1, 1.0)


@given(st.integers(2, 40), st.floats(0, 12))
@settings(max_examples=100, deadline=None)
def test_krr_channel_tight_dp(k, eps):
    res = verify_channel_dp(build_krr_channel(k, eps), eps)
    assert res.satisfied
    assert res.max_ratio == pytest.approx(math.exp(eps), rel=1e-9)


@given(st.integers(2, 30), st.floats(0, 10), st.integers(0, 2**32))
@settings(max_examples=100, deadline=None)
def test_channel_push_forward_matches_closed_form(k, eps, seed):
    p = np.random.default_rng(seed).dirichlet(np.ones(k))
    q = build_krr_channel(k, eps)
    assert np.max(np.abs(p @ q - krr_output_distribution(p, eps))) < 1e-12


def test_krr_output_examples():
    assert np.allclose(krr_output_distribution([1, 0, 0], math.log(2)), [0.5, 0.25, 0.25])
    assert np.allclose(krr_output_distribution(np.full(4, 0.25), 2.0), 0.25)
    assert np.allclose(krr_output_distribution([0.7, 0.2, 0.1], 0.0), 1 / 3)


def test_flip_params():
    keep, flip = rappor_flip_params(2 * math.log(3))
    assert keep == pytest.approx(0.75) and flip == pytest.approx(0.25)
    assert keep + flip == pytest.approx(1.0, abs=1e-16)


def test_rappor_bit_marginal_examples():
    assert rappor_bit_marginal([1.0, 0.0], 2 * math.log(3))[0] == pytest.approx(0.75)
    assert np.allclose(rappor_bit_marginal([0.9, 0.1], 0.0), 0.5)
    assert np.allclose(rappor_bit_marginal(np.full(4, 0.25), 2 * math.log(3)), 0.375)


def test_encode_krr_noiseless_limit():
    rng = make_rng(1)
    x = np.arange(5).repeat(100)
    assert np.array_equal(encode_krr(x, 5, 50.0, rng), x)
    assert encode_krr(3, 5, 50.0, rng) == 3


def test_encode_krr_keep_frequency():
    y = encode_krr(np.full(10**6, 2), 4, math.log(3), make_rng(2))
    assert abs(np.mean(y == 2) - 0.5) < 0.002


def test_encode_krr_coin_flip_at_eps0():
    y = encode_krr(np.zeros(10**6, dtype=int), 2, 0.0, make_rng(3))
    assert abs(np.mean(y == 0) - 0.5) < 0.002


def test_encode_krr_rejects_out_of_range():
    with pytest.raises(ValidationError):
        encode_krr(4, 4, 1.0, make_rng(0))


def test_encode_krr_empirical_channel_within_4_sigma():
    k, eps, N = 4, 1.0, 10**6
    q = build_krr_channel(k, eps)
    rng = make_rng(4)
    for x in range(k):
        freq = np.bincount(encode_krr(np.full(N, x), k, eps, rng), minlength=k) / N
        assert np.all(np.abs(freq - q[x]) <= 4 * np.sqrt(q[x] * (1 - q[x]) / N))


def test_encode_rappor_noiseless():
    assert encode_rappor(1, 3, 60.0, make_rng(0)).tolist() == [0, 1, 0]


def test_encode_rappor_bit_frequencies():
    bits = encode_rappor(np.zeros(10**6, dtype=int), 2, 2 * math.log(3), make_rng(5))
    assert bits.shape == (10**6, 2)
    assert abs(bits[:, 0].mean() - 0.75) < 0.002
    assert abs(bits[:, 1].mean() - 0.25) < 0.002


def test_encode_rappor_converges_to_marginal():
    p = np.array([0.5, 0.3, 0.2])
    N, eps = 200_000, 1.5
    x = make_rng(6).choice(3, size=N, p=p)
    acc = RapporAccumulator(3)
    for chunk in np.array_split(x, 7):
        acc.add(encode_rappor(chunk, 3, eps, make_rng(6, len(chunk))))
    assert acc.n == N
    m = rappor_bit_marginal(np.bincount(x, minlength=3) / N, eps)
    assert np.all(np.abs(acc.bit_counts / N - m) <= 4 * np.sqrt(m * (1 - m) / N))


def test_rappor_channel_k3_eps1_passes_dp():
    q = build_rappor_channel(3, 1.0)
    assert q.shape == (3, 8)
    res = verify_channel_dp(q, 1.0)
    assert res.satisfied and res.max_ratio == pytest.approx(math.e, rel=1e-12)


def test_rappor_channel_matches_per_report_encoder():
    k, eps, N = 3, 1.0, 400_000
    q = build_rappor_channel(k, eps)
    bits = encode_rappor(np.full(N, 1), k, eps, make_rng(8))
    codes = bits @ (1 << np.arange(k))
    freq = np.bincount(codes, minlength=8) / N
    assert np.all(np.abs(freq - q[1]) <= 4 * np.sqrt(q[1] * (1 - q[1]) / N))


def test_bit_patterns_little_endian():
    assert bit_patterns(3)[6].tolist() == [0, 1, 1]


@pytest.mark.parametrize("k", [2, 5, 12])
def test_streaming_rappor_dp_check_is_tight(k):
    res = verify_rappor_dp(k, 0.7, block=64)
    assert res.satisfied and res.max_ratio == pytest.approx(math.exp(0.7), rel=1e-9)


def test_aggregate_krr_sampler_matches_output_law():
    # summing per-report encodings and the aggregate sampler share one law
    k, eps, n, reps = 4, 1.2, 500, 4000
    x_counts = np.array([300, 150, 50, 0])
    rng = make_rng(9)
    agg = np.array([krr_report_counts(x_counts, eps, rng) for _ in range(reps)])
    m = krr_output_distribution(x_counts / n, eps)
    se = np.sqrt(m * (1 - m) * n / reps)
    assert np.all(np.abs(agg.mean(axis=0) - n * m) <= 4 * se)
    # variance of a k-RR output count: sum over inputs of Bernoulli variances
    q = build_krr_channel(k, eps)
    var = (x_counts[:, None] * q * (1 - q)).sum(axis=0)
    assert np.allclose(agg.var(axis=0), var, rtol=0.1)
    x = np.repeat(np.arange(k), x_counts)
    per = np.array([np.bincount(encode_krr(x, k, eps, rng), minlength=k) for _ in range(reps)])
    assert np.allclose(per.var(axis=0), var, rtol=0.1)


def test_aggregate_krr_sampler_batches():
    out = krr_report_counts(np.array([[5, 0, 0], [0, 2, 3]]), 1.0, make_rng(0))
    assert out.shape == (2, 3)
    assert out.sum(axis=1).tolist() == [5, 5]


def test_aggregate_rappor_sampler_mean():
    x_counts = np.array([600, 300, 100])
    eps, reps = 1.0, 4000
    rng = make_rng(10)
    t = np.array([rappor_bit_counts(x_counts, eps, rng) for _ in range(reps)])
    m = rappor_bit_marginal(x_counts / 1000, eps)
    keep, flip = rappor_flip_params(eps)
    var = x_counts * keep * flip + (1000 - x_counts) * flip * keep
    assert np.all(np.abs(t.mean(axis=0) - 1000 * m) <= 4 * np.sqrt(var / reps))
