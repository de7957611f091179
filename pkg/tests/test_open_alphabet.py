import math
from pathlib import Path

import numpy as np
import pytest

from ldpdist.core import ValidationError, make_rng, verify_channel_dp
from ldpdist.decoders import decode
from ldpdist.hashing import fmix64, fnv1a64, keyed_hash, symbol_digests
from ldpdist.mechanisms import (
    encode_krr,
    encode_rappor,
    krr_output_distribution,
    krr_report_counts,
    noisy_bit_counts,
    rappor_bit_counts,
)
from ldpdist.open_alphabet import (
    CohortScheme,
    HashMode,
    RankDeficientWarning,
    assign_cohort,
    bloom_code,
    build_design_matrix,
    cohort_hash,
    decode_orappor,
    decode_orr,
    distinguishability_stats,
    encode_orappor,
    encode_orr,
    orappor_flip_prob,
    orappor_joint_channel,
    orr_joint_channel,
    read_candidates,
    simulate_distinguishable_fraction,
)

DATA = Path(__file__).parent / "data"
MASK = (1 << 64) - 1


def identity_scheme(S, C=1, h=1, k=None):
    return CohortScheme(C, k or S, h, mode="permutation", alphabet_size=S, identity=True)


# -- hashing ------------------------------------------------------------------

@pytest.mark.parametrize("data, digest", [
    (b"", 0xCBF29CE484222325),
    (b"a", 0xAF63DC4C8601EC8C),
    (b"foobar", 0x85944171F73967E8),
])
def test_fnv1a64_reference_vectors(data, digest):
    assert fnv1a64(data) == digest


def _fmix64_int(h):
    h ^= h >> 33
    h = (h * 0xFF51AFD7ED558CCD) & MASK
    h ^= h >> 33
    h = (h * 0xC4CEB9FE1A85EC53) & MASK
    return h ^ (h >> 33)


def test_vectorized_hashing_matches_integer_reference():
    vals = np.array([0, 1, -1, 2**40 + 7, -(2**63)], dtype=np.int64)
    digests = symbol_digests(vals)
    for v, d in zip(vals, digests):
        assert int(d) == fnv1a64(int(v).to_bytes(8, "little", signed=True))
    key = 0x0123456789ABCDEF
    rot = ((key << 32) | (key >> 32)) & MASK
    for d in digests:
        expect = _fmix64_int(_fmix64_int(int(d) ^ key) ^ rot)
        assert int(keyed_hash(d, np.uint64(key))) == expect
    assert int(fmix64(np.uint64(0))) == 0


def test_symbol_serialization_kinds():
    assert symbol_digests(["a"])[0] == fnv1a64(b"a")
    assert symbol_digests([b"a"])[0] == fnv1a64(b"a")
    with pytest.raises(TypeError):
        symbol_digests([1.5])


def test_hash_golden_values():
    scheme = CohortScheme(3, 1000, 2, master_seed=42)
    got = [cohort_hash(s, c, j, scheme) for s in ["apple", "banana", 7] for c in range(3) for j in range(2)]
    golden = (DATA / "hash_golden.txt").read_text().split()
    assert got == [int(x) for x in golden]


def test_assign_cohort_single():
    scheme = CohortScheme(1, 4)
    assert assign_cohort(12345, scheme) == 0
    assert np.all(assign_cohort(np.arange(10), scheme) == 0)


def test_assign_cohort_uniform():
    scheme = CohortScheme(8, 4, master_seed=3)
    c = assign_cohort(np.arange(10**6), scheme)
    freq = np.bincount(c, minlength=8) / 10**6
    assert np.all(np.abs(freq - 0.125) < 0.0015)


def test_assign_cohort_deterministic():
    scheme = CohortScheme(8, 4, master_seed=3)
    assert assign_cohort(987, scheme) == assign_cohort(987, scheme)
    assert assign_cohort(987, scheme) == int(assign_cohort(np.array([987]), scheme)[0])


def test_cohort_hash_deterministic_and_in_range():
    scheme = CohortScheme(4, 16, master_seed=11)
    for s in ["x", "yz", 5, b"\x00"]:
        for c in range(4):
            y = cohort_hash(s, c, 0, scheme)
            assert 0 <= y < 16 and y == cohort_hash(s, c, 0, scheme)


def test_cohort_hash_uniform_buckets():
    scheme = CohortScheme(1, 16, master_seed=5)
    symbols = [f"sym-{i}" for i in range(10**4)]
    dm = build_design_matrix(symbols, scheme)
    counts = np.bincount(dm.buckets[0, 0], minlength=16)
    p = 1 / 16
    assert np.all(np.abs(counts / 10**4 - p) <= 4 * math.sqrt(p * (1 - p) / 10**4))


def test_permutation_mode_is_bijection():
    scheme = CohortScheme(1, 10, mode="permutation", alphabet_size=10, master_seed=9)
    assert sorted(cohort_hash(s, 0, 0, scheme) for s in range(10)) == list(range(10))


def test_permutation_mode_rejects_foreign_symbol():
    scheme = CohortScheme(1, 4, mode="permutation", alphabet_size=8)
    with pytest.raises(ValidationError):
        cohort_hash(8, 0, 0, scheme)
    with pytest.raises(ValidationError):
        cohort_hash("a", 0, 0, scheme)


def test_integer_and_vector_paths_agree():
    scheme = CohortScheme(3, 7, 2, master_seed=1)
    dm = build_design_matrix(list(range(20)), scheme)
    for s in range(20):
        for c in range(3):
            assert cohort_hash(s, c, 0, scheme) == dm.buckets[c, 0, s]


# -- encoding -----------------------------------------------------------------

def test_encode_orr_reduces_to_krr():
    scheme = identity_scheme(6)
    for s in range(6):
        a = encode_orr(s, 100 + s, scheme, 1.1, make_rng(3, s))
        b = encode_krr(s, 6, 1.1, make_rng(3, s))
        assert a.cohort == 0 and a.payload == b


def test_encode_orr_noiseless():
    scheme = CohortScheme(4, 8, master_seed=2)
    for cid in range(20):
        r = encode_orr("word", cid, scheme, 60.0, make_rng(0, cid))
        assert r.payload == cohort_hash("word", r.cohort, 0, scheme)


def test_orr_joint_channel_small_is_private():
    scheme = CohortScheme(2, 2, master_seed=0)
    q = orr_joint_channel(["a", "b", "c"], scheme, 0.5)
    assert q.shape == (3, 4)
    res = verify_channel_dp(q, 0.5)
    assert res.satisfied


def test_encode_orappor_h1_reduces_to_rappor():
    scheme = identity_scheme(5)
    for s in range(5):
        a = encode_orappor(s, 1, scheme, 0.9, make_rng(4, s))
        b = encode_rappor(s, 5, 0.9, make_rng(4, s))
        assert np.array_equal(a.payload, b)


def test_encode_orappor_noiseless_is_bloom_code():
    scheme = CohortScheme(3, 16, 3, master_seed=8)
    for cid in range(10):
        r = encode_orappor("q", cid, scheme, 500.0, make_rng(1, cid))
        assert np.array_equal(r.payload, bloom_code("q", r.cohort, scheme))


def test_orappor_channel_is_private():
    scheme = CohortScheme(1, 4, 2, master_seed=1)
    q = orappor_joint_channel(["s0", "s1"], scheme, 2.0)
    assert q.shape == (2, 16)
    assert verify_channel_dp(q, 2.0).satisfied


def test_orappor_flip_prob_splits_budget():
    scheme = CohortScheme(1, 8, 3)
    assert orappor_flip_prob(scheme, 1.2) == pytest.approx(1 / (1 + math.exp(1.2 / 6)))


# -- design matrix ------------------------------------------------------------

def test_identity_design_matrix():
    dm = build_design_matrix(range(5), identity_scheme(5))
    assert np.array_equal(dm.dense(), np.eye(5, dtype=np.uint8))


def test_orr_columns_sum_to_C():
    dm = build_design_matrix([f"w{i}" for i in range(40)], CohortScheme(6, 5, master_seed=4))
    assert np.all(dm.dense().sum(axis=0) == 6)
    assert np.all(dm.column_weights == 6)


def test_orappor_column_weights_between_C_and_hC():
    C, h = 5, 4
    dm = build_design_matrix(range(60), CohortScheme(C, 6, h, master_seed=4))
    w = dm.dense().sum(axis=0)
    assert np.all((w >= C) & (w <= h * C))
    assert np.array_equal(w, dm.column_weights)
    assert np.any(w < h * C)  # collisions are recorded, not resampled


def test_gram_and_rmatvec_match_dense():
    scheme = CohortScheme(3, 4, 2, master_seed=6)
    dm = build_design_matrix([f"c{i}" for i in range(9)], scheme)
    H = dm.dense().astype(float)
    w = np.array([1.0, 3.0, 0.5])
    W = np.repeat(w, 4)
    assert np.allclose(dm.gram(w), H.T @ (W[:, None] * H))
    t = np.random.default_rng(0).normal(size=(3, 4))
    assert np.allclose(dm.rmatvec(t, w), H.T @ (W * t.ravel()))


def test_design_matrix_errors():
    with pytest.raises(ValidationError):
        build_design_matrix(["a", "a"], CohortScheme(1, 2))
    with pytest.raises(ValidationError):
        build_design_matrix([], CohortScheme(1, 2))


def test_design_matrix_golden_csv(tmp_path):
    scheme = CohortScheme(2, 2, master_seed=2024)
    dm = build_design_matrix(["a", "b", "c", "d"], scheme)
    out = tmp_path / "h.csv"
    dm.to_csv(out)
    assert out.read_text() == (DATA / "design_S4_k2_C2.csv").read_text()
    dm2 = build_design_matrix(["a", "b", "c", "d"], scheme)
    assert np.array_equal(dm.dense(), dm2.dense())


def test_bloom_design_golden_csv(tmp_path):
    scheme = CohortScheme(3, 8, 2, master_seed=77)
    out = tmp_path / "b.csv"
    build_design_matrix(list(range(10)), scheme).to_csv(out)
    assert out.read_text() == (DATA / "design_S10_k8_C3_h2.csv").read_text()


def test_read_candidates(tmp_path):
    f = tmp_path / "cands.txt"
    f.write_text("alpha\n\nβeta\r\ngamma\n", encoding="utf-8")
    assert read_candidates(f) == ["alpha", "βeta", "gamma"]


# -- decoding -----------------------------------------------------------------

def _full_rank_scheme(S, k, C, h=1, start=0):
    for seed in range(start, start + 1000):
        scheme = CohortScheme(C, k, h, master_seed=seed)
        dm = build_design_matrix(range(S), scheme)
        if np.linalg.matrix_rank(dm.gram()) == S:
            return scheme, dm
    raise AssertionError("no full-rank scheme found")


def test_decode_orr_reduces_to_projected_krr():
    S, eps, n = 7, 1.3, 5000
    rng = make_rng(12)
    x = rng.multinomial(n, np.random.default_rng(1).dirichlet(np.ones(S)))
    y = krr_report_counts(x, eps, rng)
    a = decode_orr(y[None, :], n, range(S), identity_scheme(S), eps)
    b = decode("projected", "krr", y / n, n, S, eps)
    assert np.array_equal(a, b)


def test_decode_orr_noiseless_recovers_p():
    S, k, C, eps = 8, 4, 4, 1.0
    scheme, dm = _full_rank_scheme(S, k, C)
    p = np.random.default_rng(2).dirichlet(np.ones(S))
    H = dm.dense().astype(float)  # rows c * k + y
    m = np.concatenate([krr_output_distribution(H[c * k:(c + 1) * k] @ p, eps) for c in range(C)]) / C
    est = decode_orr(m.reshape(C, k) * 1000, 1000, range(S), scheme, eps, design=dm)
    assert np.max(np.abs(est - p)) < 1e-8


def test_decode_orr_monte_carlo_accuracy():
    S, k, C, n, eps = 16, 8, 8, 10**5, math.log(8)
    from ldpdist.simkit import DistributionSpec, make_distribution

    p = make_distribution(DistributionSpec("geometric", (), S))
    losses = []
    for trial in range(50):
        rng = make_rng(31, trial)
        scheme = CohortScheme(C, k, master_seed=trial)
        dm = build_design_matrix(range(S), scheme)
        x = rng.multinomial(n, p)
        N = rng.multinomial(x, np.full(C, 1 / C)).T
        B = np.stack([np.bincount(dm.buckets[c, 0], weights=N[c], minlength=k) for c in range(C)])
        y = krr_report_counts(B.astype(np.int64), eps, rng)
        losses.append(np.abs(decode_orr(y, n, range(S), scheme, eps, design=dm) - x / n).sum())
    assert np.median(losses) < 0.15


def test_decode_orr_rank_deficient_warns():
    scheme = CohortScheme(1, 2, master_seed=0)
    with pytest.warns(RankDeficientWarning):
        decode_orr(np.array([[40, 60]]), 100, range(5), scheme, 1.0)


def test_decode_orr_rejects_eps0():
    with pytest.raises(ValidationError):
        decode_orr(np.array([[4, 6]]), 10, range(2), identity_scheme(2), 0.0)


def test_decode_orappor_reduces_to_projected_rappor():
    S, eps, n = 6, 1.7, 4000
    rng = make_rng(13)
    x = rng.multinomial(n, np.random.default_rng(3).dirichlet(np.ones(S)))
    t = rappor_bit_counts(x, eps, rng)
    a = decode_orappor(t[None, :], [n], range(S), identity_scheme(S), eps)
    b = decode("projected", "rappor", t, n, S, eps)
    assert np.allclose(a, b, atol=1e-12)


def test_decode_orappor_noiseless_recovers_p():
    S, k, C, eps = 8, 16, 2, 2.0
    scheme, dm = _full_rank_scheme(S, k, C)
    p = np.random.default_rng(4).dirichlet(np.ones(S))
    f = orappor_flip_prob(scheme, eps)
    H = dm.dense().astype(float).reshape(C, k, S)
    sizes = np.array([600.0, 400.0])
    t = np.stack([((1 - 2 * f) * (H[c] @ p) + f) * sizes[c] for c in range(C)])
    est = decode_orappor(t, sizes, range(S), scheme, eps, design=dm)
    assert np.max(np.abs(est - p)) < 1e-8


@pytest.mark.filterwarnings("ignore::ldpdist.open_alphabet.RankDeficientWarning")
def test_decode_orappor_uses_only_nonempty_cohorts():
    S, k, C, eps = 5, 8, 3, 2.0
    scheme, dm = _full_rank_scheme(S, k, C)
    rng = make_rng(14)
    t = rng.integers(100, 400, size=(C, k))
    sizes = np.array([1000, 0, 0])
    t[1:] = 0
    est = decode_orappor(t, sizes, range(S), scheme, eps, design=dm, project=False)
    f = orappor_flip_prob(scheme, eps)
    H0 = dm.dense().astype(float)[:k]
    ref = np.linalg.lstsq(H0, (t[0] / 1000 - f) / (1 - 2 * f), rcond=None)[0]
    assert np.allclose(est, ref, atol=1e-9)


def test_orappor_sampler_matches_encoder_marginals():
    S, k, C, h, eps, n = 6, 8, 2, 2, 1.5, 200_000
    scheme = CohortScheme(C, k, h, master_seed=5)
    p = np.random.default_rng(5).dirichlet(np.ones(S))
    rng = make_rng(15)
    symbols = rng.choice(S, size=n, p=p)
    ids = np.arange(n)
    cohorts = assign_cohort(ids, scheme)
    dm = build_design_matrix(range(S), scheme)
    H = dm.dense().reshape(C, k, S)
    f = orappor_flip_prob(scheme, eps)
    codes = H[cohorts, :, symbols]
    flips = rng.random(codes.shape) < f
    reports = codes ^ flips
    for c in range(C):
        rows = reports[cohorts == c]
        ones = H[c] @ np.bincount(symbols[cohorts == c], minlength=S)
        expected = (ones * (1 - f) + (rows.shape[0] - ones) * f) / rows.shape[0]
        se = np.sqrt(expected * (1 - expected) / rows.shape[0])
        assert np.all(np.abs(rows.mean(axis=0) - expected) <= 4 * se)
        agg = noisy_bit_counts(ones, rows.shape[0], f, rng) / rows.shape[0]
        assert np.all(np.abs(agg - expected) <= 4 * se)


def test_orr_error_decreases_with_n():
    from ldpdist.simkit import DistributionSpec, ExperimentConfig, run_experiment

    medians = []
    for n in [10**3, 10**4, 10**5, 10**6]:
        cfg = ExperimentConfig("orr", "projected", DistributionSpec("geometric", (), 16), n, 2.0, 8,
                               C=4, trials=50, seed=21)
        medians.append(run_experiment(cfg).median)
    assert all(a > b for a, b in zip(medians, medians[1:]))


# -- distinguishability -------------------------------------------------------

def test_distinguishability_examples():
    assert distinguishability_stats(2, 2, 1).prob_distinguishable == pytest.approx(0.5)
    assert distinguishability_stats(1, 5, 3).prob_distinguishable == 1.0
    d = distinguishability_stats(10**6, 2, 1)
    assert d.prob_distinguishable == 0.0 and not d.constrained
    assert distinguishability_stats(256, 64, 4).constrained


@pytest.mark.parametrize("S, k, C", [(16, 4, 2), (64, 8, 2), (256, 64, 4), (32, 2, 3)])
def test_distinguishability_monte_carlo(S, k, C):
    draws = 2000 if S <= 64 else 500
    frac = simulate_distinguishable_fraction(S, k, C, draws, seed=S + k + C)
    prob = distinguishability_stats(S, k, C).prob_distinguishable
    # per-symbol indicators are correlated within a draw; use the empirical spread
    se = frac.std(ddof=1) / math.sqrt(draws)
    assert abs(frac.mean() - prob) <= 3 * se + 1e-12


def test_design_matrix_permutation_golden_determinism():
    scheme = CohortScheme(2, 3, mode=HashMode.PERMUTATION, alphabet_size=7, master_seed=10)
    a = build_design_matrix(range(7), scheme).buckets
    b = build_design_matrix(range(7), scheme).buckets
    assert np.array_equal(a, b)
    assert np.all(np.bincount(a[0, 0], minlength=3) >= 2)  # a bijection of 7 symbols mod 3
