"""Hashed, cohort-based mechanisms for alphabets not known in advance.

O-RR: each client is placed in one of ``C`` cohorts, hashes its symbol into
``k`` buckets with the cohort's hash and privatizes the bucket with k-RR.
O-RAPPOR: the symbol sets ``h`` bits of a ``k``-bit Bloom filter (one filter
per cohort) which are then flipped RAPPOR-style.

Decoding fixes a candidate set of ``S`` symbols and solves the linear system
linking candidate probabilities to per-cohort report frequencies by least
squares, followed by projection onto the simplex.

In ``PERMUTATION`` mode (closed alphabets ``[0, S)``) the generic hashes are
replaced by seeded per-cohort permutations of ``[0, S)`` before the modulus.
"""
from __future__ import annotations

import csv
import enum
import math
import warnings
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .core import ValidationError, make_rng
from .decoders import _positive_budget, project_simplex
from .hashing import derive_key, keyed_hash, symbol_digests
from .mechanisms import (
    bitflip_channel,
    build_krr_channel,
    encode_krr,
    rappor_flip_params,
)

_COHORT_TAG = 0x636F686F7274  # "cohort"
_PERM_TAG = 0x7065726D  # "perm"


class HashMode(str, enum.Enum):
    KEYED = "keyed"
    PERMUTATION = "permutation"


class RankDeficientWarning(UserWarning):
    """The least-squares system has fewer independent equations than candidates."""


@dataclass(frozen=True)
class CohortScheme:
    """Cohort and hashing configuration shared by clients and the decoder.

    ``alphabet_size`` is required in permutation mode, where symbols must be
    integers in ``[0, alphabet_size)``. ``identity`` replaces every
    permutation by the identity, which makes a one-cohort scheme with
    ``k == alphabet_size`` coincide with plain k-RR / k-RAPPOR.
    """

    num_cohorts: int
    k: int
    num_hashes: int = 1
    master_seed: int = 0
    mode: HashMode = HashMode.KEYED
    alphabet_size: int | None = None
    identity: bool = False

    def __post_init__(self):
        object.__setattr__(self, "mode", HashMode(self.mode))
        if self.num_cohorts < 1:
            raise ValidationError("num_cohorts must be >= 1")
        if self.k < 2:
            raise ValidationError("k must be >= 2")
        if self.num_hashes < 1:
            raise ValidationError("num_hashes must be >= 1")
        if self.mode is HashMode.PERMUTATION and (self.alphabet_size or 0) < 1:
            raise ValidationError("permutation mode needs alphabet_size >= 1")


class OpenReport(NamedTuple):
    cohort: int
    payload: object  # bucket index for O-RR, bit array for O-RAPPOR


# -- hashing ------------------------------------------------------------------

def assign_cohort(client_id, scheme: CohortScheme):
    """Cohort of a client: a uniform hash of ``(master_seed, client_id)`` into ``[0, C)``."""
    if scheme.num_cohorts == 1:
        return 0 if np.ndim(client_id) == 0 else np.zeros(np.shape(client_id), dtype=np.int64)
    h = derive_key(scheme.master_seed, _COHORT_TAG, client_id)
    c = (h % np.uint64(scheme.num_cohorts)).astype(np.int64)
    return int(c) if np.ndim(client_id) == 0 else c


def cohort_permutation(scheme: CohortScheme, cohort: int, hash_index: int = 0) -> np.ndarray:
    S = scheme.alphabet_size
    if scheme.identity:
        return np.arange(S)
    rng = make_rng(scheme.master_seed, (_PERM_TAG, cohort, hash_index))
    return rng.permutation(S)


def bucket_table(symbols, scheme: CohortScheme) -> np.ndarray:
    """Buckets of every symbol under every (cohort, hash) pair.

    Returns an ``int64`` array of shape ``(C, h, len(symbols))``.
    """
    C, h = scheme.num_cohorts, scheme.num_hashes
    if scheme.mode is HashMode.PERMUTATION:
        idx = np.asarray(symbols)
        if idx.dtype.kind not in "iu" or np.any(idx < 0) or np.any(idx >= scheme.alphabet_size):
            raise ValidationError(f"symbol outside the candidate set [0, {scheme.alphabet_size})")
        out = np.empty((C, h, idx.size), dtype=np.int64)
        for c in range(C):
            for j in range(h):
                out[c, j] = cohort_permutation(scheme, c, j)[idx] % scheme.k
        return out
    digests = symbol_digests(symbols)
    keys = derive_key(scheme.master_seed, np.arange(C)[:, None], np.arange(h)[None, :])
    hv = keyed_hash(digests[None, None, :], keys[:, :, None])
    return (hv % np.uint64(scheme.k)).astype(np.int64)


def cohort_hash(s, cohort: int, hash_index: int, scheme: CohortScheme) -> int:
    """Bucket in ``[0, k)`` of symbol ``s`` for one cohort and hash index."""
    if not (0 <= cohort < scheme.num_cohorts and 0 <= hash_index < scheme.num_hashes):
        raise ValidationError("cohort or hash index out of range")
    if scheme.mode is HashMode.PERMUTATION:
        if not isinstance(s, (int, np.integer)) or not 0 <= s < scheme.alphabet_size:
            raise ValidationError(f"symbol {s!r} outside the candidate set")
        return int(cohort_permutation(scheme, cohort, hash_index)[s] % scheme.k)
    key = derive_key(scheme.master_seed, cohort, hash_index)
    return int(keyed_hash(symbol_digests([s])[0], key) % np.uint64(scheme.k))


def bloom_code(s, cohort: int, scheme: CohortScheme) -> np.ndarray:
    """The ``k``-bit Bloom filter of ``s`` in ``cohort``."""
    bits = np.zeros(scheme.k, dtype=np.uint8)
    for j in range(scheme.num_hashes):
        bits[cohort_hash(s, cohort, j, scheme)] = 1
    return bits


# -- encoding -----------------------------------------------------------------

def encode_orr(s, client_id, scheme: CohortScheme, budget, rng: np.random.Generator) -> OpenReport:
    """Privatize symbol ``s`` with O-RR; the cohort is sent in the clear."""
    c = assign_cohort(client_id, scheme)
    x = cohort_hash(s, c, 0, scheme)
    return OpenReport(c, encode_krr(x, scheme.k, budget, rng))


def orappor_flip_prob(scheme: CohortScheme, budget) -> float:
    # Bloom codes of two symbols differ in at most 2h bits
    return rappor_flip_params(budget, bits_per_change=2 * scheme.num_hashes).flip_prob


def encode_orappor(s, client_id, scheme: CohortScheme, budget, rng: np.random.Generator) -> OpenReport:
    """Privatize symbol ``s`` with O-RAPPOR.

    Each Bloom bit is flipped with probability ``1 / (1 + e^{eps / 2h})``;
    since two codes differ in at most ``2h`` bits the whole report is
    ``eps``-locally private.
    """
    c = assign_cohort(client_id, scheme)
    code = bloom_code(s, c, scheme)
    flips = rng.random(scheme.k) < orappor_flip_prob(scheme, budget)
    return OpenReport(c, code ^ flips.astype(np.uint8))


# -- design matrix ------------------------------------------------------------

@dataclass
class DesignMatrix:
    """Sparse binary map from candidates to per-cohort report positions.

    ``buckets[c, j, s]`` is the bucket of candidate ``s`` under hash ``j`` in
    cohort ``c``, or -1 when it repeats an earlier hash of the same symbol
    (a Bloom collision). Row ``c * k + y`` of the dense form is cohort ``c``,
    bucket ``y``.
    """

    buckets: np.ndarray
    k: int
    candidates: list

    @property
    def num_cohorts(self) -> int:
        return self.buckets.shape[0]

    @property
    def column_weights(self) -> np.ndarray:
        return (self.buckets >= 0).sum(axis=(0, 1))

    def dense(self) -> np.ndarray:
        C, h, S = self.buckets.shape
        out = np.zeros((C * self.k, S), dtype=np.uint8)
        cs, _, ss = np.nonzero(self.buckets >= 0)
        out[cs * self.k + self.buckets[self.buckets >= 0], ss] = 1
        return out

    def gram(self, weights=None) -> np.ndarray:
        """``H^T W H`` computed from bucket collisions, without forming ``H``."""
        C, h, S = self.buckets.shape
        w = np.ones(C) if weights is None else np.asarray(weights, dtype=float)
        g = np.zeros((S, S))
        for a in range(h):
            for b in range(h):
                ba, bb = self.buckets[:, a, :], self.buckets[:, b, :]
                eq = (ba[:, :, None] == bb[:, None, :]) & (ba[:, :, None] >= 0)
                g += np.tensordot(w, eq, axes=1)
        return g

    def rmatvec(self, target, weights=None) -> np.ndarray:
        """``H^T W t`` for a target of shape ``(C, k)``."""
        C, h, S = self.buckets.shape
        t = np.asarray(target, dtype=float).reshape(C, self.k)
        if weights is not None:
            t = t * np.asarray(weights, dtype=float)[:, None]
        valid = self.buckets >= 0
        vals = np.take_along_axis(t[:, None, :].repeat(h, axis=1), np.where(valid, self.buckets, 0), axis=2)
        return np.where(valid, vals, 0.0).sum(axis=(0, 1))

    def to_csv(self, path) -> None:
        """Write ones as ``cohort,bucket,symbol_index`` coordinate rows."""
        rows = sorted({(int(c), int(self.buckets[c, j, s]), int(s))
                       for c, j, s in zip(*np.nonzero(self.buckets >= 0))})
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["cohort", "bucket", "symbol_index"])
            w.writerows(rows)


def build_design_matrix(candidates, scheme: CohortScheme) -> DesignMatrix:
    """Design matrix of the candidate set under ``scheme`` (all ``h`` hashes)."""
    candidates = list(candidates)
    if not candidates:
        raise ValidationError("candidate set is empty")
    if len(set(candidates)) != len(candidates):
        raise ValidationError("candidate set has duplicates")
    buckets = bucket_table(candidates, scheme)
    for j in range(1, scheme.num_hashes):
        dup = np.any(buckets[:, :j, :] == buckets[:, j:j + 1, :], axis=1)
        buckets[:, j, :][dup] = -1
    return DesignMatrix(buckets, scheme.k, candidates)


def read_candidates(path) -> list[str]:
    """Read a newline-delimited UTF-8 candidate list, skipping blank lines."""
    with open(path, encoding="utf-8") as fh:
        return [line.rstrip("\r\n") for line in fh if line.strip()]


def _solve_normal(gram: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    sol, _, rank, _ = np.linalg.lstsq(gram, rhs, rcond=None)
    if rank < gram.shape[0]:
        warnings.warn(
            f"least-squares system has rank {rank} < {gram.shape[0]} candidates; "
            "returning the minimum-norm solution", RankDeficientWarning, stacklevel=3)
    return sol


def decode_orr(counts, n: int, candidates, scheme: CohortScheme, budget,
               design: DesignMatrix | None = None, project: bool = True) -> np.ndarray:
    """Least-squares O-RR estimate over ``candidates``.

    ``counts[c, y]`` is the number of reports from cohort ``c`` with payload
    ``y``. The target ``(C (e^eps + k - 1) m_hat - 1) / (e^eps - 1)`` is
    matched by ``H p`` in the least-squares sense (minimum-norm when ``H``
    has deficient rank) and the result projected onto the simplex.
    """
    if n < 1:
        raise ValidationError("n must be >= 1")
    budget = _positive_budget(budget)
    C, k = scheme.num_cohorts, scheme.k
    m_hat = np.asarray(counts, dtype=float).reshape(C, k) / n
    e = budget.exp_epsilon
    target = (C * (e + k - 1.0) * m_hat - 1.0) / math.expm1(budget.epsilon)
    design = design or build_design_matrix(candidates, scheme)
    p = _solve_normal(design.gram(), design.rmatvec(target))
    return project_simplex(p) if project else p


def decode_orappor(bit_counts, cohort_sizes, candidates, scheme: CohortScheme, budget,
                   design: DesignMatrix | None = None, project: bool = True) -> np.ndarray:
    """Least-squares O-RAPPOR estimate over ``candidates``.

    Each cohort's bit frequencies are unbiased with the per-bit flip
    probability, then cohorts are weighted by their report counts (empty
    cohorts drop out) in the regression.
    """
    sizes = np.asarray(cohort_sizes, dtype=float)
    if np.any(sizes < 0) or sizes.sum() < 1:
        raise ValidationError("cohort sizes must be >= 0 with a positive total")
    _positive_budget(budget)
    C, k = scheme.num_cohorts, scheme.k
    t = np.asarray(bit_counts, dtype=float).reshape(C, k)
    f = orappor_flip_prob(scheme, budget)
    with np.errstate(invalid="ignore", divide="ignore"):
        freq = np.where(sizes[:, None] > 0, t / sizes[:, None], f)
    target = (freq - f) / (1.0 - 2.0 * f)
    design = design or build_design_matrix(candidates, scheme)
    p = _solve_normal(design.gram(sizes), design.rmatvec(target, sizes))
    return project_simplex(p) if project else p


# -- enumerated channels ------------------------------------------------------

def orr_joint_channel(candidates, scheme: CohortScheme, budget) -> np.ndarray:
    """``S x (C k)`` channel from candidate to the joint report ``(cohort, y)``."""
    q = build_krr_channel(scheme.k, budget)
    b = bucket_table(list(candidates), scheme)[:, 0, :]  # (C, S)
    C = scheme.num_cohorts
    return np.concatenate([q[b[c]] / C for c in range(C)], axis=1)


def orappor_joint_channel(candidates, scheme: CohortScheme, budget) -> np.ndarray:
    """``S x (C 2^k)`` channel of O-RAPPOR reports. Practical for small ``k``."""
    design = build_design_matrix(list(candidates), scheme)
    f = orappor_flip_prob(scheme, budget)
    C, k = scheme.num_cohorts, scheme.k
    dense = design.dense().reshape(C, k, -1)
    return np.concatenate([bitflip_channel(dense[c].T, f) / C for c in range(C)], axis=1)


# -- distinguishability -------------------------------------------------------

class Distinguishability(NamedTuple):
    prob_distinguishable: float
    expected_recoverable_mass: float
    constrained: bool


def distinguishability_stats(S: int, k: int, C: int) -> Distinguishability:
    """Chance that a candidate's hash tuple is unique among ``S`` candidates.

    ``((k^C - 1) / k^C)^(S - 1)``, evaluated in log space. The expected
    recoverable mass equals the same value; ``constrained`` is ``k C >= S``.
    """
    if min(S, k, C) < 1:
        raise ValidationError("S, k and C must be >= 1")
    log_miss = -C * math.log(k)
    prob = math.exp((S - 1) * math.log1p(-math.exp(log_miss))) if k > 1 else float(S == 1)
    return Distinguishability(prob, prob, k * C >= S)


def simulate_distinguishable_fraction(S: int, k: int, C: int, draws: int, seed: int = 0,
                                      mode: HashMode = HashMode.KEYED) -> np.ndarray:
    """Fraction of distinguishable candidates for ``draws`` independent hash families."""
    out = np.empty(draws)
    symbols = np.arange(S)
    for d in range(draws):
        scheme = CohortScheme(C, k, master_seed=int(derive_key(seed, d)), mode=mode, alphabet_size=S)
        tuples = bucket_table(symbols, scheme)[:, 0, :].T
        _, inverse, counts = np.unique(tuples, axis=0, return_inverse=True, return_counts=True)
        out[d] = np.mean(counts[inverse.ravel()] == 1)
    return out
