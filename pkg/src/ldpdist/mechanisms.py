"""Randomized response and RAPPOR channels, plus client-side encoders.

Symbols are 0-based indices. Two families of encoders live here:

* per-report encoders (``encode_krr``, ``encode_rappor``) that privatize what
  a single client holds, and
* aggregate samplers (``krr_report_counts``, ``rappor_bit_counts``) that draw
  the sufficient statistics of ``n`` reports directly from the input counts.
  They have exactly the same law as summing per-report encodings, and let
  simulations run at n = 10^6 without materializing an ``n x k`` bit matrix.
"""
from __future__ import annotations

import math
from typing import NamedTuple

import numpy as np
from scipy.special import expit

from .core import (
    DPCheck,
    PROB_TOL,
    ValidationError,
    as_budget,
    check_prob_vector,
    column_max_ratio,
)


class FlipParams(NamedTuple):
    keep_prob: float
    flip_prob: float


def rappor_flip_params(budget, bits_per_change: int = 2) -> FlipParams:
    """Per-bit keep/flip probabilities for a bit-flipping mechanism.

    Two inputs whose encodings differ in ``bits_per_change`` positions get
    a per-bit likelihood ratio of ``exp(eps / bits_per_change)``. One-hot
    k-RAPPOR uses 2; an h-hash Bloom filter uses ``2 * h``.
    """
    eps = as_budget(budget).epsilon / bits_per_change
    return FlipParams(float(expit(eps)), float(expit(-eps)))


def _check_k(k: int) -> int:
    if int(k) != k or k < 2:
        raise ValidationError("k must be >= 2")
    return int(k)


def _check_symbols(x, k: int) -> np.ndarray:
    x = np.asarray(x)
    if x.size and (np.any(x < 0) or np.any(x >= k)):
        raise ValidationError(f"symbol out of range [0, {k})")
    return x


def krr_keep_prob(k: int, budget) -> float:
    """Probability that k-RR reports the true symbol, ``e^eps / (e^eps + k - 1)``."""
    e = as_budget(budget).exp_epsilon
    return 1.0 if math.isinf(e) else e / (e + (k - 1))


def warner_channel(budget) -> np.ndarray:
    """The 2x2 randomized response matrix ``[[e, 1], [1, e]] / (e + 1)``."""
    e = as_budget(budget).exp_epsilon
    if math.isinf(e):
        return np.eye(2)
    return np.array([[e, 1.0], [1.0, e]]) / (e + 1.0)


def build_krr_channel(k: int, budget) -> np.ndarray:
    """k-ary randomized response as a ``k x k`` row-stochastic matrix."""
    k = _check_k(k)
    e = as_budget(budget).exp_epsilon
    if math.isinf(e):
        return np.eye(k)
    q = np.full((k, k), 1.0 / (e + (k - 1)))
    np.fill_diagonal(q, e / (e + (k - 1)))
    return q


def krr_output_distribution(p, budget) -> np.ndarray:
    """Distribution of k-RR outputs when inputs follow ``p``."""
    p = check_prob_vector(p)
    k = p.size
    e = as_budget(budget).exp_epsilon
    if math.isinf(e):
        return p.copy()
    return (e - 1.0) / (e + (k - 1)) * p + 1.0 / (e + (k - 1))


def rappor_bit_marginal(p, budget) -> np.ndarray:
    """``P(Y_j = 1)`` for each coordinate of a k-RAPPOR report."""
    p = check_prob_vector(p)
    keep, flip = rappor_flip_params(budget)
    return (keep - flip) * p + flip


def encode_krr(x, k: int, budget, rng: np.random.Generator):
    """Privatize symbol(s) ``x`` with k-ary randomized response.

    Reports the truth with probability ``e^eps / (e^eps + k - 1)``, and
    otherwise one of the other ``k - 1`` symbols uniformly. Accepts a
    scalar or an array of symbols.
    """
    k = _check_k(k)
    scalar = np.ndim(x) == 0
    x = _check_symbols(x, k)
    keep = krr_keep_prob(k, budget)
    u = rng.random(np.shape(x))
    lie = rng.integers(0, k - 1, size=np.shape(x))
    lie = lie + (lie >= x)
    y = np.where(u < keep, x, lie)
    return int(y) if scalar else y


def encode_rappor(x, k: int, budget, rng: np.random.Generator) -> np.ndarray:
    """One-hot encode ``x`` and flip each bit with probability ``1/(1+e^{eps/2})``.

    Returns a ``uint8`` array of shape ``(k,)`` for a scalar symbol or
    ``(n, k)`` for an array of ``n`` symbols.
    """
    k = _check_k(k)
    x = _check_symbols(x, k)
    _, flip = rappor_flip_params(budget)
    onehot = (np.arange(k) == np.asarray(x)[..., None]).astype(np.uint8)
    flips = rng.random(onehot.shape) < flip
    return onehot ^ flips.astype(np.uint8)


class RapporAccumulator:
    """Running column sums ``T_j`` of k-RAPPOR reports."""

    def __init__(self, k: int):
        self.k = _check_k(k)
        self.bit_counts = np.zeros(self.k, dtype=np.int64)
        self.n = 0

    def add(self, bits) -> None:
        bits = np.atleast_2d(np.asarray(bits, dtype=np.int64))
        if bits.shape[1] != self.k:
            raise ValidationError(f"expected reports of length {self.k}")
        self.bit_counts += bits.sum(axis=0)
        self.n += bits.shape[0]


# -- aggregate samplers -------------------------------------------------------

def krr_report_counts(x_counts, budget, rng: np.random.Generator) -> np.ndarray:
    """Histogram of k-RR outputs for inputs with histogram ``x_counts``.

    Uses the decomposition of k-RR as "report the truth with probability
    ``(e^eps - 1)/(e^eps + k - 1)``, otherwise a uniform symbol over all
    ``k``", which gives the same output law. ``x_counts`` may carry leading
    batch axes; the last axis is the alphabet.
    """
    x_counts = np.asarray(x_counts, dtype=np.int64)
    k = _check_k(x_counts.shape[-1])
    e = as_budget(budget).exp_epsilon
    truth = 1.0 if math.isinf(e) else (e - 1.0) / (e + (k - 1))
    kept = rng.binomial(x_counts, truth)
    pool = (x_counts - kept).sum(axis=-1)
    return kept + rng.multinomial(pool, np.full(k, 1.0 / k))


def noisy_bit_counts(ones, totals, flip_prob: float, rng: np.random.Generator) -> np.ndarray:
    """Counts of set bits after independent flipping.

    ``ones`` clients hold a 1 in the position and ``totals - ones`` hold a 0.
    """
    ones = np.asarray(ones, dtype=np.int64)
    zeros = np.asarray(totals, dtype=np.int64) - ones
    return rng.binomial(ones, 1.0 - flip_prob) + rng.binomial(zeros, flip_prob)


def rappor_bit_counts(x_counts, budget, rng: np.random.Generator) -> np.ndarray:
    """Column sums ``T_j`` of k-RAPPOR reports for inputs with histogram ``x_counts``."""
    x_counts = np.asarray(x_counts, dtype=np.int64)
    _check_k(x_counts.shape[-1])
    _, flip = rappor_flip_params(budget)
    n = x_counts.sum(axis=-1, keepdims=True)
    return noisy_bit_counts(x_counts, n, flip, rng)


# -- enumerated channels ------------------------------------------------------

def bit_patterns(k: int, start: int = 0, stop: int | None = None) -> np.ndarray:
    """Rows are the binary expansions (bit ``j`` = ``(y >> j) & 1``) of ``y``."""
    stop = 1 << k if stop is None else stop
    y = np.arange(start, stop, dtype=np.int64)
    return ((y[:, None] >> np.arange(k)) & 1).astype(np.uint8)


def bitflip_channel(codes, flip_prob: float, start: int = 0, stop: int | None = None) -> np.ndarray:
    """Channel from binary codes (rows of ``codes``) to all ``2^k`` flipped outputs.

    Only the output columns ``start..stop`` are built, so large channels can
    be checked block by block.
    """
    codes = np.asarray(codes, dtype=np.uint8)
    k = codes.shape[1]
    ys = bit_patterns(k, start, stop)
    diff = (codes[:, None, :] != ys[None, :, :]).sum(axis=2)
    return flip_prob ** diff * (1.0 - flip_prob) ** (k - diff)


def build_rappor_channel(k: int, budget) -> np.ndarray:
    """The full ``k x 2^k`` k-RAPPOR channel. Practical for ``k <= 16``."""
    k = _check_k(k)
    _, flip = rappor_flip_params(budget)
    return bitflip_channel(np.eye(k, dtype=np.uint8), flip)


def verify_bitflip_dp(codes, flip_prob: float, budget, block: int = 1 << 14) -> DPCheck:
    """Exhaustive DP check of a bit-flipping channel without building it whole."""
    codes = np.asarray(codes, dtype=np.uint8)
    k = codes.shape[1]
    ratio = 1.0
    for start in range(0, 1 << k, block):
        stop = min(start + block, 1 << k)
        ratio = max(ratio, column_max_ratio(bitflip_channel(codes, flip_prob, start, stop)))
    e = as_budget(budget).exp_epsilon
    return DPCheck(ratio, bool(ratio <= e * (1 + PROB_TOL)))


def verify_rappor_dp(k: int, budget, block: int = 1 << 14) -> DPCheck:
    _, flip = rappor_flip_params(budget)
    return verify_bitflip_dp(np.eye(_check_k(k), dtype=np.uint8), flip, budget, block)
