"""Numeric building blocks shared by every other module.

Probability vectors and channels are plain numpy arrays; the helpers here
validate them. Randomness is drawn from counter-based Philox generators keyed
by ``(seed, stream_id)`` so any trial, cohort or client can be replayed
independently of execution order.
"""
from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np

PROB_TOL = 1e-9
MASK64 = (1 << 64) - 1


class ValidationError(ValueError):
    """Raised when an input violates a probability or channel invariant."""


def check_prob_vector(p, name: str = "p") -> np.ndarray:
    """Return ``p`` as a float array after checking it lies on the simplex."""
    p = np.asarray(p, dtype=float)
    if p.ndim != 1 or p.size < 2:
        raise ValidationError(f"{name} must be a 1-d vector with at least 2 entries")
    if not np.all(np.isfinite(p)):
        raise ValidationError(f"{name} has non-finite entries")
    if np.any(p < 0):
        raise ValidationError(f"{name} has negative entries")
    if abs(p.sum() - 1.0) > PROB_TOL:
        raise ValidationError(f"{name} sums to {p.sum()!r}, not 1")
    return p


def check_signed_vector(v, name: str = "v") -> np.ndarray:
    v = np.asarray(v, dtype=float)
    if v.ndim != 1 or v.size < 1:
        raise ValidationError(f"{name} must be a non-empty 1-d vector")
    if not np.all(np.isfinite(v)):
        raise ValidationError(f"{name} has non-finite entries")
    return v


def check_channel(q) -> np.ndarray:
    """Validate a row-stochastic ``k x l`` matrix and return it as floats."""
    q = np.asarray(q, dtype=float)
    if q.ndim != 2 or q.shape[0] < 1 or q.shape[1] < 1:
        raise ValidationError("channel must be a non-empty 2-d matrix")
    if not np.all(np.isfinite(q)) or np.any(q < 0):
        bad = int(np.argmax(np.any(~np.isfinite(q) | (q < 0), axis=1)))
        raise ValidationError(f"channel row {bad} has negative or non-finite entries")
    sums = q.sum(axis=1)
    off = np.abs(sums - 1.0) > PROB_TOL
    if np.any(off):
        bad = int(np.argmax(off))
        raise ValidationError(f"channel row {bad} sums to {sums[bad]!r}, not 1")
    return q


_LN_RE = re.compile(r"^\s*(?P<mult>[0-9.eE+-]*)\s*\*?\s*ln\s*\(?\s*(?P<arg>[0-9.eE+-]+)\s*\)?\s*$")


def parse_epsilon(text) -> float:
    """Parse an epsilon given in nats, accepting ``lnK`` and ``2ln8`` forms."""
    if isinstance(text, (int, float)):
        return float(text)
    m = _LN_RE.match(str(text))
    if m:
        mult = float(m.group("mult")) if m.group("mult") else 1.0
        return mult * math.log(float(m.group("arg")))
    return float(text)


@dataclass(frozen=True)
class PrivacyBudget:
    """A local privacy level ``epsilon`` (nats) with its exponential cached."""

    epsilon: float
    exp_epsilon: float = field(init=False, repr=False)

    def __post_init__(self):
        eps = float(self.epsilon)
        if not math.isfinite(eps) or eps < 0:
            raise ValidationError(f"epsilon must be finite and >= 0, got {self.epsilon!r}")
        object.__setattr__(self, "epsilon", eps)
        object.__setattr__(self, "exp_epsilon", math.exp(eps) if eps < 709 else math.inf)

    @classmethod
    def parse(cls, text) -> "PrivacyBudget":
        return cls(parse_epsilon(text))

    @property
    def exp_half(self) -> float:
        return math.exp(self.epsilon / 2) if self.epsilon < 1418 else math.inf


def as_budget(budget) -> PrivacyBudget:
    if isinstance(budget, PrivacyBudget):
        return budget
    return PrivacyBudget.parse(budget)


# -- randomness ---------------------------------------------------------------

def mix64(x: int) -> int:
    """SplitMix64 finalizer: a bijective avalanche on 64-bit integers."""
    x &= MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & MASK64
    return x ^ (x >> 31)


def combine64(*parts: int) -> int:
    """Fold integers into one well-mixed 64-bit value (order sensitive)."""
    h = 0x9E3779B97F4A7C15
    for part in parts:
        h = mix64(h ^ mix64((int(part) + 0x9E3779B97F4A7C15) & MASK64))
    return h


def make_rng(seed: int, stream_id: int | Sequence[int] = 0) -> np.random.Generator:
    """Return a Philox generator keyed by ``(seed, stream_id)``.

    Philox is counter-based with a documented output function, so a given
    key yields the same sequence on every platform. Tuples of ids (for
    example ``(trial, cohort)``) are folded into a single 64-bit stream id.
    """
    if not isinstance(stream_id, (int, np.integer)):
        stream_id = combine64(*stream_id)
    key = np.array([int(seed) & MASK64, int(stream_id) & MASK64], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def sample_categorical(dist, rng: np.random.Generator, size=None):
    """Draw indices ``i`` with probability ``dist[i]`` by inverse CDF."""
    cdf = np.cumsum(np.asarray(dist, dtype=float))
    u = rng.random(size) * cdf[-1]
    idx = np.searchsorted(cdf, u, side="right")
    # u can equal cdf[-1] only through rounding; clip back into range
    return np.minimum(idx, cdf.size - 1) if size is not None else int(min(idx, cdf.size - 1))


def empirical_frequencies(reports, l: int) -> np.ndarray:
    """Histogram of symbol indices in ``[0, l)`` normalised to sum to one."""
    reports = np.asarray(reports)
    if reports.size == 0:
        raise ValidationError("need at least one report")
    if reports.min() < 0 or reports.max() >= l:
        raise ValidationError(f"report index out of range [0, {l})")
    return np.bincount(reports.ravel(), minlength=l) / reports.size


# -- privacy verification -----------------------------------------------------

class DPCheck(NamedTuple):
    max_ratio: float
    satisfied: bool


def column_max_ratio(q: np.ndarray) -> float:
    """Largest ``Q(y|x) / Q(y|x')`` over columns ``y`` and row pairs.

    0/0 counts as 1 and positive/0 as infinity.
    """
    q = np.asarray(q, dtype=float)
    hi = q.max(axis=0)
    lo = q.min(axis=0)
    if np.any((lo == 0) & (hi > 0)):
        return math.inf
    nz = hi > 0
    if not np.any(nz):
        return 1.0
    return float(max(1.0, np.max(hi[nz] / lo[nz])))


def verify_channel_dp(q, budget) -> DPCheck:
    """Check the local DP inequality on every singleton output of ``q``.

    For a finite output alphabet the bound on arbitrary events follows by
    summing the singleton bounds, so singletons are sufficient.
    """
    q = check_channel(q)
    budget = as_budget(budget)
    ratio = column_max_ratio(q)
    return DPCheck(ratio, bool(ratio <= budget.exp_epsilon * (1 + PROB_TOL)))
