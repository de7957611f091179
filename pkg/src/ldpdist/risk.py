"""Closed-form risks of the empirical estimators and related baselines.

The l1 expressions are asymptotic (valid as n grows); the squared-l2 ones
are exact for every n.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import ValidationError, as_budget, check_prob_vector


@dataclass(frozen=True)
class RiskReport:
    mechanism: str
    l2_squared: float
    l1_asymptotic: float  # large-n approximation
    n: int
    epsilon: float
    p: np.ndarray


def _check(n, budget):
    if n < 1:
        raise ValidationError("n must be >= 1")
    budget = as_budget(budget)
    if budget.epsilon == 0:
        raise ValidationError("risk of the empirical estimator is unbounded at epsilon = 0")
    return budget


def krr_risk(p, n: int, budget) -> RiskReport:
    """Expected squared-l2 and asymptotic l1 loss of the k-RR empirical estimator."""
    p = check_prob_vector(p)
    budget = _check(n, budget)
    k = p.size
    a = math.expm1(budget.epsilon)
    l2 = (1 - np.sum(p ** 2)) / n + (k - 1) / n * (k + 2 * a) / a ** 2
    l1 = np.sum(np.sqrt(2 * (a * p + 1) * (a * (1 - p) + k - 1) / (math.pi * n * a ** 2)))
    return RiskReport("krr", float(l2), float(l1), n, budget.epsilon, p)


def rappor_risk(p, n: int, budget) -> RiskReport:
    """Expected squared-l2 and asymptotic l1 loss of the k-RAPPOR empirical estimator."""
    p = check_prob_vector(p)
    budget = _check(n, budget)
    k = p.size
    b = math.expm1(budget.epsilon / 2)
    l2 = (1 - np.sum(p ** 2)) / n + k * (b + 1) / (n * b ** 2)
    l1 = np.sum(np.sqrt(2 * (b * p + 1) * (b * (1 - p) + 1) / (math.pi * n * b ** 2)))
    return RiskReport("rappor", float(l2), float(l1), n, budget.epsilon, p)


def worst_case_risks(k: int, n: int, budget, mechanism: str) -> dict:
    """Risks at the uniform distribution, which upper-bound every other ``p``."""
    budget = _check(n, budget)
    base_l2 = (1 - 1 / k) / n
    base_l1 = math.sqrt(2 * (k - 1) / (math.pi * n))
    mech = mechanism.lower()
    if mech == "krr":
        e, a = budget.exp_epsilon, math.expm1(budget.epsilon)
        l2 = (1 + (k + 2 * a) / a ** 2 * k) * base_l2
        l1 = (e + k - 1) / a * base_l1
    elif mech == "rappor":
        s, b = math.exp(budget.epsilon / 2), math.expm1(budget.epsilon / 2)
        l2 = (1 + k ** 2 * s / ((k - 1) * b ** 2)) * base_l2
        l1 = math.sqrt((s + k - 1) * (s * (k - 1) + 1) / (b ** 2 * (k - 1))) * base_l1
    else:
        raise ValidationError(f"unknown mechanism {mechanism!r}")
    return {"l2_squared": l2, "l1_asymptotic": l1}


def sample_size_factor(k: int, budget, mechanism: str, loss: str = "l2") -> float:
    """How many times more samples the mechanism needs than non-private
    estimation to reach the same worst-case loss."""
    budget = _check(1, budget)
    risks = worst_case_risks(k, 1, budget, mechanism)
    if loss == "l2":
        return risks["l2_squared"] / (1 - 1 / k)
    if loss == "l1":
        return (risks["l1_asymptotic"] / math.sqrt(2 * (k - 1) / math.pi)) ** 2
    raise ValidationError(f"unknown loss {loss!r}")


def crossover_f(k: int, budget) -> float:
    """Ratio of the k-RAPPOR to the k-RR privacy term of the squared-l2 risk.

    ``k/(k-1) ((e^eps - 1)/(e^{eps/2} - 1))^2 e^{eps/2} / (2 e^eps + k - 2)``;
    k-RR has the smaller squared-l2 risk for every ``p`` exactly when it is >= 1.
    """
    if k < 2:
        raise ValidationError("k must be >= 2")
    budget = _check(1, budget)
    eps = budget.epsilon
    ratio = math.expm1(eps) / math.expm1(eps / 2)
    return k / (k - 1) * ratio ** 2 * math.exp(eps / 2) / (2 * math.exp(eps) + k - 2)


def nonprivate_risks(p, n: int) -> dict:
    """Risks of the empirical and minimax estimators on raw (non-private) samples."""
    p = check_prob_vector(p)
    if n < 1:
        raise ValidationError("n must be >= 1")
    k = p.size
    return {
        "empirical_l2": float((1 - np.sum(p ** 2)) / n),
        "empirical_l1_asymptotic": float(np.sum(np.sqrt(2 * p * (1 - p) / (math.pi * n)))),
        "minimax_l2": (1 - 1 / k) / (math.sqrt(n) + 1) ** 2,
        # the O(n^-3/4) remainder is dropped
        "minimax_l1_asymptotic": math.sqrt(2 * (k - 1) / (math.pi * n)),
    }


def minimax_estimator_l2(counts, n: int) -> np.ndarray:
    """Add-``sqrt(n)/k`` smoothed frequencies, minimax under squared l2."""
    counts = np.asarray(counts, dtype=float)
    if n < 1:
        raise ValidationError("n must be >= 1")
    k = counts.size
    r = math.sqrt(n)
    return (r / k + counts) / (r + n)


def minimax_rate_bounds(k: int, n: int, budget) -> dict:
    """Private minimax rates with the unspecified universal constants set to 1.

    These are rates only. Outside ``eps in [0, 1]`` the expressions are
    extrapolations and ``extrapolated`` is set.
    """
    eps = as_budget(budget).epsilon
    ne2 = n * eps ** 2
    inv = math.inf if ne2 == 0 else 1 / ne2
    return {
        "l2_lower": min(1.0, math.sqrt(inv), k * inv),
        "l2_upper": min(1.0, k * inv),
        "l1_lower": min(1.0, k * math.sqrt(inv)),
        "l1_upper": min(1.0, k * math.sqrt(inv)),
        "extrapolated": not 0 <= eps <= 1,
        "note": "rate only; constants unspecified",
    }
