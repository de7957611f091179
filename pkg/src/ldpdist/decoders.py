"""Estimators that turn privatized sufficient statistics back into distributions.

``decode_krr_empirical`` and ``decode_rappor_empirical`` invert the mechanism
linearly and can leave the simplex. ``normalize_truncate`` and
``project_simplex`` bring such estimates back; the two ``*_ml`` functions
maximize the likelihood over the simplex directly.
"""
from __future__ import annotations

import enum
import math

import numpy as np

from .core import ValidationError, as_budget, check_signed_vector
from .mechanisms import rappor_flip_params


class DecoderKind(str, enum.Enum):
    STANDARD = "standard"
    NORMALIZED = "normalized"
    PROJECTED = "projected"
    ML = "ml"


class ConvergenceError(RuntimeError):
    """The iterative RAPPOR ML solver hit its iteration cap.

    ``estimate`` holds the last feasible iterate and ``gap`` an upper bound on
    how far its log-likelihood is below the maximum.
    """

    def __init__(self, message, estimate, gap):
        super().__init__(message)
        self.estimate = estimate
        self.gap = gap


def _positive_budget(budget):
    budget = as_budget(budget)
    if budget.epsilon == 0:
        raise ValidationError("epsilon = 0 makes the mechanism non-invertible")
    return budget


def decode_krr_empirical(m_hat, k: int, budget) -> np.ndarray:
    """Invert k-RR: ``((e + k - 1) m_hat - 1) / (e - 1)`` with ``e = e^eps``.

    Entries sum to one but can be negative.
    """
    m_hat = np.asarray(m_hat, dtype=float)
    if m_hat.shape[-1] != k:
        raise ValidationError(f"m_hat has {m_hat.shape[-1]} entries, expected {k}")
    budget = _positive_budget(budget)
    e = budget.exp_epsilon
    if math.isinf(e):
        return m_hat.copy()
    em1 = math.expm1(budget.epsilon)
    return ((e + k - 1.0) * m_hat - 1.0) / em1


def decode_rappor_empirical(bit_counts, n: int, budget) -> np.ndarray:
    """Invert k-RAPPOR bit by bit from column sums ``T_j`` of ``n`` reports."""
    t = np.asarray(bit_counts, dtype=float)
    if n < 1:
        raise ValidationError("n must be >= 1")
    if np.any(t < 0) or np.any(t > n):
        raise ValidationError("bit counts must lie in [0, n]")
    _positive_budget(budget)
    keep, flip = rappor_flip_params(budget)
    return (t / n - flip) / (keep - flip)


def normalize_truncate(v) -> np.ndarray:
    """Zero the negative entries and rescale to sum to one."""
    v = check_signed_vector(v)
    w = np.clip(v, 0.0, None)
    s = w.sum()
    if s <= 0:
        raise ValidationError("cannot renormalize a vector with no positive entry")
    return w / s


def project_simplex(v) -> np.ndarray:
    """Euclidean projection of ``v`` onto the probability simplex.

    Sort-based algorithm: with ``u`` sorted in decreasing order, ``rho`` is
    the largest index where ``u_j - (cumsum(u)_j - 1) / j`` stays positive,
    and the projection is ``max(v - theta, 0)`` for the matching threshold.
    """
    v = check_signed_vector(v)
    u = v[np.argsort(-v, kind="stable")]
    css = np.cumsum(u) - 1.0
    j = np.arange(1, v.size + 1)
    rho = np.nonzero(u - css / j > 0)[0][-1]
    theta = css[rho] / (rho + 1)
    return np.maximum(v - theta, 0.0)


# -- maximum likelihood -------------------------------------------------------

def krr_log_likelihood(p, counts, budget) -> float:
    """``sum_i T_i log((e^eps - 1) p_i + 1)``, the k-RR log-likelihood up to a constant."""
    counts = np.asarray(counts, dtype=float)
    em1 = math.expm1(as_budget(budget).epsilon)
    terms = counts * np.log1p(em1 * np.asarray(p, dtype=float))
    return float(np.sum(terms[counts > 0]))


def decode_krr_ml(counts, n: int, budget) -> np.ndarray:
    """Exact maximum-likelihood estimate under k-RR by water-filling.

    The solution has the form ``[T_i / lam - 1/(e^eps - 1)]^+``. Sorting the
    counts once, the active set is the largest prefix of size ``rho`` whose
    implied entries are nonnegative, with
    ``lam = sum(active T) (e^eps - 1) / (e^eps - 1 + rho)``.
    """
    counts = np.asarray(counts, dtype=float)
    if n < 1 or counts.sum() != n:
        raise ValidationError("counts must be nonnegative and sum to n >= 1")
    budget = _positive_budget(budget)
    em1 = math.expm1(budget.epsilon)
    order = np.argsort(-counts, kind="stable")
    t = counts[order]
    rho = np.arange(1, t.size + 1)
    lam = np.cumsum(t) * em1 / (em1 + rho)
    feasible = t / lam - 1.0 / em1 >= 0
    r = np.nonzero(feasible)[0][-1]
    p = np.maximum(counts / lam[r] - 1.0 / em1, 0.0)
    p[order[r + 1:]] = 0.0
    return p / p.sum()


def rappor_log_likelihood(p, bit_counts, n: int, budget, clamp: float = 1e-12) -> float:
    """k-RAPPOR log-likelihood of ``p`` given column sums ``T_j`` of ``n`` reports."""
    t = np.asarray(bit_counts, dtype=float)
    _, d = rappor_flip_params(budget)
    p = np.clip(np.asarray(p, dtype=float), clamp, 1.0 - clamp)
    on = (1 - 2 * d) * p + d
    off = (1 - d) - (1 - 2 * d) * p
    return float(np.sum(t * np.log(on) + (n - t) * np.log(off)))


def _rappor_gradient(p, t, n, d, clamp):
    pc = np.clip(p, clamp, 1.0 - clamp)
    a = 1 - 2 * d
    return a * t / (a * pc + d) - a * (n - t) / ((1 - d) - a * pc)


def _rappor_terms(u, t, n):
    # per-coordinate log-likelihood as a function of u = P(bit set)
    with np.errstate(divide="ignore", invalid="ignore"):
        on = np.where(t > 0, t * np.log(u), 0.0)
        off = np.where(n - t > 0, (n - t) * np.log1p(-u), 0.0)
    return on + off


def _rappor_dual_gap(p, t, n, d) -> float:
    """Lagrangian duality gap of ``p``; an upper bound on its suboptimality.

    For a multiplier ``mu`` on ``sum(p) = 1`` the dual function separates
    into one-dimensional maximizations whose stationary points solve
    ``mu u^2 - (mu + a n) u + a T = 0`` with ``u = a p + d``.
    """
    from scipy.optimize import minimize_scalar

    a = 1 - 2 * d
    primal = float(np.sum(_rappor_terms(a * p + d, t, n)))

    def dual(mu):
        b = mu + a * n
        q = 0.5 * (b + math.copysign(1.0, b) * np.sqrt(np.maximum(b * b - 4 * mu * a * t, 0.0)))
        with np.errstate(divide="ignore", invalid="ignore"):
            # roots a T / q and q / mu; T = 0 or T = n adds a spurious root at
            # u = 0 or 1, and then the maximum can sit on that boundary instead
            r1 = np.where(q != 0, a * t / q, np.nan)
            r2 = q / mu if mu != 0 else np.full_like(t, np.nan)
        u = np.where(t > 0, 1.0, 0.0)
        u = np.where((r2 > 0) & (r2 < 1), r2, u)
        u = np.where((r1 > 0) & (r1 < 1), r1, u)
        u = np.clip(u, d, 1 - d)
        return mu + float(np.sum(_rappor_terms(u, t, n) - mu * (u - d) / a))

    g = _rappor_gradient(p, t, n, d, 0.0)
    lo, hi = float(g.min()), float(g.max())
    if hi - lo <= 0:
        return dual(lo) - primal
    res = minimize_scalar(dual, bounds=(lo, hi), method="bounded",
                          options={"xatol": 1e-12 * max(1.0, abs(lo), abs(hi))})
    return min(float(res.fun), dual(lo), dual(hi)) - primal


def decode_rappor_ml(bit_counts, n: int, budget, tol: float = 1e-8,
                     max_iter: int = 10_000, return_trace: bool = False,
                     init=None):
    """Maximum-likelihood estimate under k-RAPPOR by projected gradient ascent.

    Steps use a Barzilai-Borwein initial length and Armijo backtracking along
    the projection arc, so the objective never decreases. The loop stops once
    the suboptimality is certified below ``tol``: first by the Frank-Wolfe
    gap ``max(grad) - grad . p`` and, when that bound is loose, by the
    Lagrangian duality gap of the separable objective.

    Raises ``ConvergenceError`` after ``max_iter`` iterations, or earlier if
    no step improves the objective in floating point before the gap is
    certified.
    """
    t = np.asarray(bit_counts, dtype=float)
    if n < 1 or np.any(t < 0) or np.any(t > n):
        raise ValidationError("bit counts must lie in [0, n] with n >= 1")
    if tol <= 0:
        raise ValidationError("tol must be positive")
    budget = _positive_budget(budget)
    _, d = rappor_flip_params(budget)
    clamp = 1e-12

    def f(q):
        return rappor_log_likelihood(q, t, n, budget, clamp)

    def certified(q, grad):
        gap = float(grad.max() - grad @ q)
        if gap <= tol:
            return True, gap
        if d > 0:
            gap = min(gap, _rappor_dual_gap(q, t, n, d))
        return gap <= tol, gap

    if init is None:
        p = project_simplex(decode_rappor_empirical(t, n, budget))
    else:
        p = project_simplex(init)
    fp = f(p)
    g = _rappor_gradient(p, t, n, d, clamp)
    trace = [fp]
    step = 1.0 / max(n, 1)
    done, gap = certified(p, g)
    it = 0
    while not done and it < max_iter:
        it += 1
        while True:
            cand = project_simplex(p + step * g)
            fc = f(cand)
            if fc >= fp + 1e-4 * g @ (cand - p) or step < 1e-300:
                break
            step *= 0.5
        if fc < fp:
            # no ascent possible at machine precision
            break
        g_new = _rappor_gradient(cand, t, n, d, clamp)
        s, y = cand - p, g_new - g
        sy = float(s @ y)
        step = float(s @ s) / -sy if sy < 0 else step * 2.0
        p, fp, g = cand, fc, g_new
        trace.append(fp)
        fw = float(g.max() - g @ p)
        # the dual bound costs a scalar minimization; only try it every so often
        if fw <= tol or it % 25 == 0:
            done, gap = certified(p, g)
    if not done:
        done, gap = certified(p, g)
    if not done:
        why = f"in {max_iter} iterations" if it >= max_iter else "before stalling at machine precision"
        raise ConvergenceError(f"RAPPOR ML did not converge {why} (gap {gap:.3g})", p, gap)
    if return_trace:
        return p, np.array(trace)
    return p


def decode(kind, mechanism: str, stats, n: int, k: int, budget) -> np.ndarray:
    """Dispatch to the decoder for ``mechanism`` (``"krr"`` or ``"rappor"``).

    ``stats`` is the output histogram ``m_hat`` (frequencies) for k-RR and
    the bit counts ``T`` for k-RAPPOR.
    """
    kind = DecoderKind(kind.lower() if isinstance(kind, str) else kind)
    mech = str(mechanism).lower()
    if mech == "krr":
        m_hat = np.asarray(stats, dtype=float)
        if kind is DecoderKind.ML:
            counts = np.rint(m_hat * n)
            return decode_krr_ml(counts, int(counts.sum()), budget)
        raw = decode_krr_empirical(m_hat, k, budget)
    elif mech == "rappor":
        if kind is DecoderKind.ML:
            return decode_rappor_ml(stats, n, budget)
        raw = decode_rappor_empirical(stats, n, budget)
    else:
        raise ValidationError(f"unknown mechanism {mechanism!r}")
    if kind is DecoderKind.STANDARD:
        return raw
    if kind is DecoderKind.NORMALIZED:
        return normalize_truncate(raw)
    return project_simplex(raw)
