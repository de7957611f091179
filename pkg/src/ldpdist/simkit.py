"""Monte Carlo harness: ground truths, end-to-end trials, aggregation, sweeps.

Every trial draws from its own Philox stream keyed by ``(seed, trial_index)``,
so results depend only on the configuration and never on how many worker
threads run the trials or in which order they finish.

A trial samples ``n`` inputs from the ground truth, privatizes them through
the configured mechanism (using the aggregate samplers, which have the same
law as per-client encoding), decodes, and scores the estimate against the
sample histogram, or against the true ``p`` when ``loss_vs_truth`` is set.
"""
from __future__ import annotations

import csv
import dataclasses
import enum
import io
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Iterable, NamedTuple

import jsonschema
import numpy as np

from . import __version__
from .core import ValidationError, make_rng, parse_epsilon
from .decoders import (
    DecoderKind,
    decode,
    decode_krr_ml,
    decode_rappor_ml,
    normalize_truncate,
    project_simplex,
)
from .hashing import derive_key
from .mechanisms import krr_report_counts, noisy_bit_counts, rappor_bit_counts
from .open_alphabet import (
    CohortScheme,
    HashMode,
    build_design_matrix,
    decode_orappor,
    decode_orr,
    orappor_flip_prob,
)
from .risk import nonprivate_risks

_HASH_SEED_TAG = 0x68617368  # "hash"


class DistKind(str, enum.Enum):
    GEOMETRIC = "geometric"
    ZIPF = "zipf"
    BINOMIAL = "binomial"
    DIRICHLET = "dirichlet"
    UNIFORM = "uniform"
    POINT_MASS = "point_mass"
    CUSTOM = "custom"


class Mechanism(str, enum.Enum):
    KRR = "krr"
    RAPPOR = "rappor"
    ORR = "orr"
    ORAPPOR = "orappor"
    # baselines: report the uniform distribution / the raw sample histogram
    UNIFORM = "uniform"
    NONPRIVATE = "nonprivate"


class Loss(str, enum.Enum):
    L1 = "l1"
    L2_SQUARED = "l2sq"


@dataclass(frozen=True)
class DistributionSpec:
    kind: DistKind
    params: tuple = ()
    support_size: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "kind", DistKind(self.kind))
        object.__setattr__(self, "params", tuple(self.params))

    def label(self) -> str:
        if not self.params or self.kind is DistKind.CUSTOM:
            return self.kind.value
        return f"{self.kind.value}({','.join(f'{x:g}' for x in self.params)})"


def make_distribution(spec: DistributionSpec, rng: np.random.Generator | None = None,
                      size: int | None = None) -> np.ndarray:
    """Ground-truth probability vector for ``spec``.

    ``size`` overrides ``spec.support_size``. Geometric places weight
    ``(1 - q)^i`` on symbol ``i = 0..k-1`` with ``q = 5 / (k + 5)``, so the
    untruncated distribution has mean ``k / 5``; a single parameter overrides
    ``q``. Binomial(q) is over ``0..k-1`` with ``k - 1`` trials, Zipf(s) has
    weights ``(i + 1)^-s``, Dirichlet draws one sample with all
    concentrations 1 (or ``params[0]``), PointMass puts all mass on
    ``params[0]`` (default 0) and Custom normalizes ``params``.
    """
    k = size if size is not None else spec.support_size
    kind, params = spec.kind, spec.params
    if kind is DistKind.CUSTOM:
        w = np.asarray(params, dtype=float)
        k = w.size
    if k is None or k < 2:
        raise ValidationError("distribution needs support size >= 2")
    if any(x < 0 for x in params):
        raise ValidationError("distribution parameters must be nonnegative")
    i = np.arange(k)
    if kind is DistKind.GEOMETRIC:
        q = params[0] if params else 5.0 / (k + 5.0)
        if not 0 < q < 1:
            raise ValidationError(f"geometric parameter must lie in (0, 1), got {q}")
        w = (1 - q) ** i * q
    elif kind is DistKind.ZIPF:
        w = (i + 1.0) ** -(params[0] if params else 1.0)
    elif kind is DistKind.BINOMIAL:
        from scipy.stats import binom

        q = params[0] if params else 0.5
        if q > 1:
            raise ValidationError("binomial parameter must lie in [0, 1]")
        w = binom.pmf(i, k - 1, q)
    elif kind is DistKind.DIRICHLET:
        if rng is None:
            raise ValidationError("dirichlet ground truth needs an rng")
        w = rng.dirichlet(np.full(k, params[0] if params else 1.0))
    elif kind is DistKind.UNIFORM:
        w = np.ones(k)
    elif kind is DistKind.POINT_MASS:
        at = int(params[0]) if params else 0
        if at >= k:
            raise ValidationError("point mass outside the support")
        w = (i == at).astype(float)
    elif kind is not DistKind.CUSTOM:
        raise ValidationError(f"unknown distribution {kind}")
    if w.sum() <= 0:
        raise ValidationError("distribution has no mass")
    return w / w.sum()


@dataclass(frozen=True)
class ExperimentConfig:
    """One cell of an experiment: mechanism, decoder, ground truth and sizes.

    For k-RR / k-RAPPOR the input alphabet is ``k``; for the open-alphabet
    mechanisms it is ``distribution.support_size`` (the candidate set is
    ``0..S-1``) and ``k`` is the hash range.
    """

    mechanism: Mechanism
    decoder: DecoderKind
    distribution: DistributionSpec
    n: int
    epsilon: float
    k: int
    C: int = 1
    h: int = 1
    trials: int = 1
    seed: int = 0
    loss: Loss = Loss.L1
    loss_vs_truth: bool = False
    hash_mode: HashMode = HashMode.KEYED
    identity: bool = False  # identity permutations; reduces O-RR/O-RAPPOR to k-RR/k-RAPPOR

    def __post_init__(self):
        set_ = lambda name, value: object.__setattr__(self, name, value)  # noqa: E731
        set_("mechanism", Mechanism(self.mechanism))
        set_("decoder", DecoderKind(self.decoder))
        set_("loss", Loss(self.loss))
        set_("hash_mode", HashMode(self.hash_mode))
        set_("epsilon", parse_epsilon(self.epsilon))
        if not isinstance(self.distribution, DistributionSpec):
            set_("distribution", DistributionSpec(**self.distribution))
        for name in ("n", "k", "C", "h", "trials"):
            if int(getattr(self, name)) < 1:
                raise ValidationError(f"{name} must be positive")
        if not math.isfinite(self.epsilon) or self.epsilon < 0:
            raise ValidationError("epsilon must be finite and >= 0")
        mech = self.mechanism
        if mech in (Mechanism.KRR, Mechanism.RAPPOR):
            if self.k < 2:
                raise ValidationError("k must be >= 2")
            if self.C != 1 or self.h != 1:
                raise ValidationError(f"C and h apply only to open-alphabet mechanisms, not {mech.value}")
            if self.distribution.support_size not in (None, self.k):
                raise ValidationError("for k-RR / k-RAPPOR the support size must equal k")
        if mech is Mechanism.ORR and self.h != 1:
            raise ValidationError("h applies only to orappor")
        if mech in (Mechanism.ORR, Mechanism.ORAPPOR):
            if self.distribution.support_size is None:
                raise ValidationError("open-alphabet mechanisms need distribution.support_size")
            if self.k < 2:
                raise ValidationError("k must be >= 2")
        if self.identity and self.hash_mode is not HashMode.PERMUTATION:
            raise ValidationError("identity hashing needs hash_mode 'permutation'")
        if self.decoder is DecoderKind.ML and mech not in (Mechanism.KRR, Mechanism.RAPPOR):
            raise ValidationError("the ML decoder exists only for krr and rappor")

    @property
    def alphabet_size(self) -> int:
        if self.distribution.kind is DistKind.CUSTOM:
            return len(self.distribution.params)
        return self.distribution.support_size or self.k

    def replace(self, **changes) -> "ExperimentConfig":
        return dataclasses.replace(self, **changes)


class TrialResult(NamedTuple):
    trial_index: int
    loss: float


@dataclass(frozen=True)
class AggregateResult:
    mean: float
    median: float
    ci_low: float
    ci_high: float
    trials: int
    losses: np.ndarray = field(repr=False, compare=False)


class TrialError(RuntimeError):
    def __init__(self, message, config, trial_index):
        super().__init__(message)
        self.config = config
        self.trial_index = trial_index


class ExperimentError(RuntimeError):
    """A trial failed; ``partial`` holds the trials that completed."""

    def __init__(self, message, partial):
        super().__init__(message)
        self.partial = partial


def compute_loss(estimate, reference, loss: Loss) -> float:
    d = np.asarray(estimate, dtype=float) - np.asarray(reference, dtype=float)
    if Loss(loss) is Loss.L1:
        return float(np.abs(d).sum())
    return float(d @ d)


def _constrain(raw, decoder: DecoderKind):
    if decoder is DecoderKind.STANDARD:
        return raw
    if decoder is DecoderKind.NORMALIZED:
        return normalize_truncate(raw)
    return project_simplex(raw)


def _cohort_split(x_counts, C, rng):
    """Counts ``N[c, s]`` of clients holding ``s`` in cohort ``c`` (cohorts i.i.d. uniform)."""
    if C == 1:
        return x_counts[None, :]
    return rng.multinomial(x_counts, np.full(C, 1.0 / C)).T


def _estimate(config: ExperimentConfig, x_counts, trial_index, rng):
    n, eps, k = config.n, config.epsilon, config.k
    mech, dec = config.mechanism, config.decoder
    if mech is Mechanism.UNIFORM:
        return np.full(x_counts.size, 1.0 / x_counts.size)
    if mech is Mechanism.NONPRIVATE:
        return x_counts / n
    if mech is Mechanism.KRR:
        y = krr_report_counts(x_counts, eps, rng)
        if dec is DecoderKind.ML:
            return decode_krr_ml(y, n, eps)
        return decode(dec, "krr", y / n, n, k, eps)
    if mech is Mechanism.RAPPOR:
        t = rappor_bit_counts(x_counts, eps, rng)
        if dec is DecoderKind.ML:
            return decode_rappor_ml(t, n, eps)
        return decode(dec, "rappor", t, n, k, eps)

    S = x_counts.size
    scheme = CohortScheme(
        config.C, k, config.h,
        master_seed=int(derive_key(config.seed, trial_index, _HASH_SEED_TAG)),
        mode=config.hash_mode, alphabet_size=S, identity=config.identity)
    candidates = np.arange(S)
    design = build_design_matrix(candidates, scheme)
    N = _cohort_split(x_counts, config.C, rng)
    if mech is Mechanism.ORR:
        b = design.buckets[:, 0, :]
        B = np.zeros((config.C, k), dtype=np.int64)
        for c in range(config.C):
            B[c] = np.bincount(b[c], weights=N[c], minlength=k)
        y = krr_report_counts(B, eps, rng)
        raw = decode_orr(y, n, candidates, scheme, eps, design=design, project=False)
    else:
        ones = np.einsum("cjs,cs->cj", design.dense().reshape(config.C, k, S), N)
        sizes = N.sum(axis=1)
        t = noisy_bit_counts(ones, sizes[:, None], orappor_flip_prob(scheme, eps), rng)
        raw = decode_orappor(t, sizes, candidates, scheme, eps, design=design, project=False)
    return _constrain(raw, dec)


def run_trial(config: ExperimentConfig, trial_index: int) -> TrialResult:
    """Sample, privatize, decode and score one trial; deterministic in ``(seed, trial_index)``."""
    rng = make_rng(config.seed, trial_index)
    try:
        p = make_distribution(config.distribution, rng, size=config.alphabet_size)
        x_counts = rng.multinomial(config.n, p)
        estimate = _estimate(config, x_counts, trial_index, rng)
    except (ValidationError, ArithmeticError, np.linalg.LinAlgError, RuntimeError) as exc:
        raise TrialError(f"trial {trial_index} failed: {exc}", config, trial_index) from exc
    reference = p if config.loss_vs_truth else x_counts / config.n
    return TrialResult(trial_index, compute_loss(estimate, reference, config.loss))


def aggregate(losses: Iterable[float]) -> AggregateResult:
    """Mean, median and the 5th/95th percentile band of per-trial losses."""
    losses = np.asarray(list(losses), dtype=float)
    lo, med, hi = np.percentile(losses, [5, 50, 95])
    return AggregateResult(float(losses.mean()), float(med), float(lo), float(hi), losses.size, losses)


def run_experiment(config: ExperimentConfig, threads: int = 1) -> AggregateResult:
    """Run ``config.trials`` independent trials and aggregate their losses."""
    indices = range(config.trials)
    results: dict[int, float] = {}
    try:
        if threads <= 1:
            for i in indices:
                results[i] = run_trial(config, i).loss
        else:
            with ThreadPoolExecutor(max_workers=threads) as pool:
                for r in pool.map(lambda i: run_trial(config, i), indices):
                    results[r.trial_index] = r.loss
    except TrialError as exc:
        partial = [TrialResult(i, results[i]) for i in sorted(results)]
        raise ExperimentError(str(exc), partial) from exc
    return aggregate(results[i] for i in indices)


# -- sweeps -------------------------------------------------------------------

@dataclass
class SweepRow:
    config: ExperimentConfig
    result: AggregateResult | None
    skipped: str | None = None


@dataclass
class SweepResult:
    rows: list[SweepRow]
    best: dict  # epsilon -> SweepRow

    def table(self) -> list[SweepRow]:
        return [r for r in self.rows if r.result is not None]


GRID_KEYS = ("k", "C", "h", "epsilon")


def _tie_key(cfg: ExperimentConfig):
    return (cfg.k, cfg.C, cfg.h)


def best_per_epsilon(rows: Iterable[SweepRow]) -> dict:
    best: dict = {}
    for row in rows:
        if row.result is None:
            continue
        eps = row.config.epsilon
        cur = best.get(eps)
        key = (row.result.median, _tie_key(row.config))
        if cur is None or key < (cur.result.median, _tie_key(cur.config)):
            best[eps] = row
    return dict(sorted(best.items()))


def grid_sweep(base: ExperimentConfig, grid: dict, threads: int = 1) -> SweepResult:
    """Evaluate every combination of the grid values on top of ``base``.

    Grid points whose configuration is invalid (for example ``h > 1`` with
    O-RR, or a support the ground truth cannot take) are kept as skipped rows.
    """
    unknown = set(grid) - set(GRID_KEYS)
    if unknown:
        raise ValidationError(f"unknown grid keys {sorted(unknown)}")
    axes = {key: list(grid[key]) if key in grid else [getattr(base, key)] for key in GRID_KEYS}
    if any(len(v) == 0 for v in axes.values()):
        raise ValidationError("grid axes must be non-empty")
    rows = []
    for eps in axes["epsilon"]:
        for k in axes["k"]:
            for C in axes["C"]:
                for h in axes["h"]:
                    try:
                        cfg = base.replace(k=k, C=C, h=h, epsilon=eps)
                        rows.append(SweepRow(cfg, run_experiment(cfg, threads)))
                    except ValidationError as exc:
                        rows.append(SweepRow(None, None, str(exc)))
                    except ExperimentError as exc:
                        rows.append(SweepRow(cfg, None, str(exc)))
    return SweepResult(rows, best_per_epsilon(rows))


# -- baselines ----------------------------------------------------------------

def baseline_losses(p, n: int) -> dict:
    """Reference l1 losses: guessing uniform, and the non-private empirical estimator."""
    p = np.asarray(p, dtype=float)
    return {
        "uniform_l1": float(np.abs(p - 1.0 / p.size).sum()),
        "empirical_l1": nonprivate_risks(p, n)["empirical_l1_asymptotic"],
    }


# -- I/O ----------------------------------------------------------------------

CSV_COLUMNS = ["mechanism", "decoder", "k", "C", "h", "epsilon", "n", "distribution",
               "trials", "mean", "median", "ci_low", "ci_high", "seed"]


def result_record(cfg: ExperimentConfig, res: AggregateResult) -> dict:
    return {
        "mechanism": cfg.mechanism.value, "decoder": cfg.decoder.value,
        "k": cfg.k, "C": cfg.C, "h": cfg.h, "epsilon": cfg.epsilon, "n": cfg.n,
        "distribution": cfg.distribution.label(), "trials": res.trials,
        "mean": res.mean, "median": res.median, "ci_low": res.ci_low,
        "ci_high": res.ci_high, "seed": cfg.seed,
    }


def write_results_csv(records: Iterable[dict], fh) -> None:
    """Write result records; floats use ``repr`` so they round-trip exactly."""
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for rec in records:
        w.writerow([repr(rec[c]) if isinstance(rec[c], float) else rec[c] for c in CSV_COLUMNS])


def results_to_csv(records: Iterable[dict]) -> str:
    buf = io.StringIO()
    write_results_csv(records, buf)
    return buf.getvalue()


_INT_COLS = {"k", "C", "h", "n", "trials", "seed"}
_FLOAT_COLS = {"epsilon", "mean", "median", "ci_low", "ci_high"}


def read_results_csv(fh) -> list[dict]:
    out = []
    reader = csv.DictReader(fh)
    if reader.fieldnames != CSV_COLUMNS:
        raise ValidationError(f"unexpected CSV columns {reader.fieldnames}")
    for row in reader:
        rec = {}
        for key, val in row.items():
            rec[key] = int(val) if key in _INT_COLS else float(val) if key in _FLOAT_COLS else val
        out.append(rec)
    return out


def best_records(records: Iterable[dict]) -> list[dict]:
    """Per ``(mechanism, decoder, distribution, n, epsilon)``, the record with the
    smallest median (ties: smaller k, then C, then h)."""
    best: dict = {}
    for rec in records:
        group = (rec["mechanism"], rec["decoder"], rec["distribution"], rec["n"], rec["epsilon"])
        key = (rec["median"], rec["k"], rec["C"], rec["h"])
        if group not in best or key < best[group][0]:
            best[group] = (key, rec)
    return [best[g][1] for g in sorted(best)]


CONFIG_SCHEMA = {
    "type": "object",
    "required": ["mechanism", "decoder", "distribution", "n", "epsilon", "k"],
    "additionalProperties": False,
    "properties": {
        "mechanism": {"enum": [m.value for m in Mechanism]},
        "decoder": {"enum": [d.value for d in DecoderKind]},
        "distribution": {
            "type": "object",
            "required": ["kind"],
            "additionalProperties": False,
            "properties": {
                "kind": {"enum": [d.value for d in DistKind]},
                "params": {"type": "array", "items": {"type": "number"}},
                "support_size": {"type": "integer", "minimum": 2},
            },
        },
        "n": {"type": "integer", "minimum": 1},
        "epsilon": {"type": ["number", "string"]},
        "k": {"type": "integer", "minimum": 2},
        "C": {"type": "integer", "minimum": 1},
        "h": {"type": "integer", "minimum": 1},
        "trials": {"type": "integer", "minimum": 1},
        "seed": {"type": "integer", "minimum": 0},
        "loss": {"enum": [l.value for l in Loss]},
        "loss_vs_truth": {"type": "boolean"},
        "hash_mode": {"enum": [m.value for m in HashMode]},
        "identity": {"type": "boolean"},
        "grid": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "k": {"type": "array", "items": {"type": "integer", "minimum": 2}, "minItems": 1},
                "C": {"type": "array", "items": {"type": "integer", "minimum": 1}, "minItems": 1},
                "h": {"type": "array", "items": {"type": "integer", "minimum": 1}, "minItems": 1},
                "epsilon": {"type": "array", "items": {"type": ["number", "string"]}, "minItems": 1},
            },
        },
    },
}


def parse_config(doc: dict) -> tuple[ExperimentConfig, dict | None]:
    """Validate a JSON experiment document and build its config (and grid, if any)."""
    jsonschema.validate(doc, CONFIG_SCHEMA)
    doc = dict(doc)
    grid = doc.pop("grid", None)
    dist = doc.pop("distribution")
    cfg = ExperimentConfig(distribution=DistributionSpec(**dist), **doc)
    if grid and "epsilon" in grid:
        grid = dict(grid, epsilon=[parse_epsilon(e) for e in grid["epsilon"]])
    return cfg, grid


def config_to_dict(cfg: ExperimentConfig) -> dict:
    d = {
        "mechanism": cfg.mechanism.value, "decoder": cfg.decoder.value,
        "distribution": {"kind": cfg.distribution.kind.value, "params": list(cfg.distribution.params)},
        "n": cfg.n, "epsilon": cfg.epsilon, "k": cfg.k, "C": cfg.C, "h": cfg.h,
        "trials": cfg.trials, "seed": cfg.seed, "loss": cfg.loss.value,
        "loss_vs_truth": cfg.loss_vs_truth, "hash_mode": cfg.hash_mode.value,
        "identity": cfg.identity,
    }
    if cfg.distribution.support_size is not None:
        d["distribution"]["support_size"] = cfg.distribution.support_size
    return d


def sidecar(cfg: ExperimentConfig, grid: dict | None = None) -> str:
    doc = {"config": config_to_dict(cfg), "seed": cfg.seed, "version": __version__}
    if grid:
        doc["grid"] = grid
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"
