"""Command-line entry point: ``ldpdist <command> [flags]``.

Commands: ``channel``, ``privacy-check``, ``risk``, ``simulate``, ``sweep``
and ``report``. Exit codes: 0 success, 2 invalid flags, 3 enumeration too
large, 4 config schema violation, 5 trial failure at runtime.
"""
from __future__ import annotations

import argparse
import csv
import json
import secrets
import sys
from pathlib import Path

import jsonschema
import numpy as np

from . import __version__
from .core import ValidationError, parse_epsilon, verify_channel_dp
from .mechanisms import build_krr_channel, build_rappor_channel, verify_rappor_dp
from .open_alphabet import (
    CohortScheme,
    HashMode,
    orappor_joint_channel,
    orr_joint_channel,
)
from .risk import krr_risk, rappor_risk
from .simkit import (
    DistKind,
    DistributionSpec,
    ExperimentConfig,
    ExperimentError,
    best_records,
    grid_sweep,
    make_distribution,
    parse_config,
    read_results_csv,
    result_record,
    results_to_csv,
    run_experiment,
    sidecar,
)

EXIT_OK, EXIT_FLAGS, EXIT_ENUM, EXIT_SCHEMA, EXIT_RUNTIME = 0, 2, 3, 4, 5
RAPPOR_ENUM_MAX_K = 20
ORR_ENUM_MAX = 10**6
ORAPPOR_ENUM_MAX = 10**6


class CliError(Exception):
    def __init__(self, message, code):
        super().__init__(message)
        self.code = code


def _epsilon(text):
    try:
        return parse_epsilon(text)
    except ValidationError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from exc


def _check_k(k, name="k"):
    if k < 2:
        raise CliError(f"{name} must be ≥ 2", EXIT_FLAGS)


def _dist_spec(args, size):
    params = tuple(args.dist_param or ())
    return DistributionSpec(args.dist, params, size)


# -- commands -----------------------------------------------------------------

def cmd_channel(args, out):
    _check_k(args.k)
    if args.mech == "krr":
        q = build_krr_channel(args.k, args.epsilon)
    else:
        if args.k > RAPPOR_ENUM_MAX_K:
            raise CliError("enumeration too large", EXIT_ENUM)
        q = build_rappor_channel(args.k, args.epsilon)
    w = csv.writer(out, lineterminator="\n")
    for row in q:
        w.writerow([repr(float(x)) for x in row])


def _scheme(args):
    _check_k(args.k)
    if args.S is None or args.S < 2:
        raise CliError("S must be ≥ 2", EXIT_FLAGS)
    if args.C < 1 or args.h < 1:
        raise CliError("C and h must be ≥ 1", EXIT_FLAGS)
    return CohortScheme(args.C, args.k, args.h, master_seed=args.seed or 0,
                        mode=HashMode(args.hash_mode), alphabet_size=args.S)


def cmd_privacy_check(args, out):
    mech = args.mech
    if mech == "krr":
        _check_k(args.k)
        res = verify_channel_dp(build_krr_channel(args.k, args.epsilon), args.epsilon)
    elif mech == "rappor":
        _check_k(args.k)
        if args.k > RAPPOR_ENUM_MAX_K:
            raise CliError("enumeration too large", EXIT_ENUM)
        res = verify_rappor_dp(args.k, args.epsilon)
    elif mech == "orr":
        scheme = _scheme(args)
        if args.S * args.k * args.C > ORR_ENUM_MAX:
            raise CliError("enumeration too large", EXIT_ENUM)
        res = verify_channel_dp(orr_joint_channel(range(args.S), scheme, args.epsilon), args.epsilon)
    else:
        scheme = _scheme(args)
        if args.k > RAPPOR_ENUM_MAX_K or args.S * args.C * 2**args.k > ORAPPOR_ENUM_MAX:
            raise CliError("enumeration too large", EXIT_ENUM)
        q = orappor_joint_channel(range(args.S), scheme, args.epsilon)
        res = verify_channel_dp(q, args.epsilon)
    verdict = "PASS" if res.satisfied else "FAIL"
    print(f"mechanism={mech} epsilon={args.epsilon!r} e^epsilon={float(np.exp(args.epsilon))!r} "
          f"max_ratio={res.max_ratio!r} {verdict}", file=out)
    return EXIT_OK


def cmd_risk(args, out):
    _check_k(args.k)
    if args.n < 1:
        raise CliError("n must be ≥ 1", EXIT_FLAGS)
    p = make_distribution(_dist_spec(args, args.k), np.random.default_rng(args.seed or 0))
    fn = krr_risk if args.mech == "krr" else rappor_risk
    r = fn(p, args.n, args.epsilon)
    print(f"mechanism={args.mech} k={args.k} epsilon={args.epsilon!r} n={args.n} "
          f"distribution={args.dist}", file=out)
    print(f"l2_squared={r.l2_squared!r}", file=out)
    print(f"l1_asymptotic={r.l1_asymptotic!r}", file=out)
    if args.mc_trials:
        seed = _seed(args, sys.stderr)
        spec = DistributionSpec(DistKind.CUSTOM, tuple(p.tolist()))
        for loss, exact in (("l2sq", r.l2_squared), ("l1", r.l1_asymptotic)):
            cfg = ExperimentConfig(args.mech, "standard", spec, args.n, args.epsilon, args.k,
                                   trials=args.mc_trials, seed=seed, loss=loss, loss_vs_truth=True)
            res = run_experiment(cfg, args.threads)
            print(f"monte_carlo_{loss}_mean={res.mean!r} closed_form={exact!r} "
                  f"relative_error={abs(res.mean - exact) / exact!r}", file=out)


def _seed(args, err):
    if args.seed is None:
        args.seed = secrets.randbits(63)
        print(f"seed={args.seed}", file=err)
    return args.seed


def _load_config(args):
    if args.config:
        path = Path(args.config)
        if not path.exists():
            raise CliError(f"config file {path} not found", EXIT_FLAGS)
        try:
            doc = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise CliError(f"config is not valid JSON: {exc}", EXIT_SCHEMA) from exc
        try:
            if args.seed is not None:
                doc["seed"] = args.seed
            elif "seed" not in doc:
                doc["seed"] = _seed(args, sys.stderr)
            if args.loss_vs_truth:
                doc["loss_vs_truth"] = True
            cfg, grid = parse_config(doc)
        except jsonschema.ValidationError as exc:
            raise CliError(f"config schema violation: {exc.message}", EXIT_SCHEMA) from exc
        except (ValidationError, TypeError) as exc:
            raise CliError(f"invalid config: {exc}", EXIT_SCHEMA) from exc
        return cfg, grid
    if args.mech is None or args.k is None or args.epsilon is None:
        raise CliError("either --config or --mech, --k and --epsilon are required", EXIT_FLAGS)
    _check_k(args.k)
    seed = _seed(args, sys.stderr)
    size = args.S if args.mech in ("orr", "orappor") else None
    cfg = ExperimentConfig(
        args.mech, args.decoder, _dist_spec(args, size), args.n, args.epsilon, args.k,
        C=args.C, h=args.h, trials=args.trials, seed=seed, loss=args.loss,
        loss_vs_truth=args.loss_vs_truth, hash_mode=args.hash_mode)
    return cfg, None


def _write_outputs(args, records, cfg, grid, out):
    text = results_to_csv(records)
    if args.out:
        path = Path(args.out)
        path.write_text(text)
        path.with_suffix(path.suffix + ".json").write_text(sidecar(cfg, grid))
    else:
        out.write(text)


def cmd_simulate(args, out):
    cfg, _ = _load_config(args)
    try:
        res = run_experiment(cfg, args.threads)
    except ExperimentError as exc:
        raise CliError(f"trial failure: {exc} ({len(exc.partial)} trials completed)",
                       EXIT_RUNTIME) from exc
    _write_outputs(args, [result_record(cfg, res)], cfg, None, out)


def _int_list(text):
    return [int(x) for x in text.split(",") if x]


def _eps_list(text):
    return [parse_epsilon(x) for x in text.split(",") if x]


def cmd_sweep(args, out):
    cfg, grid = _load_config(args)
    grid = dict(grid or {})
    for key, parse in (("k", _int_list), ("C", _int_list), ("h", _int_list), ("epsilon", _eps_list)):
        val = getattr(args, f"grid_{key}")
        if val:
            grid[key] = parse(val)
    res = grid_sweep(cfg, grid, args.threads)
    records = [result_record(r.config, r.result) for r in res.table()]
    for row in res.rows:
        if row.result is None:
            print(f"skipped: {row.skipped}", file=sys.stderr)
    if not records:
        raise CliError("every grid point failed or was infeasible", EXIT_RUNTIME)
    _write_outputs(args, records, cfg, grid, out)


def cmd_report(args, out):
    records = []
    for path in args.csv:
        try:
            with open(path, newline="") as fh:
                records.extend(read_results_csv(fh))
        except OSError as exc:
            raise CliError(str(exc), EXIT_FLAGS) from exc
        except (ValidationError, ValueError) as exc:
            raise CliError(f"{path}: {exc}", EXIT_SCHEMA) from exc
    text = results_to_csv(best_records(records))
    if args.out:
        Path(args.out).write_text(text)
    else:
        out.write(text)


# -- parser -------------------------------------------------------------------

def _add_experiment_flags(p):
    p.add_argument("--config", help="JSON experiment config")
    p.add_argument("--mech", choices=["krr", "rappor", "orr", "orappor", "uniform", "nonprivate"])
    p.add_argument("--decoder", default="projected", choices=["standard", "normalized", "projected", "ml"])
    p.add_argument("--k", type=int)
    p.add_argument("--S", type=int, help="input alphabet size for open-alphabet mechanisms")
    p.add_argument("--C", type=int, default=1)
    p.add_argument("--h", type=int, default=1)
    p.add_argument("--epsilon", type=_epsilon)
    p.add_argument("--n", type=int, default=10_000)
    p.add_argument("--trials", type=int, default=100)
    p.add_argument("--dist", default="geometric", choices=[d.value for d in DistKind])
    p.add_argument("--dist-param", type=float, action="append")
    p.add_argument("--loss", default="l1", choices=["l1", "l2sq"])
    p.add_argument("--loss-vs-truth", action="store_true",
                   help="score against the true distribution instead of the sample histogram")
    p.add_argument("--hash-mode", default="keyed", choices=[m.value for m in HashMode])
    p.add_argument("--seed", type=int)
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--out", help="CSV path; a JSON sidecar is written next to it")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ldpdist", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("channel", help="print a channel matrix as CSV")
    p.add_argument("--mech", required=True, choices=["krr", "rappor"])
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--epsilon", type=_epsilon, required=True)
    p.set_defaults(func=cmd_channel)

    p = sub.add_parser("privacy-check", help="enumerate a channel and check its likelihood ratios")
    p.add_argument("--mech", required=True, choices=["krr", "rappor", "orr", "orappor"])
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--epsilon", type=_epsilon, required=True)
    p.add_argument("--S", type=int)
    p.add_argument("--C", type=int, default=1)
    p.add_argument("--h", type=int, default=1)
    p.add_argument("--hash-mode", default="keyed", choices=[m.value for m in HashMode])
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_privacy_check)

    p = sub.add_parser("risk", help="closed-form risks, optionally checked by Monte Carlo")
    p.add_argument("--mech", required=True, choices=["krr", "rappor"])
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--epsilon", type=_epsilon, required=True)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--dist", default="uniform", choices=[d.value for d in DistKind])
    p.add_argument("--dist-param", type=float, action="append")
    p.add_argument("--mc-trials", type=int, default=0)
    p.add_argument("--seed", type=int)
    p.add_argument("--threads", type=int, default=1)
    p.set_defaults(func=cmd_risk)

    p = sub.add_parser("simulate", help="run one experiment")
    _add_experiment_flags(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("sweep", help="grid search over k, C, h and epsilon")
    _add_experiment_flags(p)
    p.add_argument("--grid-k")
    p.add_argument("--grid-C")
    p.add_argument("--grid-h")
    p.add_argument("--grid-epsilon")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("report", help="per-epsilon best parameters from sweep CSVs")
    p.add_argument("csv", nargs="+")
    p.add_argument("--out")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None, out=None) -> int:
    out = out or sys.stdout
    args = build_parser().parse_args(argv)
    if getattr(args, "threads", 1) < 1:
        print("error: threads must be ≥ 1", file=sys.stderr)
        return EXIT_FLAGS
    try:
        args.func(args, out)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FLAGS
    except ExperimentError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
