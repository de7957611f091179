"""Locally differentially private estimation of discrete distributions.

Privatization mechanisms (k-RR, k-RAPPOR and their hashed open-alphabet
variants), decoders, closed-form risks and a seeded Monte Carlo harness.
"""
__version__ = "0.1.0"

from .core import (  # noqa: E402
    DPCheck,
    PrivacyBudget,
    ValidationError,
    make_rng,
    parse_epsilon,
    verify_channel_dp,
)
from .decoders import (  # noqa: E402
    ConvergenceError,
    DecoderKind,
    decode,
    decode_krr_empirical,
    decode_krr_ml,
    decode_rappor_empirical,
    decode_rappor_ml,
    normalize_truncate,
    project_simplex,
)
from .mechanisms import (  # noqa: E402
    RapporAccumulator,
    build_krr_channel,
    build_rappor_channel,
    encode_krr,
    encode_rappor,
    krr_output_distribution,
    krr_report_counts,
    rappor_bit_counts,
    rappor_bit_marginal,
    verify_rappor_dp,
    warner_channel,
)
from .open_alphabet import (  # noqa: E402
    CohortScheme,
    HashMode,
    build_design_matrix,
    decode_orappor,
    decode_orr,
    distinguishability_stats,
    encode_orappor,
    encode_orr,
    orappor_joint_channel,
    orr_joint_channel,
)
from .risk import (  # noqa: E402
    crossover_f,
    krr_risk,
    nonprivate_risks,
    rappor_risk,
    sample_size_factor,
    worst_case_risks,
)
from .simkit import (  # noqa: E402
    DistributionSpec,
    ExperimentConfig,
    best_records,
    grid_sweep,
    make_distribution,
    parse_config,
    result_record,
    results_to_csv,
    run_experiment,
    run_trial,
)
