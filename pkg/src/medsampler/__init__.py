"""Deterministic space-filling sampling of expensive unnormalized densities."""

__version__ = "0.1.0"

from .baselines import (
    ChainSpec,
    FollowupResult,
    MetropolisResult,
    adaptive_metropolis,
    chain_lengths,
    followup_mcmc,
)
from .density import (
    DensityModel,
    EvaluationLedger,
    eval_batch,
    eval_logf,
    make_ar1_normal,
    make_banana,
    make_external,
    make_piecewise_prior,
    make_product_prior,
    make_uniform,
)
from .diagnostics import (
    DiagnosticsReport,
    cl2_discrepancy,
    diagnostics_report,
    marginals_and_correlations,
    max_energy_log,
    normal_cdf_transform,
    probability_balance,
    total_energy_log,
)
from .engine import (
    AnnealSchedule,
    Design,
    RunConfig,
    RunReport,
    adaptive_s,
    default_K,
    default_n,
    greedy_select,
    run,
    update_sigma,
)
from .errors import (
    CandidatePoolError,
    ConfigError,
    DensityProtocolError,
    FileFormatError,
    MedError,
    SingularCovarianceError,
    SurrogateFitError,
)
from .fileio import (
    ledger_digest,
    read_design,
    read_ledger,
    read_samples,
    write_design,
    write_ledger,
    write_samples,
)
from .geometry import (
    DistanceSpec,
    charge_log,
    dist_s,
    identity_spec,
    pair_term_log,
    psi_log,
    spec_from_sigma,
)
from .qmc import cbc_lattice, hammersley, local_candidates
from .surrogate import SurrogateModel, default_theta, fit, predict, theta_sensitivity

__all__ = [
    "__version__",
    "AnnealSchedule",
    "CandidatePoolError",
    "ChainSpec",
    "ConfigError",
    "DensityModel",
    "DensityProtocolError",
    "Design",
    "DiagnosticsReport",
    "DistanceSpec",
    "EvaluationLedger",
    "FileFormatError",
    "FollowupResult",
    "MedError",
    "MetropolisResult",
    "RunConfig",
    "RunReport",
    "SingularCovarianceError",
    "SurrogateFitError",
    "SurrogateModel",
    "adaptive_metropolis",
    "adaptive_s",
    "cbc_lattice",
    "chain_lengths",
    "charge_log",
    "cl2_discrepancy",
    "default_K",
    "default_n",
    "default_theta",
    "diagnostics_report",
    "dist_s",
    "eval_batch",
    "eval_logf",
    "fit",
    "followup_mcmc",
    "greedy_select",
    "hammersley",
    "identity_spec",
    "ledger_digest",
    "local_candidates",
    "make_ar1_normal",
    "make_banana",
    "make_external",
    "make_piecewise_prior",
    "make_product_prior",
    "make_uniform",
    "marginals_and_correlations",
    "max_energy_log",
    "normal_cdf_transform",
    "pair_term_log",
    "predict",
    "probability_balance",
    "psi_log",
    "read_design",
    "read_ledger",
    "read_samples",
    "run",
    "spec_from_sigma",
    "theta_sensitivity",
    "total_energy_log",
    "update_sigma",
    "write_design",
    "write_ledger",
    "write_samples",
]
