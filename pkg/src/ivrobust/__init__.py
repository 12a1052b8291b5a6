"""Robust instrumental-variable estimation from summarized association data.

Estimates a causal effect from per-variant summary statistics (associations
of genetic variants with an exposure and an outcome) using a family of
estimators with different robustness properties to invalid instruments,
plus a Monte Carlo engine for evaluating them under controlled violations.
"""
from .estimators import ALL_METHODS, run_methods
from .exceptions import (
    CsvParseError,
    DegenerateInstrumentError,
    EstimationError,
    InsufficientInstrumentsError,
    SingularDesignError,
)
from .median_methods import (
    MedianWeights,
    bootstrap_se,
    penalized_weighted_median,
    simple_median,
    weighted_median,
    weighted_median_estimate,
)
from .penalization import (
    PenaltyReport,
    cochran_q_egger,
    cochran_q_ivw,
    penalize_weights,
)
from .robust_mm import (
    BisquareParams,
    RobustFit,
    m_scale,
    mm_regress,
    psi_bisquare,
    rho_bisquare,
    weight_bisquare,
)
from .simulation import (
    GeneratedStudy,
    MethodSummary,
    RawStudy,
    ScenarioSpec,
    SimulationReport,
    extract_summary,
    generate_individual_data,
    run_study,
)
from .summary_data import (
    RatioEstimates,
    SummarySet,
    VariantAssociation,
    harmonize,
    ratio_estimates,
    read_csv,
    write_csv,
)
from .wls import (
    EggerDiagnostics,
    Estimate,
    WeightVector,
    egger,
    i_squared_instrument_strength,
    instrument_strength,
    inverse_variance_weights,
    ivw,
    ivw_bias_term,
    inside_weighted_covariance,
)

__version__ = "0.1.0"

__all__ = [
    "ALL_METHODS",
    "BisquareParams",
    "CsvParseError",
    "DegenerateInstrumentError",
    "EggerDiagnostics",
    "Estimate",
    "EstimationError",
    "GeneratedStudy",
    "InsufficientInstrumentsError",
    "MedianWeights",
    "MethodSummary",
    "PenaltyReport",
    "RatioEstimates",
    "RawStudy",
    "RobustFit",
    "ScenarioSpec",
    "SimulationReport",
    "SingularDesignError",
    "SummarySet",
    "VariantAssociation",
    "WeightVector",
    "bootstrap_se",
    "cochran_q_egger",
    "cochran_q_ivw",
    "egger",
    "extract_summary",
    "generate_individual_data",
    "harmonize",
    "i_squared_instrument_strength",
    "inside_weighted_covariance",
    "instrument_strength",
    "inverse_variance_weights",
    "ivw",
    "ivw_bias_term",
    "m_scale",
    "mm_regress",
    "penalize_weights",
    "penalized_weighted_median",
    "psi_bisquare",
    "ratio_estimates",
    "read_csv",
    "rho_bisquare",
    "run_methods",
    "run_study",
    "simple_median",
    "weight_bisquare",
    "weighted_median",
    "weighted_median_estimate",
    "write_csv",
]
