"""Spectral analysis of discrete and continuous stellar oscillation operators.

The discrete side builds geometric shell models (``model``), assembles
their tridiagonal wave operators (``discrete``), and locates truncation
spectra, Jost asymptotics and band structures (``spectra``); sparse
perturbations that accumulate point spectrum live in ``ppmodes`` and
the diagonal rescaling of stiff constant-exponent profiles in
``polytrans``.  The continuous side (``slform``) transforms singular
oscillation equations to canonical form and quantifies surface behavior.
``cli`` drives every analysis from JSON configs with reproducible
artifacts.
"""

from .errors import NumericalError, ValidationError
from .model import (
    FOUR_PI,
    AdmissibilityReport,
    GammaProfile,
    MassDistribution,
    PressureDensityDistribution,
    ScalingParams,
    build_mass_distribution,
    build_pd_distribution,
    check_admissibility,
    coupling_constant,
    gamma_profile,
    hse_residual_array,
    profile_constant,
    scaling_params,
)
from .discrete import (
    CONVERGENCE_ORDER,
    JacobiOperator,
    SpectrumPrediction,
    TailClass,
    assemble_jacobi,
    classify_tail,
    coupling_values,
    delta_r_from_X,
    delta_r_log,
    predict_spectrum,
)
from .spectra import (
    BandReport,
    BandStructure,
    EigenResult,
    FillReport,
    JostFit,
    band_report,
    band_structure,
    build_two_periodic,
    eigenvalues_bisect,
    eigenvectors_inverse_iteration,
    gershgorin_interval,
    jost_verify,
    spectrum_fill_report,
    sturm_counts,
    truncation_eigenvalues,
)
from .ppmodes import (
    BumpField,
    EdgeModes,
    construct_dsp,
    detect_edge_eigenvalues,
    rayleigh_quotients,
    theorem_model,
)
from .polytrans import (
    GrowthReport,
    LocalFrequencies,
    ScaledSystem,
    TransformCheck,
    build_scaled_system,
    delta_r_growth,
    diag_transform,
    local_frequencies,
    similarity_check,
)
from .slform import (
    CanonicalForm,
    CanonicalTrace,
    CaseReport,
    DecayReport,
    LinearThermal,
    Polytropic,
    QuadCheck,
    SLProblem,
    TailEnvelope,
    WKBFit,
    canonical_derivative_exponents,
    classify_sl_case,
    edge_quadratic,
    extend_trace_asymptotic,
    integrate_canonical,
    l2_growth,
    liouville,
    q0_fd,
    regularity_check,
    sl_coefficients,
    trace_regularity,
    wkb_fit,
)

__version__ = "0.1.0"

__all__ = [
    "AdmissibilityReport",
    "BandReport",
    "BandStructure",
    "BumpField",
    "CONVERGENCE_ORDER",
    "CanonicalForm",
    "CanonicalTrace",
    "CaseReport",
    "DecayReport",
    "EdgeModes",
    "EigenResult",
    "FOUR_PI",
    "FillReport",
    "GammaProfile",
    "GrowthReport",
    "JacobiOperator",
    "JostFit",
    "LinearThermal",
    "LocalFrequencies",
    "MassDistribution",
    "NumericalError",
    "Polytropic",
    "PressureDensityDistribution",
    "QuadCheck",
    "SLProblem",
    "ScaledSystem",
    "ScalingParams",
    "SpectrumPrediction",
    "TailClass",
    "TailEnvelope",
    "TransformCheck",
    "ValidationError",
    "WKBFit",
    "assemble_jacobi",
    "band_report",
    "band_structure",
    "build_mass_distribution",
    "build_pd_distribution",
    "build_scaled_system",
    "build_two_periodic",
    "canonical_derivative_exponents",
    "check_admissibility",
    "classify_sl_case",
    "classify_tail",
    "construct_dsp",
    "coupling_constant",
    "coupling_values",
    "delta_r_from_X",
    "delta_r_growth",
    "delta_r_log",
    "detect_edge_eigenvalues",
    "diag_transform",
    "edge_quadratic",
    "eigenvalues_bisect",
    "eigenvectors_inverse_iteration",
    "extend_trace_asymptotic",
    "gamma_profile",
    "gershgorin_interval",
    "hse_residual_array",
    "integrate_canonical",
    "jost_verify",
    "l2_growth",
    "liouville",
    "local_frequencies",
    "predict_spectrum",
    "profile_constant",
    "q0_fd",
    "rayleigh_quotients",
    "regularity_check",
    "scaling_params",
    "similarity_check",
    "sl_coefficients",
    "spectrum_fill_report",
    "sturm_counts",
    "theorem_model",
    "trace_regularity",
    "truncation_eigenvalues",
    "wkb_fit",
    "__version__",
]
