"""Double-phase Dirichlet problems on grids: fixed-p solves, p -> 1
continuation with warm starts, and certification of the limit flux pair."""

from .grid import (GridDomain, ScalarField, VectorField, build_grid,
                   cell_average, gradient, gradient_adjoint, integrate)
from .weights import (H0Report, WeightField, aq_constant, check_H0,
                      make_weight, zero_weight)
from .orlicz import (ExponentPair, HoelderCheck, SmallnessResult,
                     hoelder_fp_check, lr_norm, luxemburg_norm, modular,
                     smallness_check, sobolev_constant, weighted_lq_norm)
from .solver import (SolveParams, SolveResult, energy, energy_gradient, flux,
                     solve_fixed_p, total_flux, weak_residual)
from .continuation import (ContinuationConfig, LimitCertificate,
                           StepDiagnostics, default_schedule, monotone_gap,
                           pairing_ratio, poincare_ratio, run_continuation,
                           step_diagnostics, uniqueness_probe)
from .cli_report import (BadValue, ConfigError, MissingKey, RunConfig,
                         RunSummary, emit_csv, emit_json, make_rhs,
                         parse_config, run)

__version__ = "0.1.0"

__all__ = [
    "GridDomain", "ScalarField", "VectorField", "build_grid", "cell_average",
    "gradient", "gradient_adjoint", "integrate",
    "H0Report", "WeightField", "aq_constant", "check_H0", "make_weight",
    "zero_weight",
    "ExponentPair", "HoelderCheck", "SmallnessResult", "hoelder_fp_check",
    "lr_norm", "luxemburg_norm", "modular", "smallness_check",
    "sobolev_constant", "weighted_lq_norm",
    "SolveParams", "SolveResult", "energy", "energy_gradient", "flux",
    "solve_fixed_p", "total_flux", "weak_residual",
    "ContinuationConfig", "LimitCertificate", "StepDiagnostics",
    "default_schedule", "monotone_gap", "pairing_ratio", "poincare_ratio",
    "run_continuation", "step_diagnostics", "uniqueness_probe",
    "BadValue", "ConfigError", "MissingKey", "RunConfig", "RunSummary",
    "emit_csv", "emit_json", "make_rhs", "parse_config", "run",
]
