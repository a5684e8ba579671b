"""Distribution-free confidence regions for kernel-method coefficient vectors.

Residuals inside an objective's gradient are perturbed by random elements of
a noise-invariance group (sign changes or permutations); a rank test on the
resulting gradient norms yields regions with exact finite-sample coverage.
"""

__version__ = "0.1.0"

from .coverage import EstimatorSpec, Scenario, assemble, coverage_experiment, ideal_coefficients, point_estimate
from .data import DataSample, NoiseSpec, generate_synthetic, load_csv, save_csv
from .errors import ConfigError, ConvergenceWarning, DataError, KernelSPSError, NumericalError
from .estimators import (
    CanonicalLS,
    klasso_estimate,
    klasso_problem,
    krr_canonical,
    ls_estimate,
    lssvc_canonical,
    svr_estimate,
    svr_problem,
)
from .explorer import evaluate_model, mc_region, model_band, ray_scan, ray_scan_many
from .kernels import GramMatrix, KernelSpec, check_strict_pd, gram_matrix
from .perturbation import PerturbationSet, Transform, TransformGroup, draw_perturbations
from .ranking import ConfidenceRegion, GradientPerturbationProblem, RegionConfig, is_member, normalized_rank
from .sps import Ellipsoid, outer_ellipsoid, sps_problem

__all__ = [
    "CanonicalLS", "ConfidenceRegion", "ConfigError", "ConvergenceWarning", "DataError", "DataSample",
    "Ellipsoid", "EstimatorSpec", "GradientPerturbationProblem", "GramMatrix", "KernelSPSError",
    "KernelSpec", "NoiseSpec", "NumericalError", "PerturbationSet", "RegionConfig", "Scenario",
    "Transform", "TransformGroup", "assemble", "check_strict_pd", "coverage_experiment",
    "draw_perturbations", "evaluate_model", "generate_synthetic", "gram_matrix", "ideal_coefficients",
    "is_member", "klasso_estimate", "klasso_problem", "krr_canonical", "load_csv", "ls_estimate",
    "lssvc_canonical", "mc_region", "model_band", "normalized_rank", "outer_ellipsoid",
    "point_estimate", "ray_scan", "ray_scan_many", "save_csv", "sps_problem", "svr_estimate",
    "svr_problem",
]
