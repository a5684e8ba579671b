"""Estimator configuration, problem assembly and Monte Carlo coverage runs."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.linalg import cho_factor, cho_solve
from scipy.stats import binomtest

from . import seeding
from .data import DataSample, NoiseSpec, TrueFunction, generate_synthetic
from .errors import ConfigError, NumericalError
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
from .kernels import DEFAULT_REL_TOL, GramMatrix, KernelSpec, check_strict_pd, gram_matrix, require_strict_pd
from .perturbation import TransformGroup
from .ranking import ConfidenceRegion, GradientPerturbationProblem, RegionConfig
from .sps import sps_problem

# accepted parameter names per estimator, with defaults (None = required)
_ESTIMATOR_PARAMS = {
    "krr": {"lambda": None},
    "lssvc": {"lambda": None},
    "svr": {"eps": None, "c": 1.0},
    "klasso": {"lambda": None},
}


@dataclass(frozen=True)
class EstimatorSpec:
    """``krr:lambda=0.1``, ``lssvc:lambda=0.1``, ``svr:c=250,eps=0.2``, ``klasso:lambda=1``."""

    kind: str
    params: tuple = ()

    def __post_init__(self):
        if self.kind not in _ESTIMATOR_PARAMS:
            raise ConfigError(f"unknown estimator {self.kind!r}")
        allowed = _ESTIMATOR_PARAMS[self.kind]
        given = dict(self.params)
        unknown = set(given) - set(allowed)
        if unknown:
            raise ConfigError(f"{self.kind} does not take parameters {sorted(unknown)}")
        full = {}
        for key, default in allowed.items():
            if key in given:
                full[key] = float(given[key])
            elif default is None:
                raise ConfigError(f"{self.kind} requires parameter {key!r}")
            else:
                full[key] = default
        if "lambda" in full and not full["lambda"] > 0:
            raise ConfigError("lambda must be positive")
        if self.kind == "svr" and (full["eps"] < 0 or not full["c"] > 0):
            raise ConfigError("svr needs eps >= 0 and c > 0")
        object.__setattr__(self, "params", tuple(sorted(full.items())))

    @classmethod
    def parse(cls, text: str) -> "EstimatorSpec":
        kind, _, rest = text.strip().partition(":")
        kv = {}
        for item in filter(None, (s.strip() for s in rest.split(","))):
            key, sep, value = item.partition("=")
            if not sep:
                raise ConfigError(f"expected key=value in estimator spec, got {item!r}")
            key = {"lam": "lambda", "epsilon": "eps"}.get(key.strip(), key.strip())
            try:
                kv[key] = float(value)
            except ValueError:
                raise ConfigError(f"non-numeric estimator parameter {item!r}") from None
        return cls(kind.strip().lower(), tuple(kv.items()))

    def __getitem__(self, key: str) -> float:
        return dict(self.params)[key]

    def describe(self) -> str:
        return self.kind + ":" + ",".join(f"{k}={v!r}" for k, v in self.params)

    @property
    def quadratic(self) -> bool:
        return self.kind in ("krr", "lssvc")


@dataclass(eq=False)
class Assembled:
    """A problem plus what was needed to build it."""

    problem: GradientPerturbationProblem
    gram: Optional[GramMatrix] = None
    canonical: Optional[CanonicalLS] = None


def assemble(estimator: EstimatorSpec, sample: DataSample, kernel: Optional[KernelSpec] = None,
             group: Optional[TransformGroup] = None, weighting: str = "default",
             gram: Optional[GramMatrix] = None, rel_tol: float = DEFAULT_REL_TOL,
             require_pd: bool = True) -> Assembled:
    """Build the gradient-perturbation problem for ``estimator`` on ``sample``.

    ``weighting="default"`` is ``(Phi^T Phi)^{-1/2}`` for quadratic estimators
    and the identity otherwise.
    """
    group = group or TransformGroup.sign_change()
    if weighting not in ("default", "identity", "hessian"):
        raise ConfigError(f"unknown weighting {weighting!r}")
    if estimator.kind == "lssvc":
        c = lssvc_canonical(sample.inputs, sample.outputs, estimator["lambda"], rel_tol)
        w = "identity" if weighting == "identity" else "hessian"
        return Assembled(sps_problem(c, group, w), None, c)
    if kernel is None:
        raise ConfigError(f"{estimator.kind} needs a kernel")
    if gram is None:
        gram = gram_matrix(kernel, sample.inputs)
    if require_pd:
        require_strict_pd(gram, rel_tol)
    if estimator.kind == "krr":
        c = krr_canonical(gram, sample.outputs, estimator["lambda"], rel_tol=rel_tol)
        w = "identity" if weighting == "identity" else "hessian"
        return Assembled(sps_problem(c, group, w), gram, c)
    if weighting == "hessian":
        raise ConfigError("hessian weighting is only defined for quadratic estimators")
    if estimator.kind == "svr":
        return Assembled(svr_problem(gram, sample.outputs, estimator["eps"], group), gram)
    return Assembled(klasso_problem(gram, sample.outputs, estimator["lambda"], group), gram)


def point_estimate(estimator: EstimatorSpec, sample: DataSample, assembled: Assembled,
                   **solver_kwargs) -> np.ndarray:
    if assembled.canonical is not None:
        return ls_estimate(assembled.canonical)
    if estimator.kind == "svr":
        return svr_estimate(assembled.gram, sample.outputs, estimator["eps"], estimator["c"],
                            **solver_kwargs)
    return klasso_estimate(assembled.gram, sample.outputs, estimator["lambda"], **solver_kwargs)


def ideal_coefficients(gram: GramMatrix, true_outputs, rel_tol: float = DEFAULT_REL_TOL) -> np.ndarray:
    """Solve ``K a = y_true`` by Cholesky."""
    require_strict_pd(gram, rel_tol)
    return cho_solve(cho_factor(gram.entries), np.asarray(true_outputs, dtype=float))


@dataclass(frozen=True)
class Scenario:
    kernel: KernelSpec
    estimator: EstimatorSpec
    noise: NoiseSpec
    n: int = 20
    input_range: tuple = (0.0, 10.0)
    true_fn: TrueFunction = "x_sin_x"
    group: TransformGroup = field(default_factory=TransformGroup.sign_change)
    weighting: str = "default"

    def __post_init__(self):
        if self.estimator.kind == "lssvc":
            raise ConfigError("coverage scenarios are defined for regression estimators")


@dataclass
class CoverageResult:
    empirical_coverage: float
    trials: int
    p_nominal: float
    ranks: np.ndarray
    m: int

    @property
    def members(self) -> int:
        return int(round(self.empirical_coverage * self.trials))

    def confidence_interval(self, level: float = 0.99) -> tuple:
        ci = binomtest(self.members, self.trials).proportion_ci(level, method="exact")
        return float(ci.low), float(ci.high)

    @property
    def three_sigma(self) -> float:
        p = self.p_nominal
        return 3.0 * math.sqrt(p * (1.0 - p) / self.trials)


def coverage_experiment(scenario: Scenario, trials: int, config: RegionConfig,
                        seed: int) -> CoverageResult:
    """Fraction of trials in which the ideal coefficients land in the region.

    Each trial draws fresh noise and a fresh perturbation set from per-trial
    child seeds; ``config.seed`` is ignored in favour of those.
    """
    if trials < 1:
        raise ConfigError("trials must be at least 1")
    seeding.check_seed(seed)
    lo, hi = scenario.input_range
    # inputs are deterministic, so one Gram matrix and one PD check cover every trial
    probe = generate_synthetic(scenario.true_fn, scenario.n, (lo, hi), NoiseSpec.zero(), 0)
    gram = gram_matrix(scenario.kernel, probe.inputs)
    diag = check_strict_pd(gram)
    if not diag.strictly_pd:
        raise NumericalError(
            f"scenario Gram matrix is not strictly PD (min eigenvalue {diag.min_eigenvalue:.3e}, "
            f"condition {diag.condition_estimate:.3e})"
        )
    alpha_star = ideal_coefficients(gram, probe.true_outputs)
    ranks = np.empty(trials, dtype=int)
    for i in range(trials):
        sample = generate_synthetic(scenario.true_fn, scenario.n, (lo, hi), scenario.noise,
                                    seeding.derive_seed(seed, "trial", i, "data"))
        built = assemble(scenario.estimator, sample, scenario.kernel, scenario.group,
                         scenario.weighting, gram=gram, require_pd=False)
        cfg = RegionConfig(config.m, config.q, seeding.derive_seed(seed, "trial", i, "perturbation"))
        region = ConfidenceRegion(built.problem, cfg)
        ranks[i] = region.rank_index(alpha_star[None, :])[0]
    covered = np.count_nonzero(ranks <= config.max_rank_index)
    return CoverageResult(covered / trials, trials, float(config.p), ranks, config.m)
