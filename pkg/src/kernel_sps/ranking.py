"""Reference/perturbed gradient statistics, normalized ranks and region membership.

For a coefficient vector ``alpha`` and perturbations ``G_0 = I, G_1..G_{m-1}``
a problem produces ``Z_i(alpha) = ||Psi g(alpha, G_i(residual))||^2``. The
normalized rank of ``Z_0`` among all ``Z_i`` (ties broken by a fixed random
order) decides membership: ``alpha`` is in the region of level ``1 - q/m``
when the rank is at most ``1 - q/m``, i.e. ``Z_0`` is not among the ``q``
largest values.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Optional

import numpy as np

from .errors import ConfigError, DataError
from .perturbation import PerturbationSet, Transform, TransformGroup, draw_perturbations
from .seeding import check_seed

ZBatch = Callable[[np.ndarray, PerturbationSet], np.ndarray]
ZEvaluator = Callable[[np.ndarray, Transform], float]


@dataclass(frozen=True, eq=False)
class GradientPerturbationProblem:
    """An estimator-specific Z evaluator.

    ``z_batch(alphas, pset)`` maps a ``(k, dim)`` array of coefficient vectors
    to the ``(k, m)`` array of Z values under every element of ``pset``.
    ``z_evaluator(alpha, t)`` is the single-transform form; when both are
    given they must agree (the tests cross-check them).
    """

    dim: int
    group: TransformGroup
    residual_dim: int
    z_batch: Optional[ZBatch] = None
    z_evaluator: Optional[ZEvaluator] = None
    name: str = "problem"
    center: Optional[np.ndarray] = field(default=None, repr=False)

    def __post_init__(self):
        if self.z_batch is None and self.z_evaluator is None:
            raise ConfigError("a problem needs z_batch or z_evaluator")

    def check_alpha(self, alpha) -> np.ndarray:
        a = np.asarray(alpha, dtype=float)
        if a.shape[-1] != self.dim:
            raise DataError(
                f"coefficient vector has dimension {a.shape[-1]}, problem expects {self.dim}"
            )
        return a

    def check_pset(self, pset: PerturbationSet) -> None:
        if pset.group != self.group or pset.dim != self.residual_dim:
            raise ConfigError(
                "perturbation set was drawn for a different group or residual dimension"
            )

    def z_matrix(self, alphas, pset: PerturbationSet) -> np.ndarray:
        alphas = np.atleast_2d(self.check_alpha(alphas))
        self.check_pset(pset)
        if self.z_batch is not None:
            return np.asarray(self.z_batch(alphas, pset), dtype=float)
        ts = pset.transforms
        return np.array([[self.z_evaluator(a, t) for t in ts] for a in alphas])


def z_values(problem: GradientPerturbationProblem, alpha, pset: PerturbationSet) -> np.ndarray:
    alpha = problem.check_alpha(alpha)
    if alpha.ndim != 1:
        raise DataError("z_values takes a single coefficient vector")
    return problem.z_matrix(alpha[None, :], pset)[0]


def _check_tie_order(tie_order, m: int) -> np.ndarray:
    pi = np.asarray(tie_order)
    if pi.shape != (m,) or not np.array_equal(np.sort(pi), np.arange(m)):
        raise DataError(f"tie_order must be a permutation of 0..{m - 1}")
    return pi


def rank_indices(zs, tie_order) -> np.ndarray:
    """Integer ranks ``k`` in ``1..m`` (normalized rank is ``k / m``), row-wise.

    ``k = 1 + #{i >= 1 : Z_i <_pi Z_0}`` where ``Z_i <_pi Z_0`` iff
    ``Z_i < Z_0`` or (``Z_i == Z_0`` and ``pi[i] < pi[0]``). A reference value
    that dominates the perturbed ones gets rank 1; the minimizer of ``Z_0``
    gets ``1 / m``.
    """
    zs = np.atleast_2d(np.asarray(zs, dtype=float))
    m = zs.shape[1]
    pi = _check_tie_order(tie_order, m)
    z0 = zs[:, :1]
    rest = zs[:, 1:]
    below = (rest < z0) | ((rest == z0) & (pi[1:] < pi[0]))
    return 1 + below.sum(axis=1)


def normalized_rank(zs, tie_order) -> Fraction:
    zs = np.asarray(zs, dtype=float)
    if zs.ndim != 1:
        raise DataError("normalized_rank takes one list of Z values")
    return Fraction(int(rank_indices(zs, tie_order)[0]), zs.shape[0])


def precedes(a: float, b: float, pa: int, pb: int) -> bool:
    """The randomized strict order: ``a <_pi b``."""
    return a < b or (a == b and pa < pb)


@dataclass(frozen=True)
class RegionConfig:
    m: int
    q: int
    seed: int = 0

    def __post_init__(self):
        if not isinstance(self.m, (int, np.integer)) or not isinstance(self.q, (int, np.integer)):
            raise ConfigError("m and q must be integers")
        if self.m < 2:
            raise ConfigError(f"m must be at least 2, got {self.m}")
        if not 0 < self.q < self.m:
            raise ConfigError(f"need 0 < q < m, got q={self.q}, m={self.m}")
        check_seed(self.seed)

    @property
    def p(self) -> Fraction:
        """Confidence level ``1 - q/m``."""
        return 1 - Fraction(self.q, self.m)

    @property
    def max_rank_index(self) -> int:
        return self.m - self.q

    def with_q(self, q: int) -> "RegionConfig":
        return RegionConfig(self.m, q, self.seed)


@dataclass(frozen=True, eq=False)
class MembershipResult:
    member: bool
    rank: Fraction
    z_values: np.ndarray


class ConfidenceRegion:
    """``A_p = {alpha : rank(alpha) <= 1 - q/m}`` for one problem and config.

    The perturbation set is drawn once from ``(group, m, residual_dim, seed)``
    and shared by every query, so the region is a fixed deterministic set.
    """

    def __init__(self, problem: GradientPerturbationProblem, config: RegionConfig,
                 pset: Optional[PerturbationSet] = None):
        self.problem = problem
        self.config = config
        if pset is None:
            pset = draw_perturbations(problem.group, config.m, problem.residual_dim, config.seed)
        elif pset.m != config.m:
            raise ConfigError(f"perturbation set has m={pset.m}, config has m={config.m}")
        problem.check_pset(pset)
        self.pset = pset

    @property
    def m(self) -> int:
        return self.config.m

    def z_matrix(self, alphas) -> np.ndarray:
        return self.problem.z_matrix(alphas, self.pset)

    def rank_index(self, alphas) -> np.ndarray:
        return rank_indices(self.z_matrix(alphas), self.pset.tie_order)

    def contains(self, alphas, q: Optional[int] = None) -> np.ndarray:
        q = self.config.q if q is None else q
        return self.rank_index(alphas) <= self.m - q

    def membership(self, alpha) -> MembershipResult:
        alpha = self.problem.check_alpha(alpha)
        zs = self.z_matrix(alpha[None, :])[0]
        rank = normalized_rank(zs, self.pset.tie_order)
        return MembershipResult(bool(rank <= self.config.p), rank, zs)


def is_member(problem: GradientPerturbationProblem, alpha, config: RegionConfig) -> MembershipResult:
    return ConfidenceRegion(problem, config).membership(alpha)
