"""Estimator reductions.

KRR and LS-SVC are rewritten as canonical least squares ``||z - Phi a||^2``
whose last ``n_aug`` rows are noise-free and must not be perturbed. epsilon-SVR
and kernelized LASSO are not quadratic; for them we provide the Z statistics
built from a subgradient, plus simple point-estimate solvers.

``sign(0)`` is taken as ``0`` wherever a subgradient needs a selection at a
kink.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from functools import cached_property
from typing import Optional

import numpy as np

from .errors import ConfigError, ConvergenceWarning, DataError, NumericalError
from .kernels import DEFAULT_REL_TOL, GramMatrix, as_points, psd_inv_sqrt, require_strict_pd
from .perturbation import PERMUTATION, PerturbationSet, Transform, TransformGroup, apply
from .ranking import GradientPerturbationProblem


def gram_entries(gram) -> np.ndarray:
    if isinstance(gram, GramMatrix):
        return gram.entries
    k = np.asarray(gram, dtype=float)
    if k.ndim != 2 or k.shape[0] != k.shape[1]:
        raise DataError(f"Gram matrix must be square, got shape {k.shape}")
    return k


def _as_gram(gram) -> GramMatrix:
    return gram if isinstance(gram, GramMatrix) else GramMatrix.from_matrix(gram)


def _vector(v, n: int, what: str) -> np.ndarray:
    v = np.asarray(v, dtype=float).reshape(-1)
    if v.shape[0] != n:
        raise DataError(f"{what} has length {v.shape[0]}, expected {n}")
    return v


def perturb_rows(vectors: np.ndarray, pset: PerturbationSet) -> np.ndarray:
    """Apply every element of ``pset`` to every row: ``(k, d) -> (k, m, d)``."""
    k, d = vectors.shape
    if d != pset.dim:
        raise DataError(f"perturbation set acts on length {pset.dim}, got {d}")
    h = pset.head
    out = np.empty((k, pset.m, d))
    if pset.kind == PERMUTATION:
        out[:, :, :h] = vectors[:, :h][:, pset.elements]
    else:
        out[:, :, :h] = vectors[:, None, :h] * pset.elements[None, :, :]
    if h < d:
        out[:, :, h:] = vectors[:, None, h:]
    return out


def perturbed_products(vectors: np.ndarray, pset: PerturbationSet, mat: np.ndarray) -> np.ndarray:
    """``perturb_rows(vectors, pset) @ mat`` without forming the perturbed rows
    for sign changes: ``(k, d) -> (k, m, mat.shape[1])``."""
    if pset.kind == PERMUTATION:
        return perturb_rows(vectors, pset) @ mat
    k, d = vectors.shape
    if d != pset.dim:
        raise DataError(f"perturbation set acts on length {pset.dim}, got {d}")
    h = pset.head
    out = pset.elements @ (vectors[:, :h, None] * mat[None, :h, :])
    if h < d:
        out += (vectors[:, h:] @ mat[h:])[:, None, :]
    return out


# --- canonical least squares ---------------------------------------------------

@dataclass(frozen=True, eq=False)
class CanonicalLS:
    """``||target - regressor @ a||^2`` with ``n_real`` perturbable rows first
    and ``n_aug`` fixed auxiliary rows last."""

    regressor: np.ndarray
    target: np.ndarray
    n_real: int
    n_aug: int
    rel_tol: float = field(default=DEFAULT_REL_TOL, repr=False)

    def __post_init__(self):
        phi = np.asarray(self.regressor, dtype=float)
        z = np.asarray(self.target, dtype=float).reshape(-1)
        if phi.ndim != 2 or phi.shape[0] != z.shape[0]:
            raise DataError(f"regressor shape {phi.shape} does not match target length {z.shape[0]}")
        if self.n_real < 1 or self.n_aug < 0 or self.n_real + self.n_aug != z.shape[0]:
            raise DataError("n_real + n_aug must equal the number of rows")
        object.__setattr__(self, "regressor", phi)
        object.__setattr__(self, "target", z)

    @property
    def dim(self) -> int:
        return self.regressor.shape[1]

    @property
    def n_rows(self) -> int:
        return self.regressor.shape[0]

    @cached_property
    def hessian(self) -> np.ndarray:
        """``Phi^T Phi``."""
        h = self.regressor.T @ self.regressor
        return (h + h.T) / 2.0

    @cached_property
    def hessian_eigenvalues(self) -> np.ndarray:
        return np.linalg.eigvalsh(self.hessian)

    def full_column_rank(self) -> bool:
        w = self.hessian_eigenvalues
        return self.n_rows >= self.dim and bool(w[0] > self.rel_tol * w[-1])

    def require_full_rank(self) -> None:
        if not self.full_column_rank():
            w = self.hessian_eigenvalues
            raise NumericalError(
                f"regressor is rank deficient (Phi^T Phi eigenvalues {w[0]:.3e} .. {w[-1]:.3e})"
            )

    @cached_property
    def inv_sqrt_hessian(self) -> np.ndarray:
        """``(Phi^T Phi)^{-1/2}``, computed once."""
        self.require_full_rank()
        return psd_inv_sqrt(self.hessian, self.rel_tol)

    def objective(self, alpha) -> float:
        r = self.target - self.regressor @ np.asarray(alpha, dtype=float)
        return float(r @ r)

    def residual(self, alpha) -> np.ndarray:
        return self.target - self.regressor @ np.asarray(alpha, dtype=float)

    def group(self, base: TransformGroup) -> TransformGroup:
        """Block group perturbing only the ``n_real`` leading residuals."""
        return TransformGroup.block(base, self.n_aug)


def krr_canonical(gram, y, lam: float, weights=None, rel_tol: float = DEFAULT_REL_TOL) -> CanonicalLS:
    """Phi = [W^{1/2} K / sqrt(n); sqrt(lam) K^{1/2}], z = [W^{1/2} y / sqrt(n); 0]."""
    g = _as_gram(gram)
    require_strict_pd(g, rel_tol)
    if not lam > 0:
        raise ConfigError("lambda must be positive")
    n = g.n
    y = _vector(y, n, "y")
    w = np.ones(n) if weights is None else _vector(weights, n, "weights")
    if not np.all(w > 0):
        raise ConfigError("KRR weights must be positive")
    k = g.entries
    sw = np.sqrt(w)
    rn = 1.0 / math.sqrt(n)
    phi = np.vstack([rn * sw[:, None] * k, math.sqrt(lam) * g.sqrt(rel_tol)])
    z = np.concatenate([rn * sw * y, np.zeros(n)])
    return CanonicalLS(phi, z, n, n, rel_tol)


def krr_objective(gram, y, alpha, lam: float, weights=None) -> float:
    """(1/n)(y - K a)^T W (y - K a) + lam a^T K a."""
    k = gram_entries(gram)
    n = k.shape[0]
    w = np.ones(n) if weights is None else np.asarray(weights, dtype=float)
    a = np.asarray(alpha, dtype=float)
    r = np.asarray(y, dtype=float) - k @ a
    return float((r * w) @ r / n + lam * (a @ k @ a))


def lssvc_design(inputs) -> np.ndarray:
    """Rows ``[1, x_k^T]``."""
    x = as_points(inputs)
    return np.hstack([np.ones((x.shape[0], 1)), x])


def _labels(labels, n: int) -> np.ndarray:
    y = _vector(labels, n, "labels")
    if not np.all(np.abs(y) == 1.0):
        raise DataError("LS-SVC labels must be +1 or -1")
    return y


def lssvc_canonical(inputs, labels, lam: float, rel_tol: float = DEFAULT_REL_TOL) -> CanonicalLS:
    """Phi = [sqrt(lam) y * X; B / sqrt(2)], z = [sqrt(lam) 1_n; 0], B = diag(0, 1, ..., 1).

    The coefficient vector is ``[b, w]``. The first row of ``B`` is zero; it is
    kept so the auxiliary block has ``d + 1`` rows.
    """
    if not lam > 0:
        raise ConfigError("lambda must be positive")
    x = lssvc_design(inputs)
    n, p = x.shape
    y = _labels(labels, n)
    b = np.eye(p)
    b[0, 0] = 0.0
    phi = np.vstack([math.sqrt(lam) * y[:, None] * x, b / math.sqrt(2.0)])
    z = np.concatenate([math.sqrt(lam) * np.ones(n), np.zeros(p)])
    c = CanonicalLS(phi, z, n, p, rel_tol)
    c.require_full_rank()
    return c


def lssvc_objective(inputs, labels, alpha, lam: float) -> float:
    """0.5 ||B a||^2 + lam ||1 - y * (X a)||^2."""
    x = lssvc_design(inputs)
    y = _labels(labels, x.shape[0])
    a = np.asarray(alpha, dtype=float)
    r = 1.0 - y * (x @ a)
    return float(0.5 * (a[1:] @ a[1:]) + lam * (r @ r))


def lssvc_predict(inputs, alpha) -> np.ndarray:
    return np.sign(lssvc_design(inputs) @ np.asarray(alpha, dtype=float))


def ls_estimate(c: CanonicalLS) -> np.ndarray:
    c.require_full_rank()
    q, r = np.linalg.qr(c.regressor)
    return np.linalg.solve(r, q.T @ c.target)


# --- epsilon-SVR -----------------------------------------------------------------

def svr_objective(gram, y, alpha, eps: float) -> float:
    """Dual objective in coefficient form: y^T a - a^T K a / 2 - eps ||a||_1."""
    k = gram_entries(gram)
    a = np.asarray(alpha, dtype=float)
    return float(np.asarray(y, dtype=float) @ a - 0.5 * a @ k @ a - eps * np.abs(a).sum())


def svr_wolfe_dual(gram, y, alpha_plus, alpha_minus, eps: float) -> float:
    """Wolfe dual over ``(alpha+, alpha-)``."""
    k = gram_entries(gram)
    ap = np.asarray(alpha_plus, dtype=float)
    am = np.asarray(alpha_minus, dtype=float)
    b = ap - am
    return float(np.asarray(y, dtype=float) @ b - 0.5 * b @ k @ b - eps * (ap + am).sum())


def svr_subgradient(gram, y, alpha, eps: float) -> np.ndarray:
    k = gram_entries(gram)
    a = np.asarray(alpha, dtype=float)
    return np.asarray(y, dtype=float) - k @ a - eps * np.sign(a)


def svr_z(gram, y, alpha, eps: float, t: Transform) -> float:
    """``|| t(y - K a) - eps sign(a) ||^2``; the sign term is not perturbed."""
    k = gram_entries(gram)
    n = k.shape[0]
    a = _vector(alpha, n, "alpha")
    if eps < 0:
        raise ConfigError("epsilon must be non-negative")
    v = apply(t, _vector(y, n, "y") - k @ a) - eps * np.sign(a)
    return float(v @ v)


def svr_problem(gram, y, eps: float, group: Optional[TransformGroup] = None,
                weighting=None) -> GradientPerturbationProblem:
    k = gram_entries(gram)
    n = k.shape[0]
    y = _vector(y, n, "y")
    if eps < 0:
        raise ConfigError("epsilon must be non-negative")
    group = group or TransformGroup.sign_change()
    psi = None if weighting is None else np.asarray(weighting, dtype=float)

    def batch(alphas, pset):
        res = y[None, :] - alphas @ k.T
        v = perturb_rows(res, pset) - eps * np.sign(alphas)[:, None, :]
        if psi is not None:
            v = v @ psi.T
        return np.einsum("kmi,kmi->km", v, v)

    def single(alpha, t):
        v = apply(t, y - k @ alpha) - eps * np.sign(alpha)
        if psi is not None:
            v = psi @ v
        return float(v @ v)

    return GradientPerturbationProblem(n, group, n, batch, single, name="svr")


@dataclass
class SolverInfo:
    n_iter: int
    converged: bool
    objective: list = field(default_factory=list)
    kkt_residual: float = math.nan


def _project_box_hyperplane(v: np.ndarray, upper: float, w: np.ndarray) -> np.ndarray:
    """Euclidean projection onto ``{0 <= a <= upper, w^T a = 0}`` with ``w = +-1``."""
    bps = np.unique(np.concatenate([v / w, (v - upper) / w]))
    h = (w[None, :] * np.clip(v[None, :] - bps[:, None] * w[None, :], 0.0, upper)).sum(axis=1)
    # h is non-increasing and piecewise linear in the multiplier
    zero = np.flatnonzero(h == 0.0)
    if zero.size:
        nu = bps[zero[0]]
    else:
        j = int(np.flatnonzero(h > 0.0)[-1])
        lo, hi = bps[j], bps[j + 1]
        nu = lo + (hi - lo) * h[j] / (h[j] - h[j + 1])
    return np.clip(v - nu * w, 0.0, upper)


def svr_estimate(gram, y, eps: float, c: float, max_iter: int = 100_000, tol: float = 1e-10,
                 return_info: bool = False):
    """Projected-gradient ascent on the Wolfe dual; returns ``alpha+ - alpha-``.

    Step size ``1 / L`` with ``L = 2 lambda_max(K)`` keeps the dual objective
    non-decreasing. With ``return_info`` the tuple ``(alpha, alpha_plus,
    alpha_minus, info)`` is returned.
    """
    k = gram_entries(gram)
    n = k.shape[0]
    y = _vector(y, n, "y")
    if eps < 0 or not c > 0:
        raise ConfigError("need eps >= 0 and c > 0")
    upper = c / n
    lmax = float(np.linalg.eigvalsh(k)[-1])
    step = 1.0 / (2.0 * lmax) if lmax > 0 else 1.0
    w = np.concatenate([np.ones(n), -np.ones(n)])
    a = np.zeros(2 * n)
    info = SolverInfo(0, False)

    def grad(a):
        r = y - k @ (a[:n] - a[n:])
        return np.concatenate([r - eps, -r - eps])

    def dual(a):
        return svr_wolfe_dual(k, y, a[:n], a[n:], eps)

    if return_info:
        info.objective.append(dual(a))
    for it in range(1, max_iter + 1):
        a_new = _project_box_hyperplane(a + step * grad(a), upper, w)
        change = float(np.max(np.abs(a_new - a)))
        a = a_new
        if return_info:
            info.objective.append(dual(a))
        if change <= tol * max(1.0, upper):
            info.converged = True
            break
    info.n_iter = it
    info.kkt_residual = float(np.max(np.abs(a - _project_box_hyperplane(a + grad(a), upper, w))))
    if not info.converged:
        warnings.warn(
            f"svr_estimate did not converge in {max_iter} iterations "
            f"(KKT residual {info.kkt_residual:.3e})",
            ConvergenceWarning,
            stacklevel=2,
        )
    alpha = a[:n] - a[n:]
    if return_info:
        return alpha, a[:n].copy(), a[n:].copy(), info
    return alpha


# --- kernelized LASSO ------------------------------------------------------------

def klasso_objective(gram, y, alpha, lam: float) -> float:
    k = gram_entries(gram)
    a = np.asarray(alpha, dtype=float)
    r = np.asarray(y, dtype=float) - k @ a
    return float(0.5 * r @ r + lam * np.abs(a).sum())


def klasso_subgradient(gram, y, alpha, lam: float) -> np.ndarray:
    k = gram_entries(gram)
    a = np.asarray(alpha, dtype=float)
    return k @ (k @ a - np.asarray(y, dtype=float)) + lam * np.sign(a)


def klasso_z(gram, y, alpha, lam: float, t: Transform) -> float:
    """``|| K t(K a - y) + lam sign(a) ||^2``; the transform sits inside the product."""
    k = gram_entries(gram)
    n = k.shape[0]
    a = _vector(alpha, n, "alpha")
    if not lam > 0:
        raise ConfigError("lambda must be positive")
    v = k @ apply(t, k @ a - _vector(y, n, "y")) + lam * np.sign(a)
    return float(v @ v)


def klasso_problem(gram, y, lam: float, group: Optional[TransformGroup] = None,
                   weighting=None) -> GradientPerturbationProblem:
    k = gram_entries(gram)
    n = k.shape[0]
    y = _vector(y, n, "y")
    if not lam > 0:
        raise ConfigError("lambda must be positive")
    group = group or TransformGroup.sign_change()
    psi = None if weighting is None else np.asarray(weighting, dtype=float)

    def batch(alphas, pset):
        res = alphas @ k.T - y[None, :]
        v = perturbed_products(res, pset, k.T) + lam * np.sign(alphas)[:, None, :]
        if psi is not None:
            v = v @ psi.T
        return np.einsum("kmi,kmi->km", v, v)

    def single(alpha, t):
        v = k @ apply(t, k @ alpha - y) + lam * np.sign(alpha)
        if psi is not None:
            v = psi @ v
        return float(v @ v)

    return GradientPerturbationProblem(n, group, n, batch, single, name="klasso")


def soft_threshold(x, t):
    return np.sign(x) * np.maximum(np.abs(x) - t, 0.0)


def klasso_estimate(gram, y, lam: float, max_iter: int = 100_000, tol: float = 1e-10,
                    return_info: bool = False):
    """FISTA with step ``1 / L``, ``L = lambda_max(K^T K)``, and adaptive restart.

    Momentum is reset whenever the proximal step points against the previous
    move. The best iterate so far is returned, so the recorded objective
    sequence is non-increasing. Stops when the proximal step moves the
    extrapolated point by at most ``tol`` (relative to ``max(1, |a|_inf)``).
    """
    k = gram_entries(gram)
    n = k.shape[0]
    y = _vector(y, n, "y")
    if not lam > 0:
        raise ConfigError("lambda must be positive")
    lipschitz = float(np.linalg.eigvalsh(k.T @ k)[-1])
    if lipschitz <= 0:
        return (np.zeros(n), SolverInfo(0, True)) if return_info else np.zeros(n)
    step = 1.0 / lipschitz
    kty = k.T @ y
    ktk = k.T @ k
    x = np.zeros(n)
    best, f_best = x, klasso_objective(k, y, x, lam)
    point, t = x, 1.0
    info = SolverInfo(0, False)
    if return_info:
        info.objective.append(f_best)
    for it in range(1, max_iter + 1):
        z = soft_threshold(point - step * (ktk @ point - kty), step * lam)
        change = float(np.max(np.abs(z - point)))
        f_z = klasso_objective(k, y, z, lam)
        if f_z <= f_best:
            best, f_best = z, f_z
        if return_info:
            info.objective.append(f_best)
        if change <= tol * max(1.0, float(np.max(np.abs(z)))):
            info.converged = True
            break
        if (point - z) @ (z - x) > 0.0:
            t_next, point = 1.0, z
        else:
            t_next = 0.5 * (1.0 + math.sqrt(1.0 + 4.0 * t * t))
            point = z + ((t - 1.0) / t_next) * (z - x)
        x, t = z, t_next
    a = best
    info.n_iter = it
    # distance of the zero vector from the subdifferential, coordinate-wise
    g = k.T @ (k @ a - y)
    kkt = np.where(a != 0, np.abs(g + lam * np.sign(a)), np.maximum(np.abs(g) - lam, 0.0))
    info.kkt_residual = float(np.max(kkt))
    if not info.converged:
        warnings.warn(
            f"klasso_estimate did not converge in {max_iter} iterations "
            f"(KKT residual {info.kkt_residual:.3e})",
            ConvergenceWarning,
            stacklevel=2,
        )
    return (a, info) if return_info else a
