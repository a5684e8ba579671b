"""Sign-perturbed sums for canonical least-squares problems.

With ``M = Phi^T Phi`` and weighting ``M^{-1/2}``,

    Z_i(a) = || M^{-1/2} Phi^T G_i (z - Phi a) ||^2,

and ``Z_0(a) = (a - a_hat)^T M (a - a_hat)`` where ``a_hat`` is the LS
estimate. The region is star convex around ``a_hat`` and contained in the
ellipsoid ``(a - a_hat)^T (M / n) (a - a_hat) <= r``.

Outer radius
------------
In whitened coordinates ``u = M^{1/2} (a - a_hat)`` we have ``Z_0 = |u|^2`` and
``Z_i = |psi_i - Q_i u|^2`` with ``Q_i = M^{-1/2} Phi^T G_i Phi M^{-1/2}`` and
``psi_i = M^{-1/2} Phi^T G_i e`` (``e`` the LS residual). A member satisfies
``Z_0 <= Z_i`` for at least ``q`` indices, so ``Z_0 <= gamma_(q)``, the q-th
largest of

    gamma_i = max |u|^2  s.t.  u^T A u + 2 b^T u - c <= 0,
    A = I - Q_i^T Q_i,  b = Q_i^T psi_i,  c = |psi_i|^2.

One quadratic constraint means zero duality gap, and the dual is the
one-dimensional convex problem

    min_{mu A > I}  mu c + mu^2 b^T (mu A - I)^{-1} b,

solved by bisection on its derivative in the eigenbasis of ``A``. Every
feasible ``mu`` gives an upper bound on ``gamma_i``, so an imprecise multiplier
only loosens the ellipsoid, never breaks containment.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .errors import ConfigError, DataError, NumericalError
from .estimators import CanonicalLS, ls_estimate, perturb_rows, perturbed_products
from .perturbation import PerturbationSet, Transform, TransformGroup, apply
from .ranking import ConfidenceRegion, GradientPerturbationProblem, MembershipResult, RegionConfig

BISECTION_TOL = 1e-9
BISECTION_MAX_ITER = 200
# eigenvalue floor of A below which the subproblem is treated as unbounded
UNBOUNDED_TOL = 1e-12


def _check_transform(c: CanonicalLS, t: Transform) -> None:
    if t.dim != c.n_rows or t.fixed_tail != c.n_aug:
        raise ConfigError(
            f"transform must act on {c.n_rows} residuals with a fixed tail of {c.n_aug}, "
            f"got dim {t.dim} and tail {t.fixed_tail}"
        )


def sps_z(c: CanonicalLS, alpha, t: Transform) -> float:
    alpha = np.asarray(alpha, dtype=float)
    if alpha.shape != (c.dim,):
        raise DataError(f"coefficient vector has shape {alpha.shape}, expected ({c.dim},)")
    _check_transform(c, t)
    v = c.inv_sqrt_hessian @ (c.regressor.T @ apply(t, c.residual(alpha)))
    return float(v @ v)


def sps_group(c: CanonicalLS, base: Optional[TransformGroup] = None) -> TransformGroup:
    base = base or TransformGroup.sign_change()
    if c.n_aug == 0:
        return base
    return TransformGroup.block(base, c.n_aug)


def sps_problem(c: CanonicalLS, base: Optional[TransformGroup] = None,
                weighting="hessian") -> GradientPerturbationProblem:
    """Gradient-perturbation problem for a canonical LS form.

    ``weighting`` is ``"hessian"`` (``(Phi^T Phi)^{-1/2}``, the SPS choice),
    ``"identity"``, or an explicit ``dim x dim`` matrix.
    """
    c.require_full_rank()
    group = sps_group(c, base)
    if isinstance(weighting, str):
        if weighting == "hessian":
            psi = c.inv_sqrt_hessian
        elif weighting == "identity":
            psi = None
        else:
            raise ConfigError(f"unknown weighting {weighting!r}")
    else:
        psi = np.asarray(weighting, dtype=float)
        if psi.shape != (c.dim, c.dim):
            raise ConfigError(f"weighting must be {c.dim}x{c.dim}")
    phi, z = c.regressor, c.target
    # psi Phi^T G r, with psi folded into the regressor once
    phi_w = phi if psi is None else phi @ psi.T

    def batch(alphas, pset):
        res = z[None, :] - alphas @ phi.T
        v = perturbed_products(res, pset, phi_w)
        return np.einsum("kmi,kmi->km", v, v)

    def single(alpha, t):
        v = phi.T @ apply(t, z - phi @ alpha)
        if psi is not None:
            v = psi @ v
        return float(v @ v)

    return GradientPerturbationProblem(
        c.dim, group, c.n_rows, batch, single, name="sps", center=ls_estimate(c)
    )


def sps_membership(c: CanonicalLS, alpha, config: RegionConfig,
                   base: Optional[TransformGroup] = None) -> MembershipResult:
    return ConfidenceRegion(sps_problem(c, base), config).membership(alpha)


# --- ellipsoidal outer approximation ---------------------------------------------

@dataclass(frozen=True, eq=False)
class Ellipsoid:
    """``{a : (a - center)^T shape (a - center) <= radius}``."""

    center: np.ndarray
    shape: np.ndarray
    radius: float
    degenerate: bool = False
    q: Optional[int] = None
    m: Optional[int] = None

    def quad_form(self, alpha) -> np.ndarray:
        d = np.atleast_2d(np.asarray(alpha, dtype=float)) - self.center
        return np.einsum("ki,ij,kj->k", d, self.shape, d)

    def contains(self, alpha, slack: float = 0.0):
        out = self.quad_form(alpha) <= self.radius + slack
        return bool(out[0]) if np.ndim(alpha) == 1 else out

    def to_dict(self) -> dict:
        return {
            "center": self.center.tolist(),
            "shape": self.shape.tolist(),
            "radius": None if math.isinf(self.radius) else self.radius,
            "degenerate": self.degenerate,
            "q": self.q,
            "m": self.m,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Ellipsoid":
        r = d["radius"]
        return cls(np.asarray(d["center"], dtype=float), np.asarray(d["shape"], dtype=float),
                   math.inf if r is None else float(r), bool(d.get("degenerate", False)),
                   d.get("q"), d.get("m"))


def ellipsoid_contains(e: Ellipsoid, alpha) -> bool:
    return bool(e.quad_form(np.asarray(alpha, dtype=float))[0] <= e.radius)


def _dual_value(mu, a, b2, c):
    return mu * c + mu * mu * np.sum(b2 / (mu * a - 1.0))


def _dual_slope(mu, a, b2, c):
    d = mu * a - 1.0
    return c + np.sum(b2 * (mu * mu * a - 2.0 * mu) / (d * d))


def max_norm_under_quadratic(a_mat: np.ndarray, b: np.ndarray, c: float,
                             tol: float = BISECTION_TOL,
                             max_iter: int = BISECTION_MAX_ITER) -> float:
    """``max |u|^2`` subject to ``u^T A u + 2 b^T u - c <= 0`` (``c >= 0``).

    Returns ``inf`` when ``A`` has an eigenvalue at or below ``UNBOUNDED_TOL``.
    """
    w, v = np.linalg.eigh((a_mat + a_mat.T) / 2.0)
    if w[0] <= UNBOUNDED_TOL:
        return math.inf
    b2 = (v.T @ b) ** 2
    c = max(float(c), 0.0)
    if c == 0.0 and not np.any(b2):
        return 0.0
    lo = (1.0 / w[0]) * (1.0 + 1e-12)
    if _dual_slope(lo, w, b2, c) >= 0.0:
        return float(_dual_value(lo, w, b2, c))
    hi = 2.0 * lo
    for _ in range(max_iter):
        if _dual_slope(hi, w, b2, c) > 0.0:
            break
        lo, hi = hi, 2.0 * hi
    else:
        raise NumericalError(f"could not bracket the dual multiplier (bracket [{lo:g}, {hi:g}])")
    for _ in range(max_iter):
        if hi - lo <= tol * hi:
            break
        mid = 0.5 * (lo + hi)
        if _dual_slope(mid, w, b2, c) > 0.0:
            hi = mid
        else:
            lo = mid
    else:
        raise NumericalError(f"bisection did not converge (bracket [{lo:g}, {hi:g}])")
    return float(min(_dual_value(lo, w, b2, c), _dual_value(hi, w, b2, c)))


def _whitened_blocks(c: CanonicalLS, pset: PerturbationSet):
    """``Q_i`` (shape ``(m, dim, dim)``) and ``psi_i`` (shape ``(m, dim)``)."""
    if pset.dim != c.n_rows or pset.fixed_tail != c.n_aug:
        raise ConfigError("perturbation set does not match the canonical form's block structure")
    p = c.inv_sqrt_hessian
    phi = c.regressor
    resid = c.residual(ls_estimate(c))
    g_phi = perturb_rows(phi.T, pset)             # (dim, m, rows): column j of G_i Phi
    phit_g_phi = np.einsum("rj,kir->ijk", phi, g_phi)  # (m, dim, dim): Phi^T G_i Phi
    q_mats = p @ phit_g_phi @ p
    g_e = pset.apply_all(resid)                   # (m, rows)
    psi = (g_e @ phi) @ p.T
    return q_mats, psi


def sps_gammas(c: CanonicalLS, pset: PerturbationSet) -> np.ndarray:
    """``gamma_1 .. gamma_{m-1}`` in units of ``Z_0`` (not divided by ``n``)."""
    q_mats, psi = _whitened_blocks(c, pset)
    eye = np.eye(c.dim)
    out = np.empty(pset.m - 1)
    for i in range(1, pset.m):
        q = q_mats[i]
        out[i - 1] = max_norm_under_quadratic(eye - q.T @ q, q.T @ psi[i], float(psi[i] @ psi[i]))
    return out


def radius_from_gammas(gammas: np.ndarray, q: int, n: int) -> float:
    if not 0 < q <= gammas.shape[0]:
        raise ConfigError(f"q must be in 1..{gammas.shape[0]}")
    return float(np.sort(gammas)[::-1][q - 1] / n)


def outer_ellipsoid(c: CanonicalLS, pset: PerturbationSet, q: int,
                    gammas: Optional[np.ndarray] = None) -> Ellipsoid:
    """Ellipsoid containing the level ``1 - q/m`` region built from ``pset``.

    Shape is ``Phi^T Phi / n`` with ``n = n_real``. If the selected subproblem
    is unbounded the radius is ``inf`` and the ellipsoid is marked degenerate.
    """
    if not 0 < q < pset.m:
        raise ConfigError(f"need 0 < q < m, got q={q}, m={pset.m}")
    if gammas is None:
        gammas = sps_gammas(c, pset)
    n = c.n_real
    r = radius_from_gammas(gammas, q, n)
    return Ellipsoid(ls_estimate(c), c.hessian / n, r, math.isinf(r), q, pset.m)


def outer_ellipsoids(c: CanonicalLS, pset: PerturbationSet, qs: Sequence[int]) -> list[Ellipsoid]:
    gammas = sps_gammas(c, pset)
    return [outer_ellipsoid(c, pset, q, gammas) for q in qs]


# --- exact ray boundaries ----------------------------------------------------------

def sps_ray_crossings(c: CanonicalLS, pset: PerturbationSet, direction) -> np.ndarray:
    """For the ray ``a_hat + t d`` (t >= 0): the largest ``t_i`` with ``Z_0 <= Z_i``
    on ``[0, t_i]``, for ``i = 1..m-1``. ``inf`` when ``Z_0`` never overtakes.

    ``direction`` may be a single vector or a ``(k, dim)`` stack, giving
    ``(m - 1,)`` or ``(k, m - 1)``.
    """
    d = np.asarray(direction, dtype=float)
    dirs = np.atleast_2d(d)
    q_mats, psi = _whitened_blocks(c, pset)
    u = np.linalg.solve(c.inv_sqrt_hessian, dirs.T).T   # M^{1/2} d, (k, dim)
    b = np.einsum("mij,kj->kmi", q_mats[1:], u)          # (k, m-1, dim)
    a = psi[1:]
    uu = np.einsum("ki,ki->k", u, u)[:, None]
    quad = np.einsum("kmi,kmi->km", b, b) - uu           # <= 0 since |Q| <= 1
    lin = -2.0 * np.einsum("mi,kmi->km", a, b)
    const = np.broadcast_to(np.einsum("mi,mi->m", a, a), quad.shape)
    curved = quad < -1e-14 * uu
    with np.errstate(divide="ignore", invalid="ignore"):
        disc = np.maximum(lin * lin - 4.0 * quad * const, 0.0)
        root = (-lin - np.sqrt(disc)) / (2.0 * quad)
        linear = np.where(lin < 0.0, -const / lin, math.inf)
    out = np.where(curved, root, linear)
    return out[0] if d.ndim == 1 else out


def sps_ray_boundary(c: CanonicalLS, pset: PerturbationSet, direction, q: int) -> float:
    """Exact distance from ``a_hat`` to the boundary of the level ``1 - q/m``
    region along ``direction`` (ties have probability zero and are ignored).
    A ``(k, dim)`` stack of directions gives ``k`` distances."""
    t = -np.sort(-sps_ray_crossings(c, pset, direction), axis=-1)
    return float(t[q - 1]) if np.ndim(direction) == 1 else t[:, q - 1]
