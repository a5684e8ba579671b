"""Region exploration: ray scans, Monte Carlo sampling and model-space bands.

Bands are raw pointwise min/max envelopes of ``f_a(grid)`` over sampled
members; they are set extents, not quantiles. Away from the training inputs a
band carries no pointwise coverage guarantee.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Optional, Sequence, Union

import numpy as np

from . import seeding
from .errors import ConfigError, DataError
from .estimators import CanonicalLS
from .kernels import DEFAULT_REL_TOL, KernelSpec, as_points, kernel_matrix
from .perturbation import draw_perturbations
from .ranking import ConfidenceRegion, GradientPerturbationProblem, RegionConfig
from .sps import Ellipsoid, sps_group, sps_ray_boundary

# cap on k * m * residual_dim floats per vectorized Z evaluation
_CHUNK_FLOATS = 4_000_000


def evaluate_model(kernel: KernelSpec, train_inputs, alpha, grid) -> np.ndarray:
    """``f_a(z) = sum_i a_i k(z, x_i)`` on ``grid``; ``alpha`` may be a ``(k, n)`` batch."""
    x = as_points(train_inputs)
    a = np.asarray(alpha, dtype=float)
    if a.shape[-1] != x.shape[0]:
        raise DataError(f"{a.shape[-1]} coefficients for {x.shape[0]} training inputs")
    kg = kernel_matrix(kernel, grid, x)
    return a @ kg.T


def default_grid(train_inputs, points: int = 201) -> np.ndarray:
    x = as_points(train_inputs)
    if x.shape[1] != 1:
        raise DataError("a default grid is only defined for scalar inputs")
    return np.linspace(x.min(), x.max(), points).reshape(-1, 1)


def region_ranks(region: ConfidenceRegion, alphas) -> np.ndarray:
    """Chunked ``rank_index`` for many coefficient vectors."""
    alphas = np.atleast_2d(np.asarray(alphas, dtype=float))
    p = region.problem
    # perturbed residuals (m x residual_dim) or sign-weighted blocks (residual_dim x dim)
    per_alpha = max(region.m, p.dim) * max(p.residual_dim, p.dim)
    per = max(1, _CHUNK_FLOATS // per_alpha)
    out = np.empty(alphas.shape[0], dtype=int)
    for s in range(0, alphas.shape[0], per):
        out[s:s + per] = region.rank_index(alphas[s:s + per])
    return out


# --- ray scans -----------------------------------------------------------------------

@dataclass
class RayScan:
    """Boundary radii along rays: ``radii[j, l]`` for ray ``j`` and level ``qs[l]``.

    ``bracketed[j, l]`` is False when the ray was still inside at ``r_max``
    (the radius is then ``r_max``, a lower bound).
    """

    qs: np.ndarray
    m: int
    radii: np.ndarray
    bracketed: np.ndarray
    center_rank: int
    r_max: float

    @property
    def levels(self) -> list:
        return [1 - Fraction(int(q), self.m) for q in self.qs]


def _as_region(problem, config) -> ConfidenceRegion:
    if isinstance(problem, ConfidenceRegion):
        return problem
    if config is None:
        raise ConfigError("a RegionConfig is needed to scan a bare problem")
    return ConfidenceRegion(problem, config)


def ray_scan_many(problem: Union[GradientPerturbationProblem, ConfidenceRegion], center,
                  directions, config: Optional[RegionConfig] = None, r_max: float = 1.0,
                  steps: int = 32, qs: Optional[Sequence[int]] = None, min_frac: float = 1e-3,
                  tol: float = 1e-6, max_bisect: int = 60) -> RayScan:
    """Scan rays ``center + t d`` on a geometric grid over ``(0, r_max]`` then
    bisect the first exit for every requested level ``q``.

    For star-convex regions the first exit is the unique boundary; otherwise it
    is the end of the member prefix that contains the center.
    """
    region = _as_region(problem, config)
    m = region.m
    center = region.problem.check_alpha(center).astype(float)
    dirs = np.atleast_2d(region.problem.check_alpha(directions)).astype(float)
    qs = np.arange(1, m) if qs is None else np.asarray(sorted(set(int(q) for q in qs)))
    if qs.size == 0 or qs[0] < 1 or qs[-1] >= m:
        raise ConfigError(f"levels q must lie in 1..{m - 1}")
    center_rank = int(region_ranks(region, center[None, :])[0])
    k = dirs.shape[0]
    if r_max <= 0:
        inside = center_rank <= m - qs
        return RayScan(qs, m, np.zeros((k, qs.size)), np.broadcast_to(~inside, (k, qs.size)).copy(),
                       center_rank, 0.0)
    if steps < 2:
        raise ConfigError("steps must be at least 2")
    if center_rank > m - qs[0]:
        warnings.warn("ray scan center is not a member at the highest scanned level", stacklevel=2)

    ts = np.concatenate([[0.0], r_max * np.geomspace(min_frac, 1.0, steps - 1)])
    pts = center[None, None, :] + ts[None, :, None] * dirs[:, None, :]
    ranks = region_ranks(region, pts.reshape(-1, center.size)).reshape(k, steps)
    ranks[:, 0] = center_rank
    limit = m - qs                                       # member iff rank <= limit
    outside = ranks[:, :, None] > limit[None, None, :]   # (k, steps, L)
    any_out = outside.any(axis=1)
    first = np.where(any_out, outside.argmax(axis=1), steps)
    lo = np.where(first > 0, ts[np.clip(first - 1, 0, steps - 1)], 0.0)
    hi = np.where(first < steps, ts[np.clip(first, 0, steps - 1)], r_max)
    active = any_out & (first > 0)
    for _ in range(max_bisect):
        live = active & (hi - lo > tol * r_max)
        if not live.any():
            break
        j, l = np.nonzero(live)
        mid = 0.5 * (lo[j, l] + hi[j, l])
        r = region_ranks(region, center[None, :] + mid[:, None] * dirs[j])
        inside = r <= limit[l]
        lo[j[inside], l[inside]] = mid[inside]
        hi[j[~inside], l[~inside]] = mid[~inside]
    radii = np.where(first == 0, 0.0, np.where(any_out, lo, r_max))
    return RayScan(qs, m, radii, any_out, center_rank, float(r_max))


def ray_scan(problem, center, direction, config: Optional[RegionConfig] = None,
             r_max: float = 1.0, steps: int = 32, **kwargs) -> RayScan:
    d = np.asarray(direction, dtype=float)
    norm = np.linalg.norm(d)
    if norm == 0:
        raise ConfigError("direction must be non-zero")
    return ray_scan_many(problem, center, (d / norm)[None, :], config, r_max, steps, **kwargs)


def membership_along_rays(region: ConfidenceRegion, center, directions, ts) -> np.ndarray:
    """Rank indices at ``center + t d`` for every direction and grid value, ``(k, len(ts))``."""
    center = np.asarray(center, dtype=float)
    dirs = np.atleast_2d(np.asarray(directions, dtype=float))
    ts = np.asarray(ts, dtype=float)
    pts = center[None, None, :] + ts[None, :, None] * dirs[:, None, :]
    return region_ranks(region, pts.reshape(-1, center.size)).reshape(dirs.shape[0], ts.size)


def is_prefix(mask) -> np.ndarray:
    """Row-wise: True where the boolean row looks like ``1..1 0..0``."""
    mask = np.atleast_2d(np.asarray(mask, dtype=bool))
    return ~np.any(~mask[:, :-1] & mask[:, 1:], axis=1)


# --- samplers --------------------------------------------------------------------------

def random_directions(gen: np.random.Generator, k: int, dim: int) -> np.ndarray:
    d = gen.standard_normal((k, dim))
    return d / np.linalg.norm(d, axis=1, keepdims=True)


@dataclass(frozen=True, eq=False)
class BoxSampler:
    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lo = np.asarray(self.lower, dtype=float)
        hi = np.asarray(self.upper, dtype=float)
        if lo.shape != hi.shape or not np.all(np.isfinite(lo)) or not np.all(np.isfinite(hi)):
            raise ConfigError("box bounds must be finite and of equal shape")
        if np.any(hi < lo):
            raise ConfigError("box upper bounds must be >= lower bounds")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @property
    def dim(self) -> int:
        return self.lower.size

    def draw(self, gen: np.random.Generator, n: int) -> np.ndarray:
        return self.lower + (self.upper - self.lower) * gen.random((n, self.dim))


@dataclass(frozen=True, eq=False)
class EllipsoidSampler:
    """Uniform samples in ``scale`` times the ellipsoid."""

    ellipsoid: Ellipsoid
    scale: float = 1.0

    def __post_init__(self):
        if not math.isfinite(self.ellipsoid.radius) or self.scale <= 0:
            raise ConfigError("ellipsoid sampler needs a finite radius and positive scale")

    @property
    def dim(self) -> int:
        return self.ellipsoid.center.size

    def draw(self, gen: np.random.Generator, n: int) -> np.ndarray:
        e = self.ellipsoid
        w, v = np.linalg.eigh(e.shape)
        root_inv = (v / np.sqrt(w)) @ v.T
        u = random_directions(gen, n, self.dim) * gen.random((n, 1)) ** (1.0 / self.dim)
        return e.center + self.scale * math.sqrt(e.radius) * u @ root_inv.T


@dataclass(frozen=True, eq=False)
class RaySampler:
    """Points ``center + t W u``: ``u`` uniform on the unit sphere of ``W``'s
    column space, ``t`` uniform on ``[0, r_max]``. ``W`` whitens the
    coefficient space (``(Phi^T Phi)^{-1/2}`` for quadratic problems)."""

    center: np.ndarray
    whitening: np.ndarray
    r_max: float

    def __post_init__(self):
        c = np.asarray(self.center, dtype=float)
        w = np.asarray(self.whitening, dtype=float)
        if w.ndim != 2 or w.shape[0] != c.size:
            raise ConfigError("whitening must have one row per coefficient")
        if not (math.isfinite(self.r_max) and self.r_max >= 0):
            raise ConfigError("r_max must be finite and non-negative")
        object.__setattr__(self, "center", c)
        object.__setattr__(self, "whitening", w)

    @property
    def dim(self) -> int:
        return self.center.size

    def directions(self, gen: np.random.Generator, n: int) -> np.ndarray:
        return random_directions(gen, n, self.whitening.shape[1]) @ self.whitening.T

    def draw(self, gen: np.random.Generator, n: int) -> np.ndarray:
        t = self.r_max * gen.random((n, 1))
        return self.center + t * self.directions(gen, n)


Sampler = Union[BoxSampler, EllipsoidSampler, RaySampler]


@dataclass(eq=False)
class RegionSamples:
    """Sampled coefficient vectors and their integer ranks (normalized rank ``k / m``)."""

    alphas: np.ndarray
    rank_index: np.ndarray
    m: int

    def __len__(self) -> int:
        return self.rank_index.size

    @property
    def ranks(self) -> list:
        return [Fraction(int(k), self.m) for k in self.rank_index]

    def members(self, p) -> np.ndarray:
        return self.rank_index <= _max_index(p, self.m)

    def extend(self, other: "RegionSamples") -> "RegionSamples":
        if other.m != self.m:
            raise ConfigError("cannot merge samples with different m")
        return RegionSamples(np.vstack([self.alphas, other.alphas]),
                             np.concatenate([self.rank_index, other.rank_index]), self.m)


def _max_index(p, m: int) -> int:
    """Largest rank index ``k`` with ``k / m <= p``."""
    p = Fraction(p).limit_denominator(10 * m) if not isinstance(p, Fraction) else p
    return int(math.floor(p * m + Fraction(1, 10**9)))


def mc_region(problem, sampler: Sampler, n_samples: int, config: Optional[RegionConfig] = None,
              seed: int = 0) -> RegionSamples:
    region = _as_region(problem, config)
    if sampler.dim != region.problem.dim:
        raise ConfigError(f"sampler dimension {sampler.dim} != problem dimension {region.problem.dim}")
    gen = seeding.rng(seed, "mc")
    alphas = sampler.draw(gen, int(n_samples))
    return RegionSamples(alphas, region_ranks(region, alphas), region.m)


def rays_to_samples(region: ConfidenceRegion, center, scan: RayScan, directions,
                    points_per_ray: int = 10) -> RegionSamples:
    """Member candidates along scanned rays, with ranks re-evaluated.

    Per ray: the center, the bisected boundary point of every scanned level
    and ``points_per_ray`` evenly spaced points up to the outermost boundary.
    """
    center = np.asarray(center, dtype=float)
    dirs = np.atleast_2d(np.asarray(directions, dtype=float))
    reach = scan.radii.max(axis=1)
    fr = np.linspace(0.0, 1.0, points_per_ray + 1)[1:]
    ts = np.concatenate([scan.radii, reach[:, None] * fr[None, :]], axis=1)
    pts = center[None, None, :] + ts[:, :, None] * dirs[:, None, :]
    pts = np.vstack([center[None, :], pts.reshape(-1, center.size)])
    return RegionSamples(pts, region_ranks(region, pts), region.m)


# --- bands ---------------------------------------------------------------------------

@dataclass
class Band:
    grid: np.ndarray
    levels: list
    lower: np.ndarray
    upper: np.ndarray
    counts: list
    notes: list = field(default_factory=list)

    def width(self) -> np.ndarray:
        return self.upper - self.lower

    def mean_width(self) -> np.ndarray:
        return self.width().mean(axis=1)

    def level_index(self, p) -> int:
        p = Fraction(p).limit_denominator(10**6)
        for i, lv in enumerate(self.levels):
            if Fraction(lv).limit_denominator(10**6) == p:
                return i
        raise KeyError(p)


def model_band(samples: RegionSamples, kernel: KernelSpec, train_inputs, grid,
               levels: Sequence) -> Band:
    """Pointwise min/max of member models for every level ``p`` (rank <= p)."""
    if len(levels) == 0:
        raise ConfigError("at least one level is required")
    grid = as_points(grid)
    values = evaluate_model(kernel, train_inputs, samples.alphas, grid) if len(samples) else \
        np.empty((0, grid.shape[0]))
    kept, lower, upper, counts, notes = [], [], [], [], []
    for p in levels:
        p = Fraction(p).limit_denominator(10 * samples.m) if not isinstance(p, Fraction) else p
        if not 0 < p < 1:
            raise ConfigError(f"level {p} is not in (0, 1)")
        if (p * samples.m).denominator != 1:
            raise ConfigError(f"level {p} is not admissible for m={samples.m}")
        mask = samples.members(p)
        if not mask.any():
            notes.append(f"level {float(p):g}: no sampled members, omitted")
            continue
        kept.append(p)
        lower.append(values[mask].min(axis=0))
        upper.append(values[mask].max(axis=0))
        counts.append(int(mask.sum()))
    g = grid.shape[0]
    return Band(grid, kept, np.array(lower).reshape(-1, g), np.array(upper).reshape(-1, g),
                counts, notes)


def whitening_matrix(matrix, rel_tol: float = 1e-10) -> np.ndarray:
    """``V_r diag(w_r^{-1/2})`` over eigenvalues above ``rel_tol * max``: maps the
    unit sphere onto the ellipsoid ``a^T M a = 1`` restricted to the numerically
    non-singular subspace."""
    w, v = np.linalg.eigh((np.asarray(matrix, dtype=float) + np.asarray(matrix, dtype=float).T) / 2)
    keep = w > rel_tol * w[-1]
    return v[:, keep] / np.sqrt(w[keep])


# --- default ray exploration -------------------------------------------------------------

@dataclass(eq=False)
class Companion:
    """A KRR problem on the same data used to shape and size ray exploration.

    ``canonical`` lives in reduced coordinates ``a = basis @ b`` spanning the
    eigenvectors of ``K`` whose curvature ``w^2 / n + lam w`` is numerically
    non-zero; for a well-conditioned Gram the basis is a rotation of the full
    space.
    """

    canonical: CanonicalLS
    basis: np.ndarray

    @property
    def whitening(self) -> np.ndarray:
        return self.basis @ self.canonical.inv_sqrt_hessian


def companion_krr(gram, y, lam: float = 0.1, rel_tol: float = DEFAULT_REL_TOL) -> Companion:
    k = gram.entries if hasattr(gram, "entries") else np.asarray(gram, dtype=float)
    n = k.shape[0]
    w, v = np.linalg.eigh((k + k.T) / 2)
    w = np.clip(w, 0.0, None)
    curv = w * w / n + lam * w                  # Phi^T Phi eigenvalues in this basis
    keep = curv > 10 * rel_tol * curv.max()
    basis = v[:, keep]
    root = (v * np.sqrt(w)) @ v.T
    phi = np.vstack([k @ basis / math.sqrt(n), math.sqrt(lam) * root @ basis])
    z = np.concatenate([np.asarray(y, dtype=float) / math.sqrt(n), np.zeros(n)])
    return Companion(CanonicalLS(phi, z, n, n, rel_tol), basis)


@dataclass(eq=False)
class RayExploration:
    samples: RegionSamples
    scan: RayScan
    directions: np.ndarray
    center: np.ndarray
    r_max: float

    @property
    def truncated_fraction(self) -> float:
        """Share of (ray, level) pairs still inside at ``r_max``."""
        return float(1.0 - self.scan.bracketed.mean())


def explore_rays(region: ConfidenceRegion, center, companion: Companion, qs: Sequence[int],
                 n_rays: int = 200, scale: float = 1.0, points_per_ray: int = 10,
                 steps: int = 32, seed: int = 0) -> RayExploration:
    """Scan ``n_rays`` rays from ``center`` in the companion's whitened coordinates.

    ``r_max`` is ``scale`` times the largest exact boundary distance of the
    companion region (same ``m``, seed and smallest ``q``) over the drawn
    directions. Regions that are unbounded along a ray are truncated there;
    ``truncated_fraction`` reports how often that happened.
    """
    if n_rays < 1 or scale <= 0:
        raise ConfigError("need n_rays >= 1 and scale > 0")
    qs = sorted(set(int(q) for q in qs))
    w = companion.whitening
    gen = seeding.rng(seed, "mc")
    unit = random_directions(gen, n_rays, w.shape[1])
    dirs = unit @ w.T
    cfg = region.config
    c = companion.canonical
    pset = draw_perturbations(sps_group(c), cfg.m, c.n_rows, cfg.seed)
    # exact boundaries in whitened units: rays are b_hat + t P u
    reach = float(sps_ray_boundary(c, pset, unit @ c.inv_sqrt_hessian.T, qs[0]).max())
    r_max = scale * reach * (1 + 1e-9)
    scan = ray_scan_many(region, center, dirs, r_max=r_max, steps=steps, qs=qs)
    samples = rays_to_samples(region, center, scan, dirs, points_per_ray)
    return RayExploration(samples, scan, dirs, np.asarray(center, dtype=float), r_max)


def levels_to_qs(levels: Sequence, m: int) -> list[int]:
    out = []
    for p in levels:
        p = Fraction(p).limit_denominator(10 * m) if not isinstance(p, Fraction) else p
        q = (1 - p) * m
        if q.denominator != 1 or not 0 < q < m:
            raise ConfigError(f"level {p} is not admissible for m={m}")
        out.append(int(q))
    return out
