"""Kernel functions, Gram matrices and symmetric eigen-based matrix roots.

All kernels are evaluated through one vectorized routine,
:func:`kernel_matrix`, so a Gram entry is bit-for-bit the value returned by
:func:`eval_kernel` for the same pair of points.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .errors import ConfigError, DataError, NumericalError

DEFAULT_REL_TOL = 1e-10

# parameter names per family, in positional order
_FAMILIES = {
    "gaussian": ("sigma",),
    "laplacian": ("sigma",),
    "polynomial": ("c", "p"),
    "sigmoidal": ("a", "b"),
    "truncated_parabolic": ("c",),
    "rectangular": ("c",),
}


@dataclass(frozen=True)
class KernelSpec:
    """A kernel family together with its hyper-parameters.

    Use the named constructors (``KernelSpec.gaussian(0.5)`` ...) or
    :meth:`parse` for the ``family:key=value`` text form used by the CLI.

    Only ``gaussian``, ``laplacian`` and ``polynomial`` are positive
    semi-definite for every input set. ``truncated_parabolic`` and
    ``rectangular`` are not (their Fourier transforms change sign), so their
    Gram matrices are accepted only when they pass the numerical strict-PD
    check on the actual inputs. ``sigmoidal`` additionally needs an explicit
    override before a region is built from it.
    """

    family: str
    params: tuple = field(default=())

    def __post_init__(self):
        if self.family not in _FAMILIES:
            raise ConfigError(f"unknown kernel family {self.family!r}")
        names = _FAMILIES[self.family]
        if len(self.params) != len(names):
            raise ConfigError(f"{self.family} kernel takes parameters {names}")
        values = tuple(float(v) for v in self.params)
        if not all(math.isfinite(v) for v in values):
            raise ConfigError(f"non-finite kernel parameter in {values}")
        fam = self.family
        if fam in ("gaussian", "laplacian") and not values[0] > 0:
            raise ConfigError("sigma must be positive")
        if fam == "polynomial":
            c, p = values
            if c < 0:
                raise ConfigError("polynomial offset c must be non-negative")
            if p < 1 or p != int(p):
                raise ConfigError("polynomial degree p must be a positive integer")
            values = (c, int(p))
        if fam == "sigmoidal" and (values[0] < 0 or values[1] < 0):
            raise ConfigError("sigmoidal parameters a, b must be non-negative")
        if fam in ("truncated_parabolic", "rectangular") and not values[0] > 0:
            raise ConfigError("c must be positive")
        object.__setattr__(self, "params", values)

    @classmethod
    def gaussian(cls, sigma: float) -> "KernelSpec":
        return cls("gaussian", (sigma,))

    @classmethod
    def laplacian(cls, sigma: float) -> "KernelSpec":
        return cls("laplacian", (sigma,))

    @classmethod
    def polynomial(cls, c: float, p: int) -> "KernelSpec":
        return cls("polynomial", (c, p))

    @classmethod
    def linear(cls) -> "KernelSpec":
        return cls("polynomial", (0.0, 1))

    @classmethod
    def sigmoidal(cls, a: float, b: float) -> "KernelSpec":
        return cls("sigmoidal", (a, b))

    @classmethod
    def truncated_parabolic(cls, c: float) -> "KernelSpec":
        return cls("truncated_parabolic", (c,))

    @classmethod
    def rectangular(cls, c: float) -> "KernelSpec":
        return cls("rectangular", (c,))

    @classmethod
    def parse(cls, text: str) -> "KernelSpec":
        """Parse ``"gaussian:sigma=0.5"``, ``"polynomial:c=1,p=2"`` and the like."""
        family, _, rest = text.strip().partition(":")
        family = family.strip().lower().replace("-", "_")
        if family == "linear":
            return cls.linear()
        if family not in _FAMILIES:
            raise ConfigError(f"unknown kernel family {family!r}")
        kv = {}
        for item in filter(None, (s.strip() for s in rest.split(","))):
            key, sep, value = item.partition("=")
            if not sep:
                raise ConfigError(f"expected key=value in kernel spec, got {item!r}")
            try:
                kv[key.strip()] = float(value)
            except ValueError:
                raise ConfigError(f"non-numeric kernel parameter {item!r}") from None
        names = _FAMILIES[family]
        if set(kv) != set(names):
            raise ConfigError(f"{family} kernel requires parameters {names}, got {sorted(kv)}")
        return cls(family, tuple(kv[k] for k in names))

    def describe(self) -> str:
        names = _FAMILIES[self.family]
        body = ",".join(f"{k}={v!r}" for k, v in zip(names, self.params))
        return f"{self.family}:{body}"

    @property
    def psd_family(self) -> bool:
        """False for families that are not positive semi-definite in general."""
        return self.family in ("gaussian", "laplacian", "polynomial")

    @property
    def needs_override(self) -> bool:
        return self.family == "sigmoidal"

    def __call__(self, z, s) -> float:
        return eval_kernel(self, z, s)


def as_points(inputs) -> np.ndarray:
    """Coerce a list of points (scalars or vectors) to an ``(n, d)`` float array."""
    x = np.asarray(inputs, dtype=float)
    if x.ndim == 0:
        x = x.reshape(1, 1)
    elif x.ndim == 1:
        x = x.reshape(-1, 1)
    elif x.ndim != 2:
        raise DataError(f"points must be scalars or vectors, got array of shape {x.shape}")
    return x


def kernel_matrix(spec: KernelSpec, a, b) -> np.ndarray:
    """Cross-kernel matrix ``[k(a_i, b_j)]`` for point sets ``a`` and ``b``."""
    a = as_points(a)
    b = as_points(b)
    if a.shape[1] != b.shape[1]:
        raise DataError(f"dimension mismatch: {a.shape[1]} vs {b.shape[1]}")
    fam = spec.family
    if fam in ("polynomial", "sigmoidal"):
        inner = (a[:, None, :] * b[None, :, :]).sum(axis=-1)
        if fam == "polynomial":
            c, p = spec.params
            return (inner + c) ** p
        a_, b_ = spec.params
        return np.tanh(a_ * inner + b_)
    sq = ((a[:, None, :] - b[None, :, :]) ** 2).sum(axis=-1)
    if fam == "gaussian":
        (sigma,) = spec.params
        return np.exp(-sq / (2.0 * sigma * sigma))
    if fam == "laplacian":
        (sigma,) = spec.params
        return np.exp(-np.sqrt(sq) / sigma)
    if fam == "truncated_parabolic":
        (c,) = spec.params
        return np.maximum(1.0 - c * sq, 0.0)
    (c,) = spec.params
    # non-strict inequality, matching the indicator 1(|x - y| <= c)
    return (np.sqrt(sq) <= c).astype(float)


def eval_kernel(spec: KernelSpec, z, s) -> float:
    z = np.atleast_1d(np.asarray(z, dtype=float))
    s = np.atleast_1d(np.asarray(s, dtype=float))
    if z.ndim != 1 or s.ndim != 1:
        raise DataError("eval_kernel expects two points")
    if z.shape != s.shape:
        raise DataError(f"dimension mismatch: {z.shape[0]} vs {s.shape[0]}")
    return float(kernel_matrix(spec, z[None, :], s[None, :])[0, 0])


class PDDiagnostics(NamedTuple):
    strictly_pd: bool
    min_eigenvalue: float
    condition_estimate: float


@dataclass(frozen=True, eq=False)
class GramMatrix:
    entries: np.ndarray
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    psd_family: bool = True
    needs_override: bool = False

    @property
    def n(self) -> int:
        return self.entries.shape[0]

    @property
    def min_eigenvalue(self) -> float:
        return float(self.eigenvalues[0])

    @property
    def max_eigenvalue(self) -> float:
        return float(self.eigenvalues[-1])

    @property
    def condition_estimate(self) -> float:
        lo = self.min_eigenvalue
        return math.inf if lo <= 0 else self.max_eigenvalue / lo

    def sqrt(self, rel_tol: float = DEFAULT_REL_TOL) -> np.ndarray:
        return _sqrt_from_eig(self.eigenvalues, self.eigenvectors, rel_tol)

    @classmethod
    def from_matrix(cls, matrix, psd_family: bool = True,
                    needs_override: bool = False) -> "GramMatrix":
        k = np.array(matrix, dtype=float)
        if k.ndim != 2 or k.shape[0] != k.shape[1]:
            raise DataError(f"Gram matrix must be square, got shape {k.shape}")
        if not np.array_equal(k, k.T):
            raise DataError("Gram matrix must be symmetric")
        w, v = np.linalg.eigh(k)
        k.setflags(write=False)
        return cls(k, w, v, psd_family, needs_override)


def gram_matrix(spec: KernelSpec, inputs) -> GramMatrix:
    x = as_points(inputs)
    if x.shape[0] == 0:
        raise DataError("gram_matrix needs at least one input")
    k = kernel_matrix(spec, x, x)
    # mirror the upper triangle so the matrix is symmetric by construction
    k = np.triu(k) + np.triu(k, 1).T
    return GramMatrix.from_matrix(k, spec.psd_family, spec.needs_override)


def check_strict_pd(g: GramMatrix, rel_tol: float = DEFAULT_REL_TOL) -> PDDiagnostics:
    lo, hi = g.min_eigenvalue, g.max_eigenvalue
    return PDDiagnostics(bool(lo > rel_tol * hi), lo, g.condition_estimate)


def require_strict_pd(g: GramMatrix, rel_tol: float = DEFAULT_REL_TOL,
                      allow_non_psd_family: bool = False) -> None:
    """Raise :class:`NumericalError` unless ``g`` is numerically strictly PD."""
    if g.needs_override and not allow_non_psd_family:
        raise NumericalError(
            "sigmoidal kernels are not positive definite in general; "
            "pass allow_non_psd_family=True to override"
        )
    diag = check_strict_pd(g, rel_tol)
    if not diag.strictly_pd:
        raise NumericalError(
            f"Gram matrix is not strictly positive definite: min eigenvalue "
            f"{diag.min_eigenvalue:.3e}, max {g.max_eigenvalue:.3e}, "
            f"condition {diag.condition_estimate:.3e}"
        )


def _clamp(w: np.ndarray, rel_tol: float) -> np.ndarray:
    top = max(float(np.max(np.abs(w))), 0.0) if w.size else 0.0
    floor = -rel_tol * top
    if w.size and w[0] < floor:
        raise NumericalError(
            f"matrix is not positive semi-definite: eigenvalue {w[0]:.3e} "
            f"below clamp threshold {floor:.3e}"
        )
    return np.maximum(w, 0.0)


def _sqrt_from_eig(w, v, rel_tol):
    w = _clamp(w, rel_tol)
    s = (v * np.sqrt(w)) @ v.T
    return (s + s.T) / 2.0


def _check_symmetric(matrix) -> np.ndarray:
    m = np.asarray(matrix, dtype=float)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise DataError(f"expected a square matrix, got shape {m.shape}")
    scale = max(1.0, float(np.max(np.abs(m)))) if m.size else 1.0
    if not np.allclose(m, m.T, rtol=0.0, atol=1e-12 * scale):
        raise DataError("matrix is not symmetric")
    return (m + m.T) / 2.0


def psd_sqrt(matrix, rel_tol: float = DEFAULT_REL_TOL) -> np.ndarray:
    """Symmetric square root of a symmetric PSD matrix.

    Eigenvalues in ``[-rel_tol * max|eig|, 0)`` are clamped to zero; anything
    more negative raises :class:`NumericalError`.
    """
    m = _check_symmetric(matrix)
    w, v = np.linalg.eigh(m)
    return _sqrt_from_eig(w, v, rel_tol)


def psd_inv_sqrt(matrix, rel_tol: float = DEFAULT_REL_TOL) -> np.ndarray:
    """Symmetric inverse square root of a strictly PD matrix."""
    m = _check_symmetric(matrix)
    w, v = np.linalg.eigh(m)
    if w.size and not w[0] > rel_tol * w[-1]:
        raise NumericalError(
            f"matrix is singular to working precision (eigenvalues {w[0]:.3e} .. {w[-1]:.3e})"
        )
    s = (v / np.sqrt(w)) @ v.T
    return (s + s.T) / 2.0
