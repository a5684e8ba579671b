"""Data samples, synthetic data generation and CSV persistence."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Union

import numpy as np

from . import seeding
from .errors import ConfigError, DataError
from .kernels import as_points


@dataclass(frozen=True, eq=False)
class DataSample:
    """Inputs ``x`` (shape ``(n, d)``), outputs ``y`` and, for synthetic data,
    the noise-free outputs ``y_true``."""

    inputs: np.ndarray
    outputs: np.ndarray
    true_outputs: Optional[np.ndarray] = None

    def __post_init__(self):
        x = as_points(self.inputs).copy()
        y = np.array(self.outputs, dtype=float).reshape(-1)
        if x.shape[0] < 1:
            raise DataError("a sample needs at least one point")
        if y.shape[0] != x.shape[0]:
            raise DataError(f"{x.shape[0]} inputs but {y.shape[0]} outputs")
        x.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, "inputs", x)
        object.__setattr__(self, "outputs", y)
        if self.true_outputs is not None:
            t = np.array(self.true_outputs, dtype=float).reshape(-1)
            if t.shape != y.shape:
                raise DataError("true_outputs must have the same length as outputs")
            t.setflags(write=False)
            object.__setattr__(self, "true_outputs", t)

    @property
    def n(self) -> int:
        return self.inputs.shape[0]

    @property
    def dim(self) -> int:
        return self.inputs.shape[1]

    def inputs_distinct(self) -> bool:
        return np.unique(self.inputs, axis=0).shape[0] == self.n


@dataclass(frozen=True)
class NoiseSpec:
    """Noise family. Parameters by family:

    gaussian (std), laplace (location, scale), uniform (half_width),
    binomial_centered (trials, success_prob), zero ().

    ``binomial_centered`` draws ``Binomial(trials, p) - trials * p``: mean zero
    but not symmetric. ``zero`` is the degenerate noiseless family.
    """

    family: str
    params: tuple = field(default=())

    _ARITY = {"gaussian": 1, "laplace": 2, "uniform": 1, "binomial_centered": 2, "zero": 0}

    def __post_init__(self):
        if self.family not in self._ARITY:
            raise ConfigError(f"unknown noise family {self.family!r}")
        if len(self.params) != self._ARITY[self.family]:
            raise ConfigError(f"{self.family} noise takes {self._ARITY[self.family]} parameters")
        values = tuple(float(v) for v in self.params)
        if not all(math.isfinite(v) for v in values):
            raise ConfigError("noise parameters must be finite")
        fam = self.family
        if fam in ("gaussian", "uniform") and not values[0] > 0:
            raise ConfigError(f"{fam} noise parameter must be positive")
        if fam == "laplace" and not values[1] > 0:
            raise ConfigError("laplace scale must be positive")
        if fam == "binomial_centered":
            trials, p = values
            if trials < 1 or trials != int(trials):
                raise ConfigError("binomial trials must be a positive integer")
            if not 0 < p < 1:
                raise ConfigError("binomial success probability must be in (0, 1)")
            values = (int(trials), p)
        object.__setattr__(self, "params", values)

    @classmethod
    def gaussian(cls, std: float) -> "NoiseSpec":
        return cls("gaussian", (std,))

    @classmethod
    def laplace(cls, location: float, scale: float) -> "NoiseSpec":
        return cls("laplace", (location, scale))

    @classmethod
    def uniform(cls, half_width: float) -> "NoiseSpec":
        return cls("uniform", (half_width,))

    @classmethod
    def binomial_centered(cls, trials: int, success_prob: Optional[float] = None) -> "NoiseSpec":
        """Centered binomial noise; ``success_prob`` defaults to the smaller
        root of ``trials * p * (1 - p) = 1`` (unit variance)."""
        if success_prob is None:
            if trials < 4:
                raise ConfigError("unit variance needs at least 4 binomial trials")
            success_prob = (1.0 - math.sqrt(1.0 - 4.0 / trials)) / 2.0
        return cls("binomial_centered", (trials, success_prob))

    @classmethod
    def zero(cls) -> "NoiseSpec":
        return cls("zero", ())

    @classmethod
    def unit_variance(cls, family: str) -> "NoiseSpec":
        """The unit-variance member of a family (used by the noise-robustness runs)."""
        if family == "gaussian":
            return cls.gaussian(1.0)
        if family == "laplace":
            return cls.laplace(0.0, 1.0 / math.sqrt(2.0))
        if family == "uniform":
            return cls.uniform(math.sqrt(3.0))
        if family in ("binomial", "binomial_centered"):
            return cls.binomial_centered(20)
        raise ConfigError(f"no unit-variance preset for {family!r}")

    @classmethod
    def parse(cls, text: str) -> "NoiseSpec":
        """Parse ``laplace:0:0.5``, ``gaussian:1``, ``uniform:1.7``,
        ``binomial:20[:p]`` or ``zero``."""
        parts = [p.strip() for p in text.strip().split(":")]
        family = parts[0].lower()
        try:
            args = [float(p) for p in parts[1:]]
        except ValueError:
            raise ConfigError(f"non-numeric noise parameter in {text!r}") from None
        if family in ("binomial", "binomial_centered"):
            if len(args) == 1:
                return cls.binomial_centered(int(args[0]))
            if len(args) == 2:
                return cls.binomial_centered(int(args[0]), args[1])
            raise ConfigError("binomial noise takes trials[:p]")
        if family == "laplace" and len(args) == 1:
            args = [0.0, args[0]]
        return cls(family, tuple(args))

    def describe(self) -> str:
        return ":".join([self.family] + [repr(v) for v in self.params])

    @property
    def variance(self) -> float:
        fam, v = self.family, self.params
        if fam == "gaussian":
            return v[0] ** 2
        if fam == "laplace":
            return 2.0 * v[1] ** 2
        if fam == "uniform":
            return v[0] ** 2 / 3.0
        if fam == "binomial_centered":
            return v[0] * v[1] * (1.0 - v[1])
        return 0.0


def _draw(spec: NoiseSpec, n: int, gen: np.random.Generator) -> np.ndarray:
    fam, v = spec.family, spec.params
    if fam == "gaussian":
        return v[0] * gen.standard_normal(n)
    if fam == "laplace":
        # inverse CDF on u ~ U(-1/2, 1/2)
        u = gen.random(n) - 0.5
        return v[0] - v[1] * np.sign(u) * np.log1p(-2.0 * np.abs(u))
    if fam == "uniform":
        return gen.uniform(-v[0], v[0], n)
    if fam == "binomial_centered":
        trials, p = v
        hits = (gen.random((n, trials)) < p).sum(axis=1)
        return hits - trials * p
    return np.zeros(n)


def sample_noise(spec: NoiseSpec, n: int, seed: int) -> np.ndarray:
    if n < 1:
        raise ConfigError("n must be at least 1")
    return _draw(spec, n, seeding.rng(seed, "noise"))


def x_sin_x(x: np.ndarray) -> np.ndarray:
    x = as_points(x)
    return x[:, 0] * np.sin(x[:, 0])


TRUE_FUNCTIONS: dict[str, Callable] = {"x_sin_x": x_sin_x}

TrueFunction = Union[str, Callable[[np.ndarray], np.ndarray]]


def resolve_true_function(true_fn: TrueFunction) -> Callable[[np.ndarray], np.ndarray]:
    if callable(true_fn):
        return true_fn
    key = str(true_fn).lower().replace("-", "_")
    if key not in TRUE_FUNCTIONS:
        raise ConfigError(f"unknown true function {true_fn!r}")
    return TRUE_FUNCTIONS[key]


def equidistant(n: int, lo: float, hi: float) -> np.ndarray:
    """``n`` points on ``[lo, hi]`` with both endpoints; ``n == 1`` gives ``[lo]``."""
    if n < 1:
        raise ConfigError("n must be at least 1")
    if not lo < hi:
        raise ConfigError(f"empty input range [{lo}, {hi}]")
    if n == 1:
        return np.array([float(lo)])
    return np.linspace(lo, hi, n)


def generate_synthetic(true_fn: TrueFunction, n: int, input_range, noise: NoiseSpec,
                       seed: int) -> DataSample:
    """Equidistant 1-D inputs, ``y_true = f(x)`` and ``y = y_true + noise``.

    ``true_fn`` is ``"x_sin_x"`` or any callable mapping an ``(n, 1)`` input
    array to ``n`` outputs (a lookup table can be wrapped with ``np.interp``).
    """
    lo, hi = (float(v) for v in input_range)
    x = equidistant(n, lo, hi).reshape(-1, 1)
    y_true = np.asarray(resolve_true_function(true_fn)(x), dtype=float).reshape(-1)
    if y_true.shape[0] != n:
        raise DataError("true function returned the wrong number of outputs")
    eps = sample_noise(noise, n, seed)
    return DataSample(x, y_true + eps, y_true)


# --- CSV -----------------------------------------------------------------

TRUE_COLUMN = "y_true"


def save_csv(sample: DataSample, path) -> None:
    """Write ``x1..xd,y[,y_true]`` with ``%.17g`` precision."""
    d = sample.dim
    header = [f"x{j + 1}" for j in range(d)] + ["y"]
    cols = [sample.inputs[:, j] for j in range(d)] + [sample.outputs]
    if sample.true_outputs is not None:
        header.append(TRUE_COLUMN)
        cols.append(sample.true_outputs)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in zip(*cols):
            w.writerow(["%.17g" % v for v in row])


def load_csv(path) -> DataSample:
    path = Path(path)
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise DataError(f"{path}: empty file")
    header = [h.strip() for h in rows[0]]
    has_true = bool(header) and header[-1] == TRUE_COLUMN
    n_cols = len(header)
    d = n_cols - 1 - int(has_true)
    if d < 1 or header[d] != "y" or header[:d] != [f"x{j + 1}" for j in range(d)]:
        raise DataError(f"{path}: header must be x1,...,xd,y[,{TRUE_COLUMN}], got {rows[0]}")
    values = []
    for lineno, row in enumerate(rows[1:], start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != n_cols:
            raise DataError(f"{path}: row {lineno} has {len(row)} columns, expected {n_cols}")
        try:
            values.append([float(c) for c in row])
        except ValueError:
            raise DataError(f"{path}: row {lineno} has a non-numeric field: {row}") from None
        if not all(math.isfinite(v) for v in values[-1]):
            raise DataError(f"{path}: row {lineno} has a non-finite value")
    if not values:
        raise DataError(f"{path}: no data rows")
    a = np.array(values)
    return DataSample(a[:, :d], a[:, d], a[:, d + 1] if has_true else None)
