"""Compact transformation groups acting on residual vectors.

Transforms are stored compactly (a sign vector or an index array), never as
dense matrices. Permutation action uses the gather convention: output
coordinate ``i`` takes input coordinate ``perm[i]``, i.e.
``apply(t, v) == v[perm]``.

A ``block`` group applies its inner group to the leading coordinates and
leaves the trailing ``fixed_tail`` coordinates untouched. Canonical
least-squares forms use it so that the auxiliary (noise-free) rows of the
residual are never perturbed.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import Optional

import numpy as np

from . import seeding
from .errors import ConfigError, DataError

SIGN_CHANGE = "sign_change"
PERMUTATION = "permutation"
BLOCK = "block"


@dataclass(frozen=True)
class TransformGroup:
    kind: str
    inner: Optional["TransformGroup"] = None
    fixed_tail: int = 0

    def __post_init__(self):
        if self.kind not in (SIGN_CHANGE, PERMUTATION, BLOCK):
            raise ConfigError(f"unknown group kind {self.kind!r}")
        if self.kind == BLOCK:
            if self.inner is None or self.inner.kind == BLOCK:
                raise ConfigError("a block group needs a sign_change or permutation inner group")
            if self.fixed_tail < 0:
                raise ConfigError("fixed_tail must be non-negative")
        elif self.inner is not None or self.fixed_tail:
            raise ConfigError(f"{self.kind} group takes no inner group or tail")

    @classmethod
    def sign_change(cls) -> "TransformGroup":
        return cls(SIGN_CHANGE)

    @classmethod
    def permutation(cls) -> "TransformGroup":
        return cls(PERMUTATION)

    @classmethod
    def block(cls, inner: "TransformGroup", fixed_tail: int) -> "TransformGroup":
        return cls(BLOCK, inner, int(fixed_tail))

    @classmethod
    def parse(cls, text: str) -> "TransformGroup":
        key = text.strip().lower().replace("-", "_")
        if key in ("sign", "signs", SIGN_CHANGE):
            return cls.sign_change()
        if key in ("perm", PERMUTATION):
            return cls.permutation()
        raise ConfigError(f"unknown group {text!r}; expected 'sign' or 'perm'")

    @property
    def base_kind(self) -> str:
        return self.inner.kind if self.kind == BLOCK else self.kind

    def head_dim(self, n: int) -> int:
        """Number of perturbed coordinates for a residual of length ``n``."""
        head = n - self.fixed_tail if self.kind == BLOCK else n
        if head < 1:
            raise ConfigError(f"residual length {n} leaves no perturbable coordinates")
        return head


@dataclass(frozen=True, eq=False)
class Transform:
    """One group element. ``data`` is a +-1 vector (sign change) or an index
    array (permutation) over the ``head`` coordinates; ``fixed_tail`` trailing
    coordinates are left alone."""

    kind: str
    data: np.ndarray
    fixed_tail: int = 0

    @property
    def dim(self) -> int:
        return self.data.shape[0] + self.fixed_tail

    @classmethod
    def identity(cls, kind: str, head: int, fixed_tail: int = 0) -> "Transform":
        if kind == SIGN_CHANGE:
            data = np.ones(head)
        else:
            data = np.arange(head)
        return cls(kind, data, fixed_tail)

    @classmethod
    def signs(cls, signs, fixed_tail: int = 0) -> "Transform":
        s = np.asarray(signs, dtype=float)
        if not np.all(np.abs(s) == 1.0):
            raise ConfigError("sign vector entries must be +1 or -1")
        return cls(SIGN_CHANGE, s, fixed_tail)

    @classmethod
    def perm(cls, perm, fixed_tail: int = 0) -> "Transform":
        p = np.asarray(perm, dtype=np.intp)
        if not np.array_equal(np.sort(p), np.arange(p.shape[0])):
            raise ConfigError("not a permutation of 0..n-1")
        return cls(PERMUTATION, p, fixed_tail)

    def compose(self, other: "Transform") -> "Transform":
        """``self o other``: apply ``other`` first, then ``self``."""
        if self.kind != other.kind or self.dim != other.dim or self.fixed_tail != other.fixed_tail:
            raise ConfigError("can only compose transforms from the same group")
        if self.kind == SIGN_CHANGE:
            return Transform(SIGN_CHANGE, self.data * other.data, self.fixed_tail)
        return Transform(PERMUTATION, other.data[self.data], self.fixed_tail)


def apply(t: Transform, v) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    if v.shape[-1] != t.dim:
        raise DataError(f"transform acts on length {t.dim}, got vector of length {v.shape[-1]}")
    head = t.data.shape[0]
    out = v.copy()
    if t.kind == SIGN_CHANGE:
        out[..., :head] = v[..., :head] * t.data
    else:
        out[..., :head] = v[..., :head][..., t.data]
    return out


@dataclass(frozen=True, eq=False)
class PerturbationSet:
    """``m`` group elements (row 0 is the identity) plus the tie-breaking order.

    ``elements`` stacks the compact transforms: an ``(m, head)`` array of
    signs or of permutation indices. ``tie_order[i]`` is the tie-break priority
    of ``Z_i``: on an exact tie, the entry with the smaller priority ranks lower.
    """

    group: TransformGroup
    m: int
    dim: int
    seed: int
    elements: np.ndarray
    tie_order: np.ndarray

    @property
    def fixed_tail(self) -> int:
        return self.group.fixed_tail if self.group.kind == BLOCK else 0

    @property
    def head(self) -> int:
        return self.dim - self.fixed_tail

    @property
    def kind(self) -> str:
        return self.group.base_kind

    @property
    def transforms(self) -> list[Transform]:
        return [Transform(self.kind, row, self.fixed_tail) for row in self.elements]

    def __getitem__(self, i: int) -> Transform:
        return Transform(self.kind, self.elements[i], self.fixed_tail)

    def __len__(self) -> int:
        return self.m

    def apply_all(self, v) -> np.ndarray:
        """Stack of ``apply(t_i, v)`` for every element, shape ``(m, dim)``."""
        v = np.asarray(v, dtype=float)
        if v.shape != (self.dim,):
            raise DataError(f"expected a vector of length {self.dim}, got shape {v.shape}")
        out = np.broadcast_to(v, (self.m, self.dim)).copy()
        h = self.head
        if self.kind == SIGN_CHANGE:
            out[:, :h] = self.elements * v[:h]
        else:
            out[:, :h] = v[:h][self.elements]
        return out


def draw_perturbations(group: TransformGroup, m: int, n: int, seed: int) -> PerturbationSet:
    """Draw ``m - 1`` i.i.d. uniform group elements and a tie-breaking order.

    ``n`` is the full residual length (including any fixed tail). The result
    depends only on ``(group, m, n, seed)`` and is cached on that key.
    """
    if m < 2:
        raise ConfigError("m must be at least 2")
    if n < 1:
        raise ConfigError("n must be at least 1")
    seeding.check_seed(seed)
    return _draw_cached(group, int(m), int(n), int(seed))


@lru_cache(maxsize=256)
def _draw_cached(group: TransformGroup, m: int, n: int, seed: int) -> PerturbationSet:
    head = group.head_dim(n)
    gen = seeding.rng(seed, "perturbation", "transforms")
    if group.base_kind == SIGN_CHANGE:
        elements = np.ones((m, head))
        elements[1:] = 2.0 * gen.integers(0, 2, size=(m - 1, head)) - 1.0
    else:
        elements = np.tile(np.arange(head, dtype=np.intp), (m, 1))
        elements[1:] = gen.permuted(elements[1:], axis=1)
    tie_order = seeding.rng(seed, "perturbation", "tie_order").permutation(m)
    elements.setflags(write=False)
    tie_order.setflags(write=False)
    return PerturbationSet(group, m, n, seed, elements, tie_order)
