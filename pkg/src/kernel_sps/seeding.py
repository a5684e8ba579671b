"""Seed expansion.

Every random quantity in the package is drawn from a named substream of one
user-supplied non-negative integer seed. A substream is addressed by a tuple
of keys (strings or non-negative ints); string keys are mapped to integers
with CRC-32 so the mapping is stable across processes and platforms. The key
tuple becomes the ``spawn_key`` of a :class:`numpy.random.SeedSequence`, and
draws come from the counter-based Philox generator. Two substreams with
different key tuples are statistically independent.

Stream names used by the package:

``("noise",)``                     noise draws in :func:`sample_noise`
``("perturbation", "transforms")`` group elements G_1..G_{m-1}
``("perturbation", "tie_order")``  the tie-breaking permutation
``("trial", i, "data")``           per-trial noise seed in coverage runs
``("trial", i, "perturbation")``   per-trial region seed in coverage runs
``("mc",)``                        coefficient samplers in the explorer
"""

from __future__ import annotations

import zlib

import numpy as np

from .errors import ConfigError


def _key_to_int(key) -> int:
    if isinstance(key, (bool, np.bool_)):
        raise ConfigError(f"invalid stream key {key!r}")
    if isinstance(key, (int, np.integer)):
        if key < 0:
            raise ConfigError(f"stream keys must be non-negative, got {key}")
        return int(key)
    if isinstance(key, str):
        return zlib.crc32(key.encode("utf-8"))
    raise ConfigError(f"invalid stream key {key!r}")


def check_seed(seed) -> int:
    if isinstance(seed, (bool, np.bool_)) or not isinstance(seed, (int, np.integer)):
        raise ConfigError(f"seed must be an integer, got {seed!r}")
    if seed < 0 or seed >= 2**64:
        raise ConfigError(f"seed must be in [0, 2**64), got {seed}")
    return int(seed)


def seed_sequence(seed: int, *keys) -> np.random.SeedSequence:
    return np.random.SeedSequence(
        check_seed(seed), spawn_key=tuple(_key_to_int(k) for k in keys)
    )


def rng(seed: int, *keys) -> np.random.Generator:
    """Return a Philox generator for the substream ``keys`` of ``seed``."""
    return np.random.Generator(np.random.Philox(seed_sequence(seed, *keys)))


def derive_seed(seed: int, *keys) -> int:
    """Derive a 64-bit child seed, e.g. one per coverage trial."""
    return int(seed_sequence(seed, *keys).generate_state(1, np.uint64)[0])
