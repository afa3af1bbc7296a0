"""Seed handling.

Every random draw in the package goes through :func:`stream`, which builds a
``numpy.random.Generator`` on the counter-based Philox bit generator.  A
stream is addressed by a 64-bit master seed plus a tuple of non-negative
integer keys; the keys become the ``spawn_key`` of a ``SeedSequence`` so two
different key paths never share state and the same path always reproduces
the same numbers.

Key conventions used across the package::

    (seed,)                 base stream of an ensemble
    (seed, i)               component ``i`` of a demixing ensemble
    (seed, cell, trial)     harness trial streams
"""

from __future__ import annotations

import numpy as np

SEED_MASK = (1 << 64) - 1


def stream(seed: int, *keys: int) -> np.random.Generator:
    if seed < 0:
        raise ValueError(f"seed must be non-negative, got {seed}")
    ss = np.random.SeedSequence(int(seed) & SEED_MASK, spawn_key=tuple(int(k) for k in keys))
    return np.random.Generator(np.random.Philox(ss))


def derive_seed(seed: int, *keys: int) -> int:
    """Derive a child 64-bit seed from ``seed`` and a key path."""
    ss = np.random.SeedSequence(int(seed) & SEED_MASK, spawn_key=tuple(int(k) for k in keys))
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def as_generator(rng) -> np.random.Generator:
    """Accept a Generator, an integer seed, or None."""
    if isinstance(rng, np.random.Generator):
        return rng
    if rng is None:
        return np.random.default_rng()
    return stream(int(rng))
