"""Deterministic seed derivation.

All randomness in the package flows through numpy's counter-based Philox
generator keyed by ``SeedSequence``.  Distinct purposes (data draws, splits,
per-config training, retraining, evaluation) live in disjoint top-level
domains so evaluation streams can never collide with training streams.
"""

from __future__ import annotations

import numpy as np

# Top-level derivation domains.  EVAL must stay distinct from every domain
# used for data generation or training; ``derive`` asserts the invariant.
DOMAIN_DATA = 0
DOMAIN_SPLIT = 1
DOMAIN_TRAIN = 2
DOMAIN_RETRAIN = 3
DOMAIN_EVAL = 4

_TRAINING_DOMAINS = frozenset({DOMAIN_DATA, DOMAIN_SPLIT, DOMAIN_TRAIN, DOMAIN_RETRAIN})

assert DOMAIN_EVAL not in _TRAINING_DOMAINS


def derive(base_seed: int, *path: int) -> int:
    """Derive a 64-bit child seed from ``base_seed`` and an integer path.

    Children with different paths are statistically independent; the mapping
    is a pure function of its arguments.
    """
    if base_seed < 0:
        raise ValueError("base_seed must be non-negative")
    ss = np.random.SeedSequence(entropy=base_seed, spawn_key=tuple(path))
    return int(ss.generate_state(1, np.uint64)[0])


def rng_from(seed: int, *path: int) -> np.random.Generator:
    """Philox generator keyed by ``seed`` and an optional sub-path."""
    ss = np.random.SeedSequence(entropy=seed, spawn_key=tuple(path))
    return np.random.Generator(np.random.Philox(ss))
