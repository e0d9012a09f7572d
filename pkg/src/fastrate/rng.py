"""Seeded random streams.

Every random draw in the package comes from a ``numpy.random.Generator``
backed by PCG64 and keyed by ``(master_seed, *stream)``.  The stream key is
passed to ``SeedSequence`` as ``spawn_key``, so two different keys give
statistically independent generators and the same key always reproduces
the same draws.  Normal variates use numpy's ziggurat sampler.

Stream tags used across the package (first element of the key):

    0  offline dataset sampling      (size index, trial index)
    1  Monte-Carlo evaluation cells  (cell index)
    2  reference dataset
    3  tabular instance generation   (instance index)
    4  online episodes               (block index, 0 for exploration)
    5  randomized diagnostics        (instance index)
"""

from __future__ import annotations

import numpy as np

PRNG_NAME = "numpy.random.PCG64 via SeedSequence(entropy=master_seed, spawn_key=stream)"
NORMAL_METHOD = "numpy Generator.standard_normal (ziggurat)"

DATASET = 0
EVALUATION = 1
REFERENCE = 2
TABULAR = 3
ONLINE = 4
DIAGNOSTIC = 5


def stream(master_seed: int, *key: int) -> np.random.Generator:
    """Generator for the stream ``key`` under ``master_seed``."""
    if master_seed < 0:
        raise ValueError("master seed must be non-negative")
    seq = np.random.SeedSequence(entropy=int(master_seed), spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.PCG64(seq))
