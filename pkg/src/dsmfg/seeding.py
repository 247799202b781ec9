"""Deterministic random-stream derivation.

Every random draw in the package flows from one scenario seed through
stream(seed, tag, *indices): the stream identity is the tuple
(seed, crc32(tag), indices), fed to a counter-based Philox generator.
Path index selects the stream, so Monte Carlo results do not depend on
execution order or degree of parallelism.
"""

import zlib

import numpy as np


def stream(seed, tag, *indices):
    """Return a Philox generator for the given (seed, purpose-tag, indices)."""
    if seed < 0:
        raise ValueError("seed must be a nonnegative integer")
    entropy = [int(seed), zlib.crc32(tag.encode("utf-8")), *(int(i) for i in indices)]
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(entropy)))
