"""Deterministic random streams.

All sampling in the package goes through counter-based Philox
generators keyed by ``(seed, purpose)``.  The purpose string is hashed
with BLAKE2b into the second key word, so distinct purposes yield
statistically independent streams and the mapping is stable across
platforms and Python versions (no reliance on ``hash()``).
"""

import hashlib

import numpy as np

__all__ = ["substream"]

_MASK64 = (1 << 64) - 1


def _purpose_tag(purpose):
    digest = hashlib.blake2b(purpose.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little")


def substream(seed, purpose):
    """Return a fresh ``numpy.random.Generator`` for ``(seed, purpose)``.

    Parameters
    ----------
    seed : int
        Base seed, interpreted modulo 2**64.
    purpose : str
        Label of the quantity being sampled, e.g. ``"srm.noise.2"``.
        The same (seed, purpose) pair always yields the same stream.
    """
    key = np.array([int(seed) & _MASK64, _purpose_tag(purpose)],
                   dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))
