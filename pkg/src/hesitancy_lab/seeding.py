"""Root-seed management.

All randomness in the package flows from a single root seed through named
substreams, so that e.g. changing the number of sampler chains cannot
perturb synthetic-data generation. Streams are identified by fixed spawn
keys; adding a new stream must not renumber existing ones.
"""
from __future__ import annotations

import numpy as np

_STREAMS = {"fit": 0, "synth": 1, "shuffle": 2, "subsample": 3}


def substream(root_seed: int, name: str) -> np.random.SeedSequence:
    """Return the SeedSequence of one named top-level stream."""
    try:
        key = _STREAMS[name]
    except KeyError:
        raise KeyError(
            f"unknown stream {name!r}; expected one of {sorted(_STREAMS)}"
        ) from None
    return np.random.SeedSequence(root_seed, spawn_key=(key,))


def rng_for(root_seed: int, name: str) -> np.random.Generator:
    """Generator seeded from the named substream of ``root_seed``."""
    return np.random.default_rng(substream(root_seed, name))
