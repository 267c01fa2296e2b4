"""Named random streams derived from one root seed."""

import zlib

import numpy as np

STREAMS = ("init", "target", "dropout", "shuffle", "weights", "data", "oracle")


def stream(root_seed: int, name: str) -> np.random.Generator:
    """Generator for stream ``name``; independent of which other streams exist."""
    if root_seed < 0:
        raise ValueError("seed must be an unsigned integer")
    key = zlib.crc32(name.encode("utf-8"))
    return np.random.default_rng(np.random.SeedSequence([int(root_seed), key]))
