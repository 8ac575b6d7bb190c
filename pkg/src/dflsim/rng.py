"""Named, deterministic RNG substreams derived from one 64-bit master seed.

Every source of randomness in an experiment (topology, data, partition,
init, per-client batches, attack draws, dropout masks, ...) pulls its own
generator through `substream`, so changing one component's draws never
shifts another's.
"""

import hashlib

import numpy as np


def substream_seed(master_seed: int, *path) -> int:
    """Derive a stable 64-bit seed for the substream named by `path`."""
    key = str(int(master_seed)) + "".join("/" + str(p) for p in path)
    digest = hashlib.sha256(key.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


def substream(master_seed: int, *path) -> np.random.Generator:
    """Generator for the substream named by `path` (e.g. "client", 3, 17)."""
    return np.random.default_rng(substream_seed(master_seed, *path))
