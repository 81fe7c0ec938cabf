"""
Named random sub-streams derived from a single base seed.
"""
from typing import Dict

import numpy as np

STREAMS: Dict[str, int] = {
    "split": 0,
    "stage1": 1,
    "ssf": 2,
    "nsga2": 3,
    "trial": 4,
}


def derive_seed(base_seed: int, stream: str) -> int:
    """Return a 32-bit seed for `stream`, stable for a given base seed."""
    if stream not in STREAMS:
        raise KeyError(f"Unknown random stream: {stream}")
    sequence = np.random.SeedSequence(entropy=base_seed, spawn_key=(STREAMS[stream],))
    return int(sequence.generate_state(1)[0])


def make_rng(base_seed: int, stream: str) -> np.random.Generator:
    """Generator for a named stream."""
    return np.random.default_rng(derive_seed(base_seed, stream))
