"""Deterministic random-stream derivation.

Every unit of work (replicate, network, restart, trait) gets its own
generator derived from the global seed and an integer key path. Streams are
independent of thread count and of the order in which units execute.
"""

from __future__ import annotations

import numpy as np

# Domain tags keep key paths from different subsystems disjoint.
DOMAIN_PARAMS = 1
DOMAIN_GRAPH = 2
DOMAIN_TRAITS = 3
DOMAIN_RESPONDENTS = 4
DOMAIN_FIT = 5
DOMAIN_REPLICATE = 6
DOMAIN_NETWORK = 7
DOMAIN_NOISE = 8
DOMAIN_RESTART = 9
DOMAIN_QUAD = 10
DOMAIN_PAIRS = 11
DOMAIN_SEED_NODE = 12


def derive(seed: int, *key: int) -> np.random.Generator:
    """Generator for the stream identified by (seed, key path)."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=tuple(key))))


def derive_seed(seed: int, *key: int) -> int:
    """A 64-bit child seed for handing to a subprocess or sub-run."""
    ss = np.random.SeedSequence(seed, spawn_key=tuple(key))
    return int(ss.generate_state(1, dtype=np.uint64)[0])
