"""Per-chain random streams.

Chain ``i`` of a run with seed ``s`` always draws from
``SeedSequence(s, spawn_key=(i,))``, so results do not depend on how chains
are grouped into blocks or threads.
"""
from __future__ import annotations

import numpy as np


def chain_generator(seed, chain):
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(int(chain),)))


class ChainStreams:
    """A block of independent chain generators that draws (n, C) normal arrays."""

    def __init__(self, seed, chains):
        self.chains = list(range(chains)) if isinstance(chains, int) else [int(c) for c in chains]
        self.generators = [chain_generator(seed, c) for c in self.chains]

    def __len__(self):
        return len(self.generators)

    def standard_normal(self, n):
        out = np.empty((len(self.generators), n))
        for row, g in zip(out, self.generators):
            g.standard_normal(out=row)
        return np.ascontiguousarray(out.T)


def normals(rng, n, m=None):
    """Standard normals of shape (n,) for a Generator, (n, C) for ChainStreams.

    A Generator asked for ``m`` columns returns (n, m).
    """
    if isinstance(rng, ChainStreams):
        return rng.standard_normal(n)
    if m is None:
        return rng.standard_normal(n)
    return rng.standard_normal((n, m))
