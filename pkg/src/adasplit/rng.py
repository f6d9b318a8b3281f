"""Deterministic random streams built on the counter-based Philox generator.

Every stochastic component (Monte-Carlo reference draws, random splits,
replication seeds) pulls from its own stream, keyed by a root seed plus an
integer path such as ``(PVALUE_DRAWS, subgroup)`` or ``(REPLICATION, rep)``.
Streams with distinct paths are statistically independent and do not share
mutable state, so results are reproducible regardless of evaluation order
and replications can run in parallel workers.
"""

import numpy as np

_MASK64 = (1 << 64) - 1

# Stream-purpose tags. Distinct tags guarantee that, e.g., the random split
# of a baseline method never collides with the Monte-Carlo draw stream.
PVALUE_DRAWS = 1
RANDOM_SPLIT = 2
REPLICATION = 3
DATA_GENERATION = 4


def stream(seed, *path):
    """Return an independent ``numpy`` Generator keyed by ``(seed, *path)``.

    ``seed`` is interpreted as a 64-bit integer; ``path`` entries must be
    non-negative integers.
    """
    key = (int(seed) & _MASK64,) + tuple(int(p) for p in path)
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(key)))


def child_seed(seed, *path):
    """Derive a 64-bit child seed, for handing to components that key their
    own streams (e.g. per-replication configs)."""
    key = (int(seed) & _MASK64,) + tuple(int(p) for p in path)
    return int(np.random.SeedSequence(key).generate_state(1, np.uint64)[0])
