"""Deterministic derivation of independent random streams.

Every stochastic routine in the package draws from a generator derived from
(master seed, integer stream ids). Streams depend only on the key, never on
evaluation order, so parallel and serial runs produce identical results.
"""

from __future__ import annotations

import numpy as np


def derive_seed(master: int, *ids: int) -> int:
    """Collapse (master, ids...) into a single 64-bit seed."""
    seq = np.random.SeedSequence((int(master),) + tuple(int(i) for i in ids))
    return int(seq.generate_state(1, np.uint64)[0])


def derive_rng(master: int, *ids: int) -> np.random.Generator:
    """Generator for the stream keyed by (master, ids...)."""
    seq = np.random.SeedSequence((int(master),) + tuple(int(i) for i in ids))
    return np.random.default_rng(seq)
