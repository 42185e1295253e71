"""Named random sub-streams derived from a single job seed."""
from __future__ import annotations

import numpy as np

STREAMS = {
    "data": 0,
    "shuffle": 1,
    "init": 2,
    "timing-jitter": 3,
    "probe": 4,
    "fuzz": 5,
}


def substream(seed: int, name: str, *extra: int) -> np.random.Generator:
    """Independent generator for ``name``; ``extra`` keys split it further."""
    return np.random.default_rng(np.random.SeedSequence([int(seed), STREAMS[name], *extra]))
