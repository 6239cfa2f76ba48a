"""Named deterministic random streams.

All randomness in the pipeline flows from one root seed. Each consumer asks
for a stream by name ("stage1.batch", "gen.mono", ...); the same (seed, name)
always yields the same generator, and distinct names yield independent ones.
"""

from __future__ import annotations

import numpy as np


def named_rng(root_seed: int, *names: str) -> np.random.Generator:
    """Generator for the stream identified by `names` under `root_seed`."""
    entropy = [int(root_seed) & 0xFFFFFFFFFFFFFFFF]
    for name in names:
        entropy.extend(name.encode("utf-8"))
    return np.random.default_rng(np.random.SeedSequence(entropy))
