"""Pinned random-number streams.

All sampling in the package goes through Philox, a counter-based generator
whose output is identical across platforms and execution orders. Independent
streams are derived from a master seed and an integer stream index, so batch
work can be parallelized without changing results: stream k of seed s is the
same no matter which worker draws it.
"""

from __future__ import annotations

import numpy as np

__all__ = ["derive_stream"]


def derive_stream(seed: int, *index: int) -> np.random.Generator:
    """Return the deterministic generator for (seed, index...).

    ``index`` identifies a sub-stream (e.g. the sample number in a batch).
    No index gives the master stream of ``seed``.
    """
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(i) for i in index))
    return np.random.Generator(np.random.Philox(ss))
