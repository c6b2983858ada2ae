"""Seed handling.

Every random quantity in a run is drawn from one 64-bit master seed through
named substreams, so that individual noise sources (initial state, per-step
noise, measurement noise) can be shared or ablated across runs independently.
"""

import numpy as np

INIT_NOISE = "init-noise"
STEP_NOISE = "step-noise"
MEASUREMENT_NOISE = "measurement-noise"


def substream(seed: int, name: str) -> np.random.Generator:
    """Generator for the named substream of ``seed``.

    The same (seed, name) pair always yields an identical stream; different
    names yield statistically independent streams.
    """
    entropy = (int(seed) & 0xFFFFFFFFFFFFFFFF, int.from_bytes(name.encode("utf-8"), "little"))
    return np.random.default_rng(np.random.SeedSequence(entropy))
