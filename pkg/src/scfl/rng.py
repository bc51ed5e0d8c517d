"""Counter-based random streams.

Every draw is a pure function of (seed, step, slot): step s uses the
Philox stream jumped s times, and slot i is the i-th variate of that
stream.  Workers computing disjoint slot ranges of the same step
therefore reproduce the exact numbers of a serial run.
"""

from __future__ import annotations

import numpy as np


def step_generator(seed: int, step: int) -> np.random.Generator:
    bg = np.random.Philox(key=np.uint64(seed))
    if step:
        bg = bg.jumped(step)
    return np.random.Generator(bg)


def step_normals(seed: int, step: int, shape) -> np.ndarray:
    """Standard normals for one step; slot-indexed, schedule-independent."""
    return step_generator(seed, step).standard_normal(shape)
