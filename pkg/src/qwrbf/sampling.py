"""Space-filling initial designs on the unit cube."""

from __future__ import annotations

import numpy as np
from scipy.spatial.distance import pdist


def latin_hypercube(count: int, dim: int, rng: np.random.Generator, trials: int = 50) -> np.ndarray:
    """Maximin Latin hypercube design of ``count`` points in ``[0, 1]^dim``.

    Every column places exactly one point in each of the ``count`` equal-width
    bins. Of ``trials`` random designs, the one with the largest minimum
    pairwise distance is returned (first one on ties).
    """
    if count < 1:
        raise ValueError("count must be >= 1")
    if count == 1:
        return rng.random((1, dim))
    best, best_score = None, -np.inf
    for _ in range(trials):
        bins = np.argsort(rng.random((count, dim)), axis=0)
        design = (bins + rng.random((count, dim))) / count
        score = pdist(design).min()
        if score > best_score:
            best, best_score = design, score
    return best
