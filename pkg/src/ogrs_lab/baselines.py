"""Reference selectors sharing the gradient selector's per-slot interface.

All of them draw K samples with replacement each slot:

  * trimmed-loss: rank the pool by current loss and keep only the lowest
    floor(phi_hat * n) before drawing (the classic small-loss heuristic,
    parameterized by a pre-estimated clean ratio),
  * naive: draw from the whole pool,
  * oracle: draw from the ground-truth-clean subset (metrics-only upper
    reference).

A brute-force subset enumerator doubles as the independent test oracle for
the trimmed-loss rule on tiny pools.
"""

from __future__ import annotations

from itertools import combinations

import numpy as np

from .datastream import LabeledSample
from .models import ModelParams, losses

__all__ = [
    "BaselineError",
    "itlm_select",
    "naive_select",
    "oracle_select",
    "brute_force_min_subset",
    "kept_set",
]

BRUTE_FORCE_LIMIT = 22


class BaselineError(ValueError):
    pass


def kept_set(pool, params: ModelParams, phi_hat: float) -> np.ndarray:
    """Indices of the max(1, floor(phi_hat * n)) lowest-loss samples.

    Loss ties are broken by smaller sample id so the kept set is unique.
    """
    if len(pool) == 0:
        raise BaselineError("empty pool")
    if not 0.0 <= phi_hat <= 1.0:
        raise BaselineError(f"phi_hat must be in [0, 1], got {phi_hat}")
    n = len(pool)
    keep = max(1, int(np.floor(phi_hat * n)))
    losses_now = losses(params, pool.features, pool.observed)
    order = np.lexsort((pool.ids, losses_now))
    return np.sort(order[:keep])


def itlm_select(
    pool, params: ModelParams, phi_hat: float, k: int, rng: np.random.Generator
) -> list[LabeledSample]:
    """Trim to the lowest-loss fraction, then draw K with replacement."""
    if k < 1:
        raise BaselineError(f"K must be >= 1, got {k}")
    kept = kept_set(pool, params, phi_hat)
    picks = kept[rng.integers(0, len(kept), size=k)]
    return [pool[int(i)] for i in picks]


def naive_select(pool, k: int, rng: np.random.Generator) -> list[LabeledSample]:
    """K uniform draws with replacement from the whole pool."""
    if len(pool) == 0:
        raise BaselineError("empty pool")
    idx = rng.integers(0, len(pool), size=k)
    return [pool[int(i)] for i in idx]


def oracle_select(pool, k: int, rng: np.random.Generator) -> list[LabeledSample]:
    """K uniform draws with replacement from the truly clean samples."""
    clean = np.flatnonzero(pool.clean_mask())
    if clean.size == 0:
        raise BaselineError("pool has no clean samples")
    idx = clean[rng.integers(0, clean.size, size=k)]
    return [pool[int(i)] for i in idx]


def brute_force_min_subset(pool, params: ModelParams, m: int) -> tuple[int, ...]:
    """Exhaustively find the size-m subset minimizing the total loss.

    Test oracle only: guarded to tiny pools.  Returns sample ids in
    ascending order; ties resolve to the lexicographically smallest id
    tuple (combinations are generated in that order, and only strict
    improvements replace the incumbent).
    """
    n = len(pool)
    if n > BRUTE_FORCE_LIMIT:
        raise BaselineError(f"pool of {n} exceeds enumeration limit {BRUTE_FORCE_LIMIT}")
    if not 1 <= m <= n:
        raise BaselineError(f"subset size {m} outside [1, {n}]")
    losses_now = losses(params, pool.features, pool.observed)
    by_id = {int(pool.ids[i]): float(losses_now[i]) for i in range(n)}
    ids = sorted(by_id)
    best_ids: tuple[int, ...] | None = None
    best_sum = np.inf
    for combo in combinations(ids, m):
        total = sum(by_id[i] for i in combo)
        if total < best_sum:
            best_sum = total
            best_ids = combo
    assert best_ids is not None
    return best_ids
