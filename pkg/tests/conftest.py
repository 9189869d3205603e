import numpy as np
import pytest

from ogrs_lab import datastream as ds, models


def make_pool(features, observed, true_labels=None, ids=None) -> ds.StreamPool:
    """Build a pool directly from arrays (one arrival per slot)."""
    features = np.asarray(features, dtype=float)
    observed = list(observed)
    true_labels = observed if true_labels is None else list(true_labels)
    ids = list(range(len(observed))) if ids is None else list(ids)
    return ds.StreamPool(
        [
            ds.LabeledSample(
                id=ids[i],
                features=features[i].copy(),
                observed_label=int(observed[i]),
                true_label=int(true_labels[i]),
                arrival_slot=i + 1,
            )
            for i in range(len(observed))
        ]
    )


def random_pool(n, dim, num_classes, seed, noisy_fraction=0.0):
    rng = np.random.default_rng(seed)
    feats = rng.normal(size=(n, dim))
    true = rng.integers(0, num_classes, size=n)
    observed = true.copy()
    if noisy_fraction > 0:
        flip = rng.random(n) < noisy_fraction
        observed[flip] = (
            true[flip] + rng.integers(1, num_classes, size=int(flip.sum()))
        ) % num_classes
    return make_pool(feats, observed, true)


@pytest.fixture
def lr_arch():
    return models.logistic_regression(2, 2)
