"""Synthetic 784-dimensional 10-class dataset written as CSV fixtures.

Stands in for flattened-image data at desk scale: each class is a Gaussian
blob around a random +/-1 pattern, with class pairs placed at staggered
distances so some classes are genuinely confusable.  That difficulty
spread is what makes trimmed-loss selection with a badly mismatched kept
fraction collapse onto the easy classes.
"""

from pathlib import Path

import numpy as np

DIM = 784
NUM_CLASSES = 10
PAIR_GAPS = (4.0, 5.0, 6.0, 7.0, 8.0)  # center distance within each class pair
BASE_SCALE = 18.0                       # distance between pair centers


def class_means(seed: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    means = np.empty((NUM_CLASSES, DIM))
    for pair, gap in enumerate(PAIR_GAPS):
        base = rng.choice([-1.0, 1.0], size=DIM) * BASE_SCALE / np.sqrt(DIM)
        offset = rng.normal(size=DIM)
        offset *= (gap / 2.0) / np.linalg.norm(offset)
        means[2 * pair] = base - offset
        means[2 * pair + 1] = base + offset
    return means


def sample(n: int, seed: int) -> tuple[np.ndarray, np.ndarray]:
    rng = np.random.default_rng(seed)
    means = class_means(seed=77)  # fixed geometry; only draws vary by seed
    labels = rng.integers(0, NUM_CLASSES, size=n)
    feats = means[labels] + rng.normal(size=(n, DIM))
    return feats, labels


def write_csv(path: Path, n: int, seed: int) -> Path:
    feats, labels = sample(n, seed)
    with open(path, "w", encoding="utf-8") as fh:
        for row, label in zip(feats, labels):
            fh.write(",".join(f"{v:.5f}" for v in row))
            fh.write(f",{label}\n")
    return path


def ensure_fixture(directory: Path, n_train: int = 5000, n_test: int = 1000):
    """Write (or reuse) the train/test CSV pair under `directory`."""
    directory.mkdir(parents=True, exist_ok=True)
    train = directory / f"blobs_train_{n_train}.csv"
    test = directory / f"blobs_test_{n_test}.csv"
    if not train.exists():
        write_csv(train, n_train, seed=101)
    if not test.exists():
        write_csv(test, n_test, seed=202)
    return train, test
