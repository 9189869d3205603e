"""Streaming datasets with controlled label noise.

A stream is an ordered pool of labeled samples, each stamped with the time
slot at which it arrives.  Noise is injected by flipping observed labels
according to a schedule of per-segment clean ratios; the hidden true label
is always preserved so that oracle selectors and purity metrics can see it.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from hashlib import sha256

import numpy as np

__all__ = [
    "DatastreamError",
    "ScheduleError",
    "LabeledSample",
    "NoiseSchedule",
    "StreamPool",
    "make_schedule",
    "generate_gaussian_mixture",
    "inject_label_noise",
    "load_csv",
    "pool_at",
    "split_pool",
]

# Class-conditional Gaussian mixture used by the synthetic experiments:
# positive class around [1, 1], negative class around [-1, -1].
MIXTURE_MEAN_POS = np.array([1.0, 1.0])
MIXTURE_COV_POS = np.array([[5.0, 1.0], [1.0, 5.0]])
MIXTURE_MEAN_NEG = np.array([-1.0, -1.0])
MIXTURE_COV_NEG = np.array([[10.0, 1.0], [1.0, 3.0]])


class DatastreamError(ValueError):
    """Invalid dataset construction or access."""


class ScheduleError(DatastreamError):
    """Noise schedule does not cover the requested slots."""


@dataclass(frozen=True)
class LabeledSample:
    """One stream element: features plus observed and hidden true label."""

    id: int
    features: np.ndarray
    observed_label: int
    true_label: int
    arrival_slot: int

    @property
    def is_clean(self) -> bool:
        return self.observed_label == self.true_label


@dataclass(frozen=True)
class NoiseSchedule:
    """Contiguous segments of (start_slot, end_slot, clean_ratio)."""

    segments: tuple[tuple[int, int, float], ...]

    @property
    def first_slot(self) -> int:
        return self.segments[0][0]

    @property
    def last_slot(self) -> int:
        return self.segments[-1][1]

    def clean_ratio_at(self, slot: int) -> float:
        for start, end, phi in self.segments:
            if start <= slot <= end:
                return phi
        raise ScheduleError(f"no schedule segment covers slot {slot}")


def make_schedule(segments) -> NoiseSchedule:
    """Validate segments: sorted, contiguous, clean ratios in [0, 1]."""
    segs = [(int(a), int(b), float(phi)) for a, b, phi in segments]
    if not segs:
        raise ScheduleError("schedule needs at least one segment")
    for i, (start, end, phi) in enumerate(segs):
        if start > end:
            raise ScheduleError(f"segment {i}: start {start} > end {end}")
        if not 0.0 <= phi <= 1.0:
            raise ScheduleError(f"segment {i}: clean ratio {phi} outside [0, 1]")
        if i > 0:
            prev_end = segs[i - 1][1]
            if start != prev_end + 1:
                raise ScheduleError(
                    f"segment {i}: starts at {start}, expected {prev_end + 1} "
                    f"(gap or overlap after slot {prev_end})"
                )
    return NoiseSchedule(tuple(segs))


class StreamPool:
    """Append-only pool of samples ordered by arrival slot.

    Immutable after construction.  Feature rows are kept in a contiguous
    matrix so selectors can run vectorized scans; prefix views share that
    storage, so `pool_at` is cheap.
    """

    def __init__(self, samples: list[LabeledSample]):
        samples = sorted(samples, key=lambda s: (s.arrival_slot, s.id))
        if samples:
            dim = samples[0].features.shape[0]
            for s in samples:
                if s.features.shape != (dim,):
                    raise DatastreamError(
                        f"sample {s.id}: feature dimension {s.features.shape[0]} != {dim}"
                    )
        self._samples = samples
        n = len(samples)
        d = samples[0].features.shape[0] if samples else 0
        self.features = np.empty((n, d))
        self.observed = np.empty(n, dtype=np.int64)
        self.true_labels = np.empty(n, dtype=np.int64)
        self.ids = np.empty(n, dtype=np.int64)
        self.slots = np.empty(n, dtype=np.int64)
        for i, s in enumerate(samples):
            self.features[i] = s.features
            self.observed[i] = s.observed_label
            self.true_labels[i] = s.true_label
            self.ids[i] = s.id
            self.slots[i] = s.arrival_slot
        self.features.setflags(write=False)
        self._norms_sq = np.einsum("ij,ij->i", self.features, self.features)
        self._f32 = None
        self._norms_sq_f32 = None
        self._index_by_id = {int(s.id): i for i, s in enumerate(samples)}

    def __len__(self) -> int:
        return len(self._samples)

    def __getitem__(self, i: int) -> LabeledSample:
        return self._samples[i]

    def __iter__(self):
        return iter(self._samples)

    @property
    def dimension(self) -> int:
        return self.features.shape[1]

    @property
    def num_classes(self) -> int:
        if not self._samples:
            return 0
        return int(max(self.observed.max(), self.true_labels.max())) + 1

    @property
    def max_slot(self) -> int:
        return int(self.slots[-1]) if self._samples else 0

    @property
    def norms_sq(self) -> np.ndarray:
        return self._norms_sq

    def features_f32(self) -> tuple[np.ndarray, np.ndarray]:
        """Single-precision copy of (features, squared norms), built lazily."""
        if self._f32 is None:
            self._f32 = self.features.astype(np.float32)
            self._norms_sq_f32 = np.einsum("ij,ij->i", self._f32, self._f32)
        return self._f32, self._norms_sq_f32

    def index_of(self, sample_id: int) -> int:
        return self._index_by_id[int(sample_id)]

    def sample_by_id(self, sample_id: int) -> LabeledSample:
        return self._samples[self.index_of(sample_id)]

    def clean_mask(self) -> np.ndarray:
        return self.observed == self.true_labels

    def content_hash(self) -> str:
        """Digest over ids, slots, labels and feature bytes (pairing checks)."""
        h = sha256()
        h.update(self.ids.tobytes())
        h.update(self.slots.tobytes())
        h.update(self.observed.tobytes())
        h.update(self.true_labels.tobytes())
        h.update(np.ascontiguousarray(self.features).tobytes())
        return h.hexdigest()

    def prefix(self, count: int) -> "PoolView":
        return PoolView(self, count)


class PoolView:
    """Read-only prefix of a StreamPool: the samples arrived by some slot."""

    def __init__(self, pool: StreamPool, count: int):
        if not 0 <= count <= len(pool):
            raise DatastreamError(f"prefix length {count} out of range")
        self._pool = pool
        self._count = count

    def __len__(self) -> int:
        return self._count

    def __getitem__(self, i: int) -> LabeledSample:
        if i < 0:
            i += self._count
        if not 0 <= i < self._count:
            raise IndexError(i)
        return self._pool[i]

    def __iter__(self):
        return iter(self._pool._samples[: self._count])

    @property
    def dimension(self) -> int:
        return self._pool.dimension

    @property
    def features(self) -> np.ndarray:
        return self._pool.features[: self._count]

    @property
    def observed(self) -> np.ndarray:
        return self._pool.observed[: self._count]

    @property
    def true_labels(self) -> np.ndarray:
        return self._pool.true_labels[: self._count]

    @property
    def ids(self) -> np.ndarray:
        return self._pool.ids[: self._count]

    @property
    def norms_sq(self) -> np.ndarray:
        return self._pool.norms_sq[: self._count]

    def features_f32(self) -> tuple[np.ndarray, np.ndarray]:
        f32, n32 = self._pool.features_f32()
        return f32[: self._count], n32[: self._count]

    def index_of(self, sample_id: int) -> int:
        idx = self._pool.index_of(sample_id)
        if idx >= self._count:
            raise DatastreamError(f"sample {sample_id} has not arrived yet")
        return idx

    def sample_by_id(self, sample_id: int) -> LabeledSample:
        return self._pool[self.index_of(sample_id)]

    def clean_mask(self) -> np.ndarray:
        return self.observed == self.true_labels

    def sample_ids(self) -> set[int]:
        return {int(i) for i in self.ids}


def generate_gaussian_mixture(n: int, seed: int) -> StreamPool:
    """Draw a balanced two-class Gaussian mixture stream of n samples.

    Class 1 is centered at [1, 1], class 0 at [-1, -1], with the fixed
    anisotropic covariances above.  Arrival order is a seeded shuffle so
    the stream interleaves both classes.  Labels start clean.
    """
    if n < 2:
        raise DatastreamError(f"need n >= 2 to hold both classes, got {n}")
    rng = np.random.default_rng(seed)
    n_pos = n // 2
    n_neg = n - n_pos
    x_pos = rng.multivariate_normal(MIXTURE_MEAN_POS, MIXTURE_COV_POS, size=n_pos)
    x_neg = rng.multivariate_normal(MIXTURE_MEAN_NEG, MIXTURE_COV_NEG, size=n_neg)
    feats = np.vstack([x_pos, x_neg])
    labels = np.concatenate([np.ones(n_pos, dtype=int), np.zeros(n_neg, dtype=int)])
    order = rng.permutation(n)
    samples = [
        LabeledSample(
            id=i,
            features=feats[order[i]].copy(),
            observed_label=int(labels[order[i]]),
            true_label=int(labels[order[i]]),
            arrival_slot=i + 1,
        )
        for i in range(n)
    ]
    return StreamPool(samples)


def inject_label_noise(
    pool: StreamPool, schedule: NoiseSchedule, num_classes: int, seed: int
) -> StreamPool:
    """Return a new pool with labels flipped per the schedule's clean ratios.

    A sample arriving in a segment with clean ratio phi keeps its label with
    probability phi; otherwise the observed label is redrawn uniformly from
    the other num_classes - 1 classes.  Features and true labels are never
    touched.  Bit-identical for identical inputs and seed.
    """
    if num_classes < 2:
        raise DatastreamError(f"need num_classes >= 2, got {num_classes}")
    for s in pool:
        schedule.clean_ratio_at(s.arrival_slot)  # raises ScheduleError on gaps
    rng = np.random.default_rng(seed)
    n = len(pool)
    u = rng.random(n)
    offsets = rng.integers(1, num_classes, size=n)
    noisy = []
    for i, s in enumerate(pool):
        phi = schedule.clean_ratio_at(s.arrival_slot)
        label = s.observed_label
        if u[i] > phi:
            label = int((label + offsets[i]) % num_classes)
        noisy.append(
            LabeledSample(
                id=s.id,
                features=s.features,
                observed_label=label,
                true_label=s.true_label,
                arrival_slot=s.arrival_slot,
            )
        )
    return StreamPool(noisy)


def load_csv(
    path,
    label_column: int | None = None,
    has_header: bool = False,
    samples_per_slot: int = 1,
) -> StreamPool:
    """Load a numeric CSV as a stream pool, one sample per row.

    Rows are feature floats plus one integer label column (the last column
    unless label_column gives a 0-based index).  Arrival slots follow row
    order, samples_per_slot rows per slot.  Labels are clean on load.
    """
    if samples_per_slot < 1:
        raise DatastreamError("samples_per_slot must be >= 1")
    samples: list[LabeledSample] = []
    dim = None
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        row_index = 0
        for line_no, row in enumerate(reader, start=1):
            if not row or (len(row) == 1 and not row[0].strip()):
                continue
            if has_header and line_no == 1:
                continue
            label_idx = len(row) - 1 if label_column is None else label_column
            if not 0 <= label_idx < len(row):
                raise DatastreamError(
                    f"line {line_no}: label column {label_idx} out of range"
                )
            try:
                label = int(float(row[label_idx]))
                feats = np.array(
                    [float(v) for j, v in enumerate(row) if j != label_idx]
                )
            except ValueError as exc:
                raise DatastreamError(f"line {line_no}: {exc}") from exc
            if dim is None:
                dim = feats.shape[0]
            elif feats.shape[0] != dim:
                raise DatastreamError(
                    f"line {line_no}: {feats.shape[0]} features, expected {dim}"
                )
            samples.append(
                LabeledSample(
                    id=row_index,
                    features=feats,
                    observed_label=label,
                    true_label=label,
                    arrival_slot=row_index // samples_per_slot + 1,
                )
            )
            row_index += 1
    if not samples:
        raise DatastreamError(f"{path}: no data rows (empty dataset)")
    return StreamPool(samples)


def pool_at(pool: StreamPool, t: int) -> PoolView:
    """Read-only view of the samples with arrival_slot <= t."""
    if not 1 <= t <= pool.max_slot:
        raise DatastreamError(f"slot {t} outside [1, {pool.max_slot}]")
    count = int(np.searchsorted(pool.slots, t, side="right"))
    return pool.prefix(count)


def split_pool(pool: StreamPool, n_train: int) -> tuple[StreamPool, StreamPool]:
    """Split by arrival order into a train stream and a held-out test pool.

    Both halves are re-indexed from id 0 / slot 1 so each is a standalone
    stream.
    """
    if not 0 < n_train < len(pool):
        raise DatastreamError(
            f"train size {n_train} must be inside (0, {len(pool)})"
        )

    def reindex(chunk: list[LabeledSample]) -> StreamPool:
        return StreamPool(
            [
                LabeledSample(
                    id=i,
                    features=s.features,
                    observed_label=s.observed_label,
                    true_label=s.true_label,
                    arrival_slot=i + 1,
                )
                for i, s in enumerate(chunk)
            ]
        )

    all_samples = list(pool)
    return reindex(all_samples[:n_train]), reindex(all_samples[n_train:])
