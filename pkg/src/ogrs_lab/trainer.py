"""Online training loop: warm up naively, then select-and-update per slot.

Each slot ingests the newly arrived samples, asks the configured selector
for a batch S_t, takes SGD step(s) on it, and pushes the updated parameters
into the snapshot window that the gradient selector's local loss reads.
Test accuracy is evaluated every eval_stride slots (plus the first and last
slot) and carried forward in between, so every metrics row has a value.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass, replace

import numpy as np

from . import baselines, models, selector as sel
from .datastream import StreamPool, pool_at

__all__ = [
    "TrainerError",
    "MetricsRow",
    "RunSpec",
    "OnlineTrainer",
    "evaluate",
    "run",
    "METRICS_COLUMNS",
]

METRICS_COLUMNS = (
    "slot",
    "test_accuracy",
    "selection_clean_fraction",
    "mean_RL",
    "mean_Rw",
    "mean_mu_final",
    "train_loss",
)

OGRS = "ogrs"
ITLM = "itlm"
NAIVE = "naive"
ORACLE = "oracle"
SELECTOR_KINDS = (OGRS, ITLM, NAIVE, ORACLE)


class TrainerError(ValueError):
    pass


@dataclass(frozen=True)
class MetricsRow:
    slot: int
    test_accuracy: float
    selection_clean_fraction: float
    mean_rl: float
    mean_rw: float
    mean_mu_final: float
    train_loss: float

    def as_csv(self) -> str:
        return ",".join(
            [
                str(self.slot),
                repr(self.test_accuracy),
                repr(self.selection_clean_fraction),
                repr(self.mean_rl),
                repr(self.mean_rw),
                repr(self.mean_mu_final),
                repr(self.train_loss),
            ]
        )


@dataclass(frozen=True)
class RunSpec:
    """Everything one run needs: data, model, selector, and loop sizes."""

    train_pool: StreamPool
    test_pool: StreamPool
    arch: models.Architecture
    selector_kind: str
    phi_hat: float | None
    selector_config: sel.SelectorConfig
    slots: int                      # T, warm-up included
    warmup_rounds: int
    batch_size: int                 # K
    learning_rate: float
    steps_per_slot: int = 1
    eval_stride: int = 50
    seed: int = 0
    label: str = ""

    def __post_init__(self):
        if self.selector_kind not in SELECTOR_KINDS:
            raise TrainerError(f"unknown selector kind {self.selector_kind!r}")
        if self.selector_kind == ITLM:
            if self.phi_hat is None or not 0.0 <= self.phi_hat <= 1.0:
                raise TrainerError(
                    f"itlm needs phi_hat in [0, 1], got {self.phi_hat}"
                )
        if self.warmup_rounds < 1:
            raise TrainerError("warmup_rounds must be >= 1")
        if self.slots < self.warmup_rounds:
            raise TrainerError(
                f"total slots {self.slots} < warmup rounds {self.warmup_rounds}"
            )
        if self.batch_size < 1 or self.steps_per_slot < 1 or self.eval_stride < 1:
            raise TrainerError("batch_size, steps_per_slot, eval_stride must be >= 1")
        if self.learning_rate <= 0:
            raise TrainerError(f"learning_rate must be > 0, got {self.learning_rate}")


def _seed_sequence(seed: int, tag: str) -> np.random.SeedSequence:
    return np.random.SeedSequence([seed, zlib.crc32(tag.encode())])


def evaluate(params: models.ModelParams, test_pool) -> float:
    """Fraction of test samples whose argmax class matches the true label.

    Argmax ties resolve to the smallest class index.  The test pool must be
    clean (observed == true), since it measures ground-truth accuracy.
    """
    if len(test_pool) == 0:
        raise TrainerError("empty test pool")
    if not bool(np.all(test_pool.clean_mask())):
        raise TrainerError("test pool labels must be clean")
    probs = models.predict_batch(params, test_pool.features)
    pred = probs.argmax(axis=1)
    return float(np.mean(pred == test_pool.true_labels))


class OnlineTrainer:
    """Carries one run's state (parameters, window, tallies, slot counter)."""

    def __init__(self, spec: RunSpec):
        self.spec = spec
        if spec.warmup_rounds > spec.train_pool.max_slot:
            raise TrainerError(
                f"stream exhausted: warm-up needs {spec.warmup_rounds} slots "
                f"but the stream ends at {spec.train_pool.max_slot}"
            )
        self.params = models.init_params(
            spec.arch, _seed_sequence(spec.seed, "init").generate_state(1)[0]
        )
        self.window = sel.SnapshotWindow(spec.selector_config.window_size)
        self.counts: sel.SelectionCounts | None = None  # built lazily (bandwidth)
        self.rng = np.random.default_rng(
            _seed_sequence(spec.seed, f"run:{spec.label or spec.selector_kind}")
        )
        self.slot = 1
        self.last_accuracy: float | None = None

    # -- selection -----------------------------------------------------

    def _ensure_counts(self, pool) -> sel.SelectionCounts:
        if self.counts is None:
            cfg = self.spec.selector_config
            bandwidth = cfg.bandwidth
            if bandwidth is None:
                bandwidth = sel.median_pairwise_bandwidth(pool)
            self.counts = sel.SelectionCounts(
                bandwidth, cfg.zeta, cfg.count_reset, cfg.decay_rho
            )
        return self.counts

    def _select(self, pool, warm: bool):
        spec = self.spec
        if warm or spec.selector_kind == NAIVE:
            return baselines.naive_select(pool, spec.batch_size, self.rng), None
        if spec.selector_kind == ITLM:
            return (
                baselines.itlm_select(
                    pool, self.params, spec.phi_hat, spec.batch_size, self.rng
                ),
                None,
            )
        if spec.selector_kind == ORACLE:
            return baselines.oracle_select(pool, spec.batch_size, self.rng), None
        counts = self._ensure_counts(pool)
        counts.begin_slot()
        cfg = self.spec.selector_config
        if cfg.samples_per_slot != spec.batch_size:
            cfg = replace(cfg, samples_per_slot=spec.batch_size)
        return sel.select_set(pool, self.window, counts, cfg, self.rng)

    # -- slot loop -----------------------------------------------------

    def _visible_pool(self):
        t = min(self.slot, self.spec.train_pool.max_slot)
        return pool_at(self.spec.train_pool, t)

    def run_slot(self, warm: bool = False) -> MetricsRow:
        spec = self.spec
        t = self.slot
        pool = self._visible_pool()
        picks, traces = self._select(pool, warm)
        xs = np.stack([s.features for s in picks])
        ys = np.array([s.observed_label for s in picks])
        clean_fraction = float(np.mean([s.is_clean for s in picks]))
        train_loss = float(models.losses(self.params, xs, ys).mean())
        if traces:
            mean_rl = float(np.mean([sel.lagrangian_regret(tr) for tr in traces]))
            mean_rw = float(np.mean([sel.local_regret(tr) for tr in traces]))
            mean_mu = float(np.mean([tr.mu_final for tr in traces]))
        else:
            mean_rl = mean_rw = mean_mu = 0.0
        for _ in range(spec.steps_per_slot):
            self.params = models.sgd_step(self.params, xs, ys, spec.learning_rate)
        self.window.push(self.params)
        if t == 1 or t == spec.slots or t % spec.eval_stride == 0:
            self.last_accuracy = evaluate(self.params, spec.test_pool)
        self.slot = t + 1
        return MetricsRow(
            slot=t,
            test_accuracy=float(self.last_accuracy),
            selection_clean_fraction=clean_fraction,
            mean_rl=mean_rl,
            mean_rw=mean_rw,
            mean_mu_final=mean_mu,
            train_loss=train_loss,
        )

    def warmup(self, rounds: int | None = None) -> list[MetricsRow]:
        """Naive-selection slots that populate the snapshot window."""
        rounds = self.spec.warmup_rounds if rounds is None else rounds
        if rounds < 1:
            raise TrainerError("warm-up needs >= 1 round")
        if rounds > self.spec.train_pool.max_slot:
            raise TrainerError("stream exhausted during warm-up")
        return [self.run_slot(warm=True) for _ in range(rounds)]

    def run(self, row_sink=None) -> list[MetricsRow]:
        """Warm up, then run selective slots until T.  Emits rows in order.

        row_sink, when given, receives each row as it completes so callers
        can stream the trace to disk; rows produced before a failure are
        already flushed by the time the exception propagates.
        """
        rows: list[MetricsRow] = []

        def emit(row: MetricsRow) -> None:
            rows.append(row)
            if row_sink is not None:
                row_sink(row)

        for row in self.warmup():
            emit(row)
        while self.slot <= self.spec.slots:
            emit(self.run_slot(warm=False))
        return rows


def run(spec: RunSpec, row_sink=None) -> list[MetricsRow]:
    """One complete online run for the given spec."""
    return OnlineTrainer(spec).run(row_sink=row_sink)
