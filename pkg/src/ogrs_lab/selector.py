"""Gradient-based robust sample selection.

Selection is framed as constrained minimization over the sample space: find
points with low *local loss* (the average loss under a sliding window of
recent model snapshots) while a soft constraint discourages picking the same
samples over and over.  Each selection runs a fixed number M of primal-dual
iterations:

  1. observe the constraint value g = (smoothed selection count) - zeta at
     the current iterate,
  2. ascend the dual:  mu <- max(0, mu + gamma * g),
  3. descend the primal via a projected gradient step
     d <- P[d - alpha * (grad_local_loss + mu * grad_g)],
     where P maps a continuous point to the nearest actual pool sample.

Because raw selection tallies are integers, the constraint would not be
differentiable; the tallies are therefore smoothed into a Gaussian-kernel
count field with bandwidth h, which has an analytic gradient.

Every iteration is recorded in a trace, from which two diagnostics are
computed: the windowed local regret (sum of squared local-loss gradient
norms) and the Lagrangian regret (norm of the summed KKT stationarity
residuals).  The dual variable recorded in row i is the value *before* that
iteration's dual update, so the residual H_i = grad_L(d_i) + mu_i * grad_g(d_i)
matches the stationarity reading; the primal step itself uses the freshly
updated multiplier.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, replace

import numpy as np

from .datastream import LabeledSample
from .models import ModelParams, WindowEvaluator, losses

__all__ = [
    "SelectorError",
    "SnapshotWindow",
    "SelectionCounts",
    "DualState",
    "SelectorConfig",
    "TraceRow",
    "SelectorTrace",
    "local_loss",
    "local_loss_grad",
    "count_field",
    "constraint",
    "dual_update",
    "nearest_index",
    "project",
    "primal_step",
    "select_one",
    "select_set",
    "local_regret",
    "lagrangian_regret",
    "regret_audit",
    "AuditResult",
    "median_pairwise_bandwidth",
    "traces_to_csv",
]

INIT_POLICIES = ("uniform_random", "lowest_recent_loss")
RESET_POLICIES = ("never", "per_slot", "decay")

# Pools at or below this size are scanned directly in float64; larger pools
# go through a float32 prefilter with an error-margin-safe float64 refine.
_PREFILTER_MIN_POOL = 512


class SelectorError(ValueError):
    """Invalid selector state or configuration."""


class SnapshotWindow:
    """Ring buffer of the last `capacity` parameter snapshots, newest first."""

    def __init__(self, capacity: int):
        if capacity < 1:
            raise SelectorError(f"window capacity must be >= 1, got {capacity}")
        self.capacity = capacity
        self._snaps: deque[ModelParams] = deque(maxlen=capacity)

    def push(self, params: ModelParams) -> None:
        self._snaps.appendleft(params)

    def snapshots(self) -> tuple[ModelParams, ...]:
        return tuple(self._snaps)

    def newest(self) -> ModelParams:
        if not self._snaps:
            raise SelectorError("window is empty")
        return self._snaps[0]

    def __len__(self) -> int:
        return len(self._snaps)


class SelectionCounts:
    """Per-sample selection tallies plus the smoothed-field parameters.

    Tallies are stored as floats so the exponential-decay reset policy can
    shrink them; under the never/per_slot policies they remain integers in
    value.  Only final selections are recorded; intermediate iterates read
    the field but never write it.
    """

    def __init__(
        self,
        bandwidth: float,
        zeta: float,
        reset_policy: str = "never",
        decay_rho: float = 0.9,
    ):
        if bandwidth <= 0:
            raise SelectorError(f"bandwidth must be > 0, got {bandwidth}")
        if zeta < 0:
            raise SelectorError(f"zeta must be >= 0, got {zeta}")
        if reset_policy not in RESET_POLICIES:
            raise SelectorError(f"unknown reset policy {reset_policy!r}")
        if reset_policy == "decay" and not 0.0 < decay_rho < 1.0:
            raise SelectorError(f"decay_rho must be in (0, 1), got {decay_rho}")
        self.bandwidth = float(bandwidth)
        self.zeta = float(zeta)
        self.reset_policy = reset_policy
        self.decay_rho = float(decay_rho)
        self.counts: dict[int, float] = {}
        self._cache = None

    def copy(self) -> "SelectionCounts":
        dup = SelectionCounts(
            self.bandwidth, self.zeta, self.reset_policy, self.decay_rho
        )
        dup.counts = dict(self.counts)
        return dup

    def record_selection(self, sample_id: int) -> None:
        self.counts[int(sample_id)] = self.counts.get(int(sample_id), 0.0) + 1.0
        self._cache = None

    def begin_slot(self) -> None:
        """Apply the reset policy at the start of a time slot."""
        if self.reset_policy == "per_slot":
            if self.counts:
                self.counts.clear()
                self._cache = None
        elif self.reset_policy == "decay":
            if self.counts:
                self.counts = {
                    k: v * self.decay_rho
                    for k, v in self.counts.items()
                    if v * self.decay_rho > 1e-12
                }
                self._cache = None

    def total(self) -> float:
        return sum(self.counts.values())

    def _field_arrays(self, pool):
        # Gathered (features, squared norms, tallies) over counted samples.
        # Counted ids never leave the pool and features are immutable, so the
        # cache only invalidates when the tallies change.
        if self._cache is None or self._cache[0] is not _base_pool(pool):
            ids = sorted(self.counts)
            if ids:
                idx = np.array([pool.index_of(i) for i in ids])
                feats = np.ascontiguousarray(pool.features[idx])
                norms = pool.norms_sq[idx].copy()
                cvec = np.array([self.counts[i] for i in ids])
            else:
                feats = np.empty((0, pool.dimension))
                norms = np.empty(0)
                cvec = np.empty(0)
            self._cache = (_base_pool(pool), feats, norms, cvec)
        return self._cache[1], self._cache[2], self._cache[3]


def _base_pool(pool):
    return getattr(pool, "_pool", pool)


@dataclass(frozen=True)
class DualState:
    """Nonnegative multiplier and its (fixed) step size."""

    mu: float
    gamma: float

    def __post_init__(self):
        if self.mu < 0:
            raise SelectorError(f"mu must be >= 0, got {self.mu}")
        if self.gamma <= 0:
            raise SelectorError(f"gamma must be > 0, got {self.gamma}")


def dual_update(dual: DualState, g: float) -> DualState:
    """mu' = max(0, mu + gamma * g); the clamp keeps the update non-expansive."""
    return DualState(max(0.0, dual.mu + dual.gamma * g), dual.gamma)


@dataclass(frozen=True)
class SelectorConfig:
    """Knobs of the selection loop.

    gamma defaults to iterations ** -0.25 (shrinking with the step budget);
    bandwidth defaults to the median pairwise feature distance of the pool,
    resolved when the selector first runs.
    """

    samples_per_slot: int = 32        # K: selections per time slot
    iterations: int = 20              # M: primal-dual steps per selection
    alpha: float = 0.5                # primal step size, feature-space units
    gamma: float | None = None        # dual step size
    window_size: int = 5              # snapshots in the local-loss average
    zeta: float = 5.0                 # allowed smoothed repeat count
    bandwidth: float | None = None    # kernel width of the count field
    init_policy: str = "uniform_random"
    count_reset: str = "never"
    decay_rho: float = 0.9

    def __post_init__(self):
        if self.samples_per_slot < 1 or self.iterations < 1 or self.window_size < 1:
            raise SelectorError("K, M, and window_size must all be >= 1")
        if self.alpha <= 0:
            raise SelectorError(f"alpha must be > 0, got {self.alpha}")
        if self.gamma is not None and self.gamma <= 0:
            raise SelectorError(f"gamma must be > 0, got {self.gamma}")
        if self.zeta < 0:
            raise SelectorError(f"zeta must be >= 0, got {self.zeta}")
        if self.bandwidth is not None and self.bandwidth <= 0:
            raise SelectorError(f"bandwidth must be > 0, got {self.bandwidth}")
        if self.init_policy not in INIT_POLICIES:
            raise SelectorError(f"unknown init policy {self.init_policy!r}")
        if self.count_reset not in RESET_POLICIES:
            raise SelectorError(f"unknown count reset policy {self.count_reset!r}")

    def resolved_gamma(self) -> float:
        if self.gamma is not None:
            return self.gamma
        return float(self.iterations) ** -0.25


@dataclass(frozen=True)
class TraceRow:
    """State observed at one iteration, before that iteration's dual update."""

    iteration: int
    sample_id: int
    features: np.ndarray
    mu: float
    grad_local: np.ndarray
    g: float
    grad_g: np.ndarray


@dataclass
class SelectorTrace:
    rows: list[TraceRow]
    expected_iterations: int
    selected_id: int
    mu_final: float

    def require_complete(self) -> None:
        if len(self.rows) != self.expected_iterations:
            raise SelectorError(
                f"trace has {len(self.rows)} rows, expected {self.expected_iterations}"
            )


def local_loss(window: SnapshotWindow, sample: LabeledSample) -> float:
    """Mean cross-entropy of the sample under all held snapshots."""
    if len(window) == 0:
        raise SelectorError("cannot evaluate local loss before warm-up")
    ev = WindowEvaluator(window.snapshots())
    return ev.mean_loss(sample.features, sample.observed_label)


def local_loss_grad(window: SnapshotWindow, sample: LabeledSample) -> np.ndarray:
    """Gradient of the local loss w.r.t. the sample's features."""
    if len(window) == 0:
        raise SelectorError("cannot evaluate local loss before warm-up")
    ev = WindowEvaluator(window.snapshots())
    return ev.mean_grad(sample.features, sample.observed_label)


def count_field(
    counts: SelectionCounts, point: np.ndarray, pool
) -> tuple[float, np.ndarray]:
    """Smoothed selection count at `point` and its analytic gradient.

    p(x) = sum over counted samples s of c(s) * exp(-|x - s|^2 / (2 h^2)).
    """
    feats, norms, cvec = counts._field_arrays(pool)
    if cvec.size == 0:
        return 0.0, np.zeros(point.shape[0])
    h2 = counts.bandwidth * counts.bandwidth
    q = norms - 2.0 * (feats @ point) + float(point @ point)
    np.maximum(q, 0.0, out=q)
    w = cvec * np.exp(-q / (2.0 * h2))
    p = float(w.sum())
    grad = ((w @ feats) - p * point) / h2
    return p, grad


def constraint(
    counts: SelectionCounts, point: np.ndarray, pool
) -> tuple[float, np.ndarray]:
    """g(x) = smoothed count - zeta, with gradient equal to the field's."""
    p, grad = count_field(counts, point, pool)
    return p - counts.zeta, grad


def nearest_index(pool, point: np.ndarray) -> int:
    """Index of the pool sample nearest to `point`; exact ties -> smallest id.

    Distances are compared through |s|^2 - 2 s.x (the |x|^2 term is common).
    Pools beyond _PREFILTER_MIN_POOL are prefiltered in float32; candidates
    within a margin that dominates the worst-case float32 rounding are then
    re-ranked exactly in float64, so the result matches a full double scan.
    """
    n = len(pool)
    if n == 0:
        raise SelectorError("cannot project onto an empty pool")
    feats = pool.features
    norms = pool.norms_sq
    if n <= _PREFILTER_MIN_POOL:
        d2 = norms - 2.0 * (feats @ point)
        best = d2.min()
        cand = np.flatnonzero(d2 == best)
    else:
        f32, n32 = pool.features_f32()
        d32 = n32 - 2.0 * (f32 @ point.astype(np.float32))
        x_sq = float(point @ point)
        margin = 2e-4 * (2.0 * float(norms.max()) + x_sq + 1.0)
        rough = np.flatnonzero(d32 <= d32.min() + margin)
        d2 = norms[rough] - 2.0 * (feats[rough] @ point)
        best = d2.min()
        cand = rough[np.flatnonzero(d2 == best)]
    if cand.size == 1:
        return int(cand[0])
    return int(cand[np.argmin(pool.ids[cand])])


def project(point: np.ndarray, pool) -> LabeledSample:
    """Map a continuous iterate back onto the pool (nearest sample)."""
    return pool[nearest_index(pool, point)]


def primal_step(
    iterate: LabeledSample,
    mu_next: float,
    window: SnapshotWindow,
    counts: SelectionCounts,
    pool,
    alpha: float,
) -> LabeledSample:
    """One projected gradient step on the local Lagrangian.

    The descent direction combines the local-loss gradient with mu_next
    times the constraint gradient, both evaluated at the current iterate.
    """
    if alpha <= 0:
        raise SelectorError(f"alpha must be > 0, got {alpha}")
    gl = local_loss_grad(window, iterate)
    _, gg = constraint(counts, iterate.features, pool)
    target = iterate.features - alpha * (gl + mu_next * gg)
    return project(target, pool)


def _initial_sample(pool, evaluator, config, rng) -> LabeledSample:
    if config.init_policy == "uniform_random":
        return pool[int(rng.integers(len(pool)))]
    # lowest_recent_loss: argmin loss under the newest snapshot, ties by id
    newest_losses = losses(evaluator.newest_params, pool.features, pool.observed)
    order = np.lexsort((pool.ids, newest_losses))
    return pool[int(order[0])]


def select_one(
    pool,
    window: SnapshotWindow,
    counts: SelectionCounts,
    config: SelectorConfig,
    rng: np.random.Generator,
    _evaluator: WindowEvaluator | None = None,
) -> tuple[LabeledSample, SelectorTrace]:
    """Run M primal-dual iterations and return the final iterate plus trace.

    The multiplier starts at zero for every selection: each call is its own
    constrained problem and should not inherit another trajectory's dual
    state.  Each iteration records (mu_i, grad_L, g, grad_g) at the current
    iterate, then updates mu and takes the projected step with the fresh
    multiplier.
    """
    if len(pool) == 0:
        raise SelectorError("cannot select from an empty pool")
    if len(window) == 0:
        raise SelectorError("cannot select before warm-up fills the window")
    ev = _evaluator
    if ev is None:
        ev = WindowEvaluator(window.snapshots())
        ev.newest_params = window.newest()
    current = _initial_sample(pool, ev, config, rng)
    gamma = config.resolved_gamma()
    alpha = config.alpha
    mu = 0.0
    rows: list[TraceRow] = []
    for i in range(1, config.iterations + 1):
        x = current.features
        gl = ev.mean_grad(x, current.observed_label)
        g, gg = constraint(counts, x, pool)
        rows.append(TraceRow(i, current.id, x.copy(), mu, gl, g, gg))
        mu = max(0.0, mu + gamma * g)
        target = x - alpha * (gl + mu * gg)
        current = pool[nearest_index(pool, target)]
    return current, SelectorTrace(rows, config.iterations, current.id, mu)


def select_set(
    pool,
    window: SnapshotWindow,
    counts: SelectionCounts,
    config: SelectorConfig,
    rng: np.random.Generator,
) -> tuple[list[LabeledSample], list[SelectorTrace]]:
    """Select K samples sequentially, tallying each final choice.

    Only the sample returned by each completed selection increments its
    tally, so later selections in the slot feel the pressure of earlier
    ones.  Repeats are possible up to the soft limit the constraint implies.
    """
    ev = WindowEvaluator(window.snapshots()) if len(window) else None
    if ev is not None:
        ev.newest_params = window.newest()
    picks: list[LabeledSample] = []
    traces: list[SelectorTrace] = []
    for _ in range(config.samples_per_slot):
        chosen, trace = select_one(pool, window, counts, config, rng, _evaluator=ev)
        counts.record_selection(chosen.id)
        picks.append(chosen)
        traces.append(trace)
    return picks, traces


def local_regret(trace: SelectorTrace) -> float:
    """Sum of squared local-loss gradient norms along the trajectory."""
    trace.require_complete()
    return float(sum(float(r.grad_local @ r.grad_local) for r in trace.rows))


def lagrangian_regret(trace: SelectorTrace) -> float:
    """Norm of the summed stationarity residuals H_i = grad_L + mu_i * grad_g."""
    trace.require_complete()
    total = np.zeros_like(trace.rows[0].grad_local)
    for r in trace.rows:
        total += r.grad_local + r.mu * r.grad_g
    return float(np.linalg.norm(total))


@dataclass(frozen=True)
class AuditResult:
    """Mean Lagrangian regret per iteration budget, with a log-log slope fit."""

    rows: tuple[tuple[int, float, float], ...]  # (M, mean_RL, stderr)
    slope: float | None
    flat: bool
    g_max: float  # empirical bound on |g| seen during the audit


def regret_audit(
    pool,
    window: SnapshotWindow,
    counts_template: SelectionCounts,
    config_base: SelectorConfig,
    m_grid: list[int],
    trials: int,
    rng: np.random.Generator,
) -> AuditResult:
    """Measure how the Lagrangian regret grows with the iteration budget.

    For each M in the grid the dual step size is set to M ** -0.25, `trials`
    independent selections run from fresh copies of the tally template, and
    the mean regret is recorded.  The fitted slope of log(mean) vs log(M)
    should stay well below 1 if the regret is sublinear; a degenerate
    all-zero-gradient setup is reported as flat instead of fitted.
    """
    if len(m_grid) < 4:
        raise SelectorError(f"m_grid needs >= 4 points, got {len(m_grid)}")
    if any(b <= a for a, b in zip(m_grid, m_grid[1:])):
        raise SelectorError("m_grid must be strictly increasing")
    if any(m < 1 for m in m_grid):
        raise SelectorError("m_grid entries must be >= 1")
    if trials < 10:
        raise SelectorError(f"need >= 10 trials, got {trials}")
    rows = []
    g_max = 0.0
    for m in m_grid:
        cfg = replace(config_base, iterations=int(m), gamma=None)
        vals = np.empty(trials)
        for trial in range(trials):
            counts = counts_template.copy()
            _, trace = select_one(pool, window, counts, cfg, rng)
            vals[trial] = lagrangian_regret(trace)
            g_max = max(g_max, max(abs(r.g) for r in trace.rows))
        mean = float(vals.mean())
        stderr = float(vals.std(ddof=1) / math.sqrt(trials))
        rows.append((int(m), mean, stderr))
    flat = all(mean <= 1e-9 for _, mean, _ in rows)
    if flat:
        slope = None
    else:
        logs_m = np.log([m for m, _, _ in rows])
        logs_r = np.log([max(mean, 1e-300) for _, mean, _ in rows])
        slope = float(np.polyfit(logs_m, logs_r, 1)[0])
    return AuditResult(tuple(rows), slope, flat, g_max)


def median_pairwise_bandwidth(pool, max_samples: int = 256) -> float:
    """Median pairwise feature distance over a deterministic pool subsample."""
    from scipy.spatial.distance import pdist

    n = len(pool)
    if n < 2:
        return 1.0
    take = min(n, max_samples)
    idx = np.unique(np.linspace(0, n - 1, take).astype(int))
    dists = pdist(np.asarray(pool.features[idx]))
    med = float(np.median(dists)) if dists.size else 0.0
    return med if med > 0 else 1.0


def traces_to_csv(traces, fh) -> None:
    """Write selection traces in the audit-tooling CSV layout."""
    fh.write("# schema=1\n")
    fh.write("selection_index,iteration,sample_id,mu,grad_norm,g_value\n")
    for k, trace in enumerate(traces):
        for r in trace.rows:
            grad_norm = float(np.linalg.norm(r.grad_local))
            fh.write(
                f"{k},{r.iteration},{r.sample_id},{r.mu!r},{grad_norm!r},{r.g!r}\n"
            )
