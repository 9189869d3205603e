"""Experiment orchestration: seeded multi-method runs, tables, and audits.

Runs fan out across worker processes (capped by OGRS_LAB_THREADS); each
worker streams its own trace CSV and returns summary numbers, while the
parent process alone writes the shared artifacts (summary, charts, tables,
manifest), so no file ever has two writers.  Worker numerics are pinned to
single-threaded BLAS, which keeps outputs byte-identical regardless of the
fan-out width.
"""

from __future__ import annotations

import json
import os
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from . import datastream, models, selector as sel, trainer
from .config import ExperimentConfig
from .svgchart import line_chart
from .trainer import METRICS_COLUMNS, MetricsRow, RunSpec

__all__ = [
    "HarnessError",
    "RunTask",
    "RunResult",
    "ComparisonCell",
    "ComparisonTable",
    "run_experiment",
    "compare",
    "regret_audit_cmd",
    "build_pools",
    "build_run_spec",
]

SCHEMA_LINE = "# schema=1"
NA_MARGIN = 0.02  # a run counts as converged if final accuracy > 1/C + this


class HarnessError(RuntimeError):
    pass


# -- data materialization ----------------------------------------------

_CSV_CACHE: dict[tuple, datastream.StreamPool] = {}


def _data_seed(seed: int, tag: str) -> int:
    import zlib

    return int(
        np.random.SeedSequence([seed, zlib.crc32(tag.encode())]).generate_state(1)[0]
    )


def _load_csv_cached(path, label_column, has_header, samples_per_slot):
    key = (str(path), label_column, has_header, samples_per_slot)
    if key not in _CSV_CACHE:
        _CSV_CACHE[key] = datastream.load_csv(
            path,
            label_column=label_column,
            has_header=has_header,
            samples_per_slot=samples_per_slot,
        )
    return _CSV_CACHE[key]


def build_pools(
    cfg: ExperimentConfig, seed: int, clean_ratio: float | None = None
) -> tuple[datastream.StreamPool, datastream.StreamPool, int]:
    """Materialize (noisy train pool, clean test pool, num_classes).

    The data and noise draws depend only on the seed, never on the selector,
    so every method in a comparison sees the identical stream.
    """
    ds = cfg.dataset
    if ds.kind == "synthetic":
        full = datastream.generate_gaussian_mixture(
            ds.train_size + ds.test_size, _data_seed(seed, "data")
        )
        train, test = datastream.split_pool(full, ds.train_size)
    else:
        if ds.test_path is None:
            raise HarnessError("csv datasets need dataset.test_path")
        train = _load_csv_cached(
            ds.path, ds.label_column, ds.has_header, ds.samples_per_slot
        )
        test = _load_csv_cached(ds.test_path, ds.label_column, ds.has_header, 1)
    num_classes = cfg.num_classes or max(train.num_classes, test.num_classes)
    if clean_ratio is None:
        schedule = cfg.schedule()
    else:
        schedule = datastream.make_schedule([(1, train.max_slot, clean_ratio)])
    train = datastream.inject_label_noise(
        train, schedule, num_classes, _data_seed(seed, "noise")
    )
    return train, test, num_classes


def build_run_spec(
    cfg: ExperimentConfig,
    selector_spec,
    seed: int,
    clean_ratio: float | None = None,
) -> RunSpec:
    train, test, num_classes = build_pools(cfg, seed, clean_ratio)
    arch = cfg.model.build(train.dimension, num_classes)
    return RunSpec(
        train_pool=train,
        test_pool=test,
        arch=arch,
        selector_kind=selector_spec.kind,
        phi_hat=selector_spec.phi_hat,
        selector_config=cfg.ogrs,
        slots=cfg.training.slots,
        warmup_rounds=cfg.training.warmup_rounds,
        batch_size=cfg.training.batch_size,
        learning_rate=cfg.training.resolved_learning_rate(cfg.model.architecture),
        steps_per_slot=cfg.training.steps_per_slot,
        eval_stride=cfg.training.eval_stride,
        seed=seed,
        label=selector_spec.label,
    )


# -- worker protocol ---------------------------------------------------


@dataclass(frozen=True)
class RunTask:
    cfg: ExperimentConfig
    selector_index: int
    seed: int
    clean_ratio: float | None
    trace_path: str


@dataclass(frozen=True)
class RunResult:
    selector_label: str
    seed: int
    clean_ratio: float | None
    trace_path: str
    final_accuracy: float | None
    mean_accuracy: float | None
    num_classes: int | None
    eval_points: tuple[tuple[int, float], ...]
    pool_hash: str | None
    error: str | None


class _TraceSink:
    """Streams metric rows to CSV, flushing at every evaluation slot."""

    def __init__(self, path: str, eval_stride: int, total_slots: int):
        self._fh = open(path, "w", encoding="utf-8")
        self._fh.write(SCHEMA_LINE + "\n")
        self._fh.write(",".join(METRICS_COLUMNS) + "\n")
        self._stride = eval_stride
        self._total = total_slots

    def __call__(self, row: MetricsRow) -> None:
        self._fh.write(row.as_csv() + "\n")
        if row.slot == 1 or row.slot == self._total or row.slot % self._stride == 0:
            self._fh.flush()

    def close(self) -> None:
        self._fh.close()


def _execute_task(task: RunTask) -> RunResult:
    label = task.cfg.selectors[task.selector_index].label
    try:
        with threadpool_limits(limits=1):
            spec = build_run_spec(
                task.cfg,
                task.cfg.selectors[task.selector_index],
                task.seed,
                task.clean_ratio,
            )
            sink = _TraceSink(
                task.trace_path, spec.eval_stride, spec.slots
            )
            try:
                rows = trainer.run(spec, row_sink=sink)
            finally:
                sink.close()
        evals = tuple(
            (r.slot, r.test_accuracy)
            for r in rows
            if r.slot == 1 or r.slot == spec.slots or r.slot % spec.eval_stride == 0
        )
        accs = [r.test_accuracy for r in rows]
        return RunResult(
            selector_label=label,
            seed=task.seed,
            clean_ratio=task.clean_ratio,
            trace_path=task.trace_path,
            final_accuracy=rows[-1].test_accuracy if rows else None,
            mean_accuracy=float(np.mean(accs)) if accs else None,
            num_classes=spec.train_pool.num_classes,
            eval_points=evals,
            pool_hash=spec.train_pool.content_hash(),
            error=None,
        )
    except Exception:
        return RunResult(
            selector_label=label,
            seed=task.seed,
            clean_ratio=task.clean_ratio,
            trace_path=task.trace_path,
            final_accuracy=None,
            mean_accuracy=None,
            num_classes=None,
            eval_points=(),
            pool_hash=None,
            error=traceback.format_exc(),
        )


def _worker_count(n_tasks: int) -> int:
    env = os.environ.get("OGRS_LAB_THREADS")
    if env:
        workers = max(1, int(env))
    else:
        workers = os.cpu_count() or 1
    return max(1, min(workers, n_tasks))


def _execute_all(tasks: list[RunTask]) -> list[RunResult]:
    workers = _worker_count(len(tasks))
    if workers == 1:
        return [_execute_task(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_execute_task, tasks))


def _safe_name(label: str) -> str:
    return (
        label.replace("(", "-").replace(")", "").replace("=", "-").replace(",", "_")
    )


def _write_manifest(out_dir: Path, command: str, files: list[str], failures) -> Path:
    manifest = {
        "schema": 1,
        "command": command,
        "files": sorted(files),
        "failed": bool(failures),
        "failures": failures,
    }
    path = out_dir / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


# -- run command --------------------------------------------------------


def run_experiment(cfg: ExperimentConfig, out_dir: str | None = None) -> dict:
    """Run every (selector x seed) pair; write traces, summary, and chart.

    Returns the summary dict.  Raises HarnessError after writing a failure
    manifest if any run errored (partial outputs are kept).
    """
    out = Path(out_dir or cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    tasks = [
        RunTask(
            cfg=cfg,
            selector_index=i,
            seed=seed,
            clean_ratio=None,
            trace_path=str(out / f"trace_{_safe_name(spec.label)}_{seed}.csv"),
        )
        for i, spec in enumerate(cfg.selectors)
        for seed in cfg.seeds
    ]
    results = _execute_all(tasks)
    failures = [
        {"selector": r.selector_label, "seed": r.seed, "error": r.error}
        for r in results
        if r.error
    ]
    files = [str(Path(r.trace_path).name) for r in results if Path(r.trace_path).exists()]

    summary: dict = {"schema": 1, "selectors": {}}
    ok = [r for r in results if not r.error]
    for spec in cfg.selectors:
        mine = [r for r in ok if r.selector_label == spec.label]
        if not mine:
            continue
        finals = [r.final_accuracy for r in mine]
        summary["selectors"][spec.label] = {
            "final_accuracy_mean": float(np.mean(finals)),
            "final_accuracy_std": float(np.std(finals)),
            "mean_accuracy_mean": float(np.mean([r.mean_accuracy for r in mine])),
            "per_seed": {
                str(r.seed): {
                    "final_accuracy": r.final_accuracy,
                    "mean_accuracy": r.mean_accuracy,
                }
                for r in mine
            },
        }
    summary_path = out / "summary.json"
    summary_path.write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    files.append(summary_path.name)

    if ok:
        series = []
        for spec in cfg.selectors:
            mine = [r for r in ok if r.selector_label == spec.label]
            if not mine:
                continue
            slots = [p[0] for p in mine[0].eval_points]
            accs = np.mean(
                [[p[1] for p in r.eval_points] for r in mine], axis=0
            )
            series.append((spec.label, slots, list(accs)))
        chart_path = out / "accuracy.svg"
        chart_path.write_text(
            line_chart(series, "Test accuracy over time slots", "slot", "accuracy")
        )
        files.append(chart_path.name)

    _write_manifest(out, "run", files + ["manifest.json"], failures)
    if failures:
        raise HarnessError(
            f"{len(failures)} run(s) failed; see manifest.json in {out}"
        )
    return summary


# -- compare command ----------------------------------------------------


@dataclass(frozen=True)
class ComparisonCell:
    mean: float | None
    std: float | None
    available: bool
    best: bool

    def text(self) -> str:
        if not self.available:
            return "N/A"
        star = "*" if self.best else ""
        return f"{self.mean:.4f}±{self.std:.4f}{star}"


@dataclass(frozen=True)
class ComparisonTable:
    columns: tuple[str, ...]
    selectors: tuple[str, ...]
    cells: tuple[tuple[ComparisonCell, ...], ...]  # [row][col]

    def cell(self, selector: str, column: str) -> ComparisonCell:
        return self.cells[self.selectors.index(selector)][self.columns.index(column)]

    def to_csv(self) -> str:
        lines = [SCHEMA_LINE, "selector," + ",".join(self.columns)]
        for label, row in zip(self.selectors, self.cells):
            lines.append(label + "," + ",".join(c.text() for c in row))
        return "\n".join(lines) + "\n"


def compare(cfg: ExperimentConfig, out_dir: str | None = None) -> ComparisonTable:
    """Cross selectors with the configured clean ratios on paired seeds.

    Cells hold mean +/- std of final accuracy over the seeds; a cell whose
    mean does not beat chance level 1/C by more than 0.02 is reported N/A,
    and the best available cell per column is flagged.
    """
    if len(cfg.selectors) < 2:
        raise HarnessError("compare needs at least 2 selectors")
    out = Path(out_dir or cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    ratios: list[float | None] = list(cfg.compare_clean_ratios) or [None]
    columns = tuple(
        f"phi={r:g}" if r is not None else "schedule" for r in ratios
    )
    tasks = []
    for r, col in zip(ratios, columns):
        for i, spec in enumerate(cfg.selectors):
            for seed in cfg.seeds:
                name = f"trace_{_safe_name(col)}_{_safe_name(spec.label)}_{seed}.csv"
                tasks.append(
                    RunTask(
                        cfg=cfg,
                        selector_index=i,
                        seed=seed,
                        clean_ratio=r,
                        trace_path=str(out / name),
                    )
                )
    results = _execute_all(tasks)
    failures = [
        {
            "selector": r.selector_label,
            "seed": r.seed,
            "clean_ratio": r.clean_ratio,
            "error": r.error,
        }
        for r in results
        if r.error
    ]
    files = [str(Path(r.trace_path).name) for r in results if Path(r.trace_path).exists()]
    if failures:
        _write_manifest(out, "compare", files + ["manifest.json"], failures)
        raise HarnessError(
            f"{len(failures)} run(s) failed; see manifest.json in {out}"
        )

    num_classes = next(r.num_classes for r in results if r.num_classes)
    chance_bar = 1.0 / num_classes + NA_MARGIN
    grid: list[list[ComparisonCell]] = []
    for spec in cfg.selectors:
        row = []
        for r, col in zip(ratios, columns):
            mine = [
                x
                for x in results
                if x.selector_label == spec.label and x.clean_ratio == r
            ]
            finals = np.array([x.final_accuracy for x in mine])
            mean = float(finals.mean())
            std = float(finals.std())
            row.append(ComparisonCell(mean, std, mean >= chance_bar, False))
        grid.append(row)
    # flag the best available cell per column
    for j in range(len(columns)):
        candidates = [
            (grid[i][j].mean, i) for i in range(len(grid)) if grid[i][j].available
        ]
        if candidates:
            _, best_i = max(candidates)
            grid[best_i][j] = replace(grid[best_i][j], best=True)

    table = ComparisonTable(
        columns=columns,
        selectors=tuple(s.label for s in cfg.selectors),
        cells=tuple(tuple(row) for row in grid),
    )
    csv_path = out / "comparison.csv"
    csv_path.write_text(table.to_csv())
    json_path = out / "comparison.json"
    json_path.write_text(
        json.dumps(
            {
                "schema": 1,
                "columns": list(table.columns),
                "rows": {
                    label: [
                        {
                            "mean": c.mean,
                            "std": c.std,
                            "available": c.available,
                            "best": c.best,
                        }
                        for c in row
                    ]
                    for label, row in zip(table.selectors, table.cells)
                },
            },
            indent=2,
            sort_keys=True,
        )
        + "\n"
    )
    files += [csv_path.name, json_path.name]
    _write_manifest(out, "compare", files + ["manifest.json"], failures)
    return table


# -- audit command -------------------------------------------------------


@dataclass(frozen=True)
class AuditOutcome:
    result: sel.AuditResult
    slope_max: float

    @property
    def passed(self) -> bool:
        return self.result.flat or (
            self.result.slope is not None and self.result.slope <= self.slope_max
        )


DEFAULT_M_GRID = (8, 16, 32, 64, 128, 256)


def regret_audit_cmd(
    cfg: ExperimentConfig,
    m_grid=DEFAULT_M_GRID,
    trials: int = 30,
    slope_max: float = 0.75,
    out_dir: str | None = None,
    warm_selection_slots: int = 1,
) -> AuditOutcome:
    """Audit how the Lagrangian regret scales with the iteration budget M.

    Builds the configured dataset, trains through the config's full slot
    budget with the first configured selector (the interesting regime: an
    untrained model has no low-gradient region for the selection to settle
    in), engages the selector for warm_selection_slots so the tally field
    carries realistic mass, then sweeps the M grid (dual step M^-0.25,
    fresh tallies per trial).
    """
    m_grid = list(m_grid)
    if len(m_grid) < 4:
        raise HarnessError(f"m_grid needs >= 4 entries, got {len(m_grid)}")
    out = Path(out_dir or cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)

    seed = cfg.seeds[0]
    base_selector = cfg.selectors[0]
    with threadpool_limits(limits=1):
        spec = build_run_spec(cfg, base_selector, seed)
        loop = trainer.OnlineTrainer(spec)
        loop.run()
        pool = datastream.pool_at(spec.train_pool, min(loop.slot, spec.train_pool.max_slot))
        bandwidth = cfg.ogrs.bandwidth or sel.median_pairwise_bandwidth(pool)
        counts = sel.SelectionCounts(
            bandwidth, cfg.ogrs.zeta, cfg.ogrs.count_reset, cfg.ogrs.decay_rho
        )
        rng = np.random.default_rng(
            np.random.SeedSequence([seed, len(m_grid), trials])
        )
        for _ in range(warm_selection_slots):
            counts.begin_slot()
            sel.select_set(pool, loop.window, counts, cfg.ogrs, rng)
        result = sel.regret_audit(
            pool, loop.window, counts, cfg.ogrs, m_grid, trials, rng
        )
        # trace sample for the audit tooling: one selection per grid point
        sample_traces = []
        for m in m_grid:
            cfg_m = replace(cfg.ogrs, iterations=int(m), gamma=None)
            _, trace = sel.select_one(pool, loop.window, counts.copy(), cfg_m, rng)
            sample_traces.append(trace)

    audit_path = out / "audit.csv"
    with open(audit_path, "w", encoding="utf-8") as fh:
        fh.write(SCHEMA_LINE + "\n")
        fh.write("M,mean_RL,stderr\n")
        for m, mean, err in result.rows:
            fh.write(f"{m},{mean!r},{err!r}\n")
    traces_path = out / "audit_traces.csv"
    with open(traces_path, "w", encoding="utf-8") as fh:
        sel.traces_to_csv(sample_traces, fh)
    summary_path = out / "audit.json"
    summary_path.write_text(
        json.dumps(
            {
                "schema": 1,
                "rows": [list(r) for r in result.rows],
                "slope": result.slope,
                "flat": result.flat,
                "g_max": result.g_max,
                "slope_max": slope_max,
                "trials": trials,
            },
            indent=2,
            sort_keys=True,
        )
        + "\n"
    )
    _write_manifest(
        out,
        "audit",
        [audit_path.name, traces_path.name, summary_path.name, "manifest.json"],
        [],
    )
    return AuditOutcome(result=result, slope_max=slope_max)
