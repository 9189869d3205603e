"""Experiment configuration: a strict, diffable YAML schema.

A config file fully describes a run: dataset source, noise schedule, model,
the selectors to compare, selector knobs, loop sizes, and seeds.  Parsing is
strict -- misspelled or unknown keys are rejected by name rather than
silently ignored -- and parse(serialize(parse(f))) == parse(f), which the
golden tests rely on.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, replace

import yaml

from . import models
from .datastream import NoiseSchedule, make_schedule
from .selector import INIT_POLICIES, RESET_POLICIES, SelectorConfig

__all__ = [
    "ConfigError",
    "DatasetSpec",
    "ModelSpec",
    "SelectorSpec",
    "TrainingSpec",
    "ExperimentConfig",
    "parse_config",
    "parse_config_text",
    "serialize_config",
]

DEFAULT_LEARNING_RATES = {"logistic_regression": 0.05, "mlp": 0.01}


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class DatasetSpec:
    kind: str = "synthetic"            # synthetic | csv
    train_size: int = 200              # synthetic only
    test_size: int = 100               # synthetic only
    path: str | None = None            # csv only
    test_path: str | None = None       # csv only
    label_column: int | None = None    # csv: None = last column
    has_header: bool = False
    samples_per_slot: int = 1


@dataclass(frozen=True)
class ModelSpec:
    architecture: str = "logistic_regression"
    hidden_width: int = 64

    def build(self, input_dim: int, num_classes: int) -> models.Architecture:
        if self.architecture == "logistic_regression":
            return models.logistic_regression(input_dim, num_classes)
        return models.mlp(input_dim, self.hidden_width, num_classes)


@dataclass(frozen=True)
class SelectorSpec:
    kind: str
    phi_hat: float | None = None

    @property
    def label(self) -> str:
        if self.kind == "itlm":
            return f"itlm({self.phi_hat:g})"
        return self.kind


@dataclass(frozen=True)
class TrainingSpec:
    slots: int = 200
    warmup_rounds: int = 50
    batch_size: int = 32
    learning_rate: float | None = None  # None: 0.05 for LR, 0.01 for MLP
    steps_per_slot: int = 1
    eval_stride: int = 50

    def resolved_learning_rate(self, architecture: str) -> float:
        if self.learning_rate is not None:
            return self.learning_rate
        return DEFAULT_LEARNING_RATES[architecture]


@dataclass(frozen=True)
class ExperimentConfig:
    dataset: DatasetSpec = field(default_factory=DatasetSpec)
    noise_segments: tuple[tuple[int, int, float], ...] = ((1, 200, 0.6),)
    num_classes: int | None = None      # None: infer from the data
    model: ModelSpec = field(default_factory=ModelSpec)
    selectors: tuple[SelectorSpec, ...] = (SelectorSpec("ogrs"), SelectorSpec("naive"))
    ogrs: SelectorConfig = field(default_factory=SelectorConfig)
    training: TrainingSpec = field(default_factory=TrainingSpec)
    compare_clean_ratios: tuple[float, ...] = ()
    seeds: tuple[int, ...] = (1,)
    output_dir: str = "out"

    def schedule(self) -> NoiseSchedule:
        return make_schedule(self.noise_segments)

    def constant_schedule(self, clean_ratio: float) -> NoiseSchedule:
        last = max(self.noise_segments[-1][1], self.training.slots)
        return make_schedule([(1, last, clean_ratio)])


# -- schema ------------------------------------------------------------

_SCHEMA = {
    "dataset": {
        "kind", "train_size", "test_size", "path", "test_path",
        "label_column", "has_header", "samples_per_slot",
    },
    "noise": {"segments", "num_classes"},
    "model": {"architecture", "hidden_width"},
    "selectors": None,   # list; validated element-wise
    "ogrs": {
        "iterations", "alpha", "gamma", "window_size", "zeta", "bandwidth",
        "init_policy", "count_reset", "decay_rho",
    },
    "training": {
        "slots", "warmup_rounds", "batch_size", "learning_rate",
        "steps_per_slot", "eval_stride",
    },
    "compare": {"clean_ratios"},
    "seeds": None,
    "output_dir": None,
}

_SELECTOR_KEYS = {"kind", "phi_hat"}
_SELECTOR_KINDS = ("ogrs", "itlm", "naive", "oracle")


def _require(condition: bool, message: str) -> None:
    if not condition:
        raise ConfigError(message)


def _check_keys(section: dict, allowed: set, path: str) -> None:
    for key in section:
        if key not in allowed:
            raise ConfigError(f"unknown key {path}.{key!r}")


def _get(section: dict, key: str, default):
    value = section.get(key, default)
    return default if value is None and default is not None else value


def parse_config_text(text: str) -> ExperimentConfig:
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        line = f" at line {mark.line + 1}" if mark is not None else ""
        raise ConfigError(f"YAML parse error{line}: {exc}") from exc
    if raw is None:
        raw = {}
    _require(isinstance(raw, dict), "config root must be a mapping")
    _check_keys(raw, set(_SCHEMA), "config")

    ds_raw = raw.get("dataset", {}) or {}
    _check_keys(ds_raw, _SCHEMA["dataset"], "dataset")
    dataset = DatasetSpec(
        kind=ds_raw.get("kind", "synthetic"),
        train_size=int(ds_raw.get("train_size", 200)),
        test_size=int(ds_raw.get("test_size", 100)),
        path=ds_raw.get("path"),
        test_path=ds_raw.get("test_path"),
        label_column=ds_raw.get("label_column"),
        has_header=bool(ds_raw.get("has_header", False)),
        samples_per_slot=int(ds_raw.get("samples_per_slot", 1)),
    )
    _require(dataset.kind in ("synthetic", "csv"),
             f"dataset.kind must be synthetic or csv, got {dataset.kind!r}")
    if dataset.kind == "csv":
        _require(dataset.path is not None, "dataset.path is required for csv datasets")
    else:
        _require(dataset.train_size >= 2, "dataset.train_size must be >= 2")
        _require(dataset.test_size >= 1, "dataset.test_size must be >= 1")
    _require(dataset.samples_per_slot >= 1, "dataset.samples_per_slot must be >= 1")

    noise_raw = raw.get("noise", {}) or {}
    _check_keys(noise_raw, _SCHEMA["noise"], "noise")
    segments_raw = noise_raw.get("segments", [[1, 200, 0.6]])
    _require(isinstance(segments_raw, list) and segments_raw,
             "noise.segments must be a nonempty list")
    segments = []
    for i, seg in enumerate(segments_raw):
        _require(isinstance(seg, (list, tuple)) and len(seg) == 3,
                 f"noise.segments[{i}] must be [start, end, clean_ratio]")
        segments.append((int(seg[0]), int(seg[1]), float(seg[2])))
        _require(0.0 <= segments[-1][2] <= 1.0,
                 f"noise.segments[{i}] clean_ratio {segments[-1][2]} outside [0, 1]")
    num_classes = noise_raw.get("num_classes")
    if num_classes is not None:
        num_classes = int(num_classes)
        _require(num_classes >= 2, "noise.num_classes must be >= 2")

    model_raw = raw.get("model", {}) or {}
    _check_keys(model_raw, _SCHEMA["model"], "model")
    model = ModelSpec(
        architecture=model_raw.get("architecture", "logistic_regression"),
        hidden_width=int(model_raw.get("hidden_width", 64)),
    )
    _require(model.architecture in ("logistic_regression", "mlp"),
             f"model.architecture must be logistic_regression or mlp, "
             f"got {model.architecture!r}")
    _require(model.hidden_width >= 1, "model.hidden_width must be >= 1")

    selectors_raw = raw.get(
        "selectors", [{"kind": "ogrs"}, {"kind": "naive"}]
    )
    _require(isinstance(selectors_raw, list) and selectors_raw,
             "selectors must be a nonempty list")
    selectors = []
    for i, entry in enumerate(selectors_raw):
        _require(isinstance(entry, dict), f"selectors[{i}] must be a mapping")
        _check_keys(entry, _SELECTOR_KEYS, f"selectors[{i}]")
        kind = entry.get("kind")
        _require(kind in _SELECTOR_KINDS,
                 f"selectors[{i}].kind must be one of {_SELECTOR_KINDS}, got {kind!r}")
        phi_hat = entry.get("phi_hat")
        if kind == "itlm":
            _require(phi_hat is not None, f"selectors[{i}].phi_hat is required for itlm")
            phi_hat = float(phi_hat)
            _require(0.0 <= phi_hat <= 1.0,
                     f"selectors[{i}].phi_hat must be in [0, 1], got {phi_hat}")
        else:
            _require(phi_hat is None, f"selectors[{i}].phi_hat only applies to itlm")
        selectors.append(SelectorSpec(kind=kind, phi_hat=phi_hat))
    labels = [s.label for s in selectors]
    _require(len(labels) == len(set(labels)), "selectors contain duplicates")

    ogrs_raw = raw.get("ogrs", {}) or {}
    _check_keys(ogrs_raw, _SCHEMA["ogrs"], "ogrs")
    training_raw = raw.get("training", {}) or {}
    _check_keys(training_raw, _SCHEMA["training"], "training")
    training = TrainingSpec(
        slots=int(training_raw.get("slots", 200)),
        warmup_rounds=int(training_raw.get("warmup_rounds", 50)),
        batch_size=int(training_raw.get("batch_size", 32)),
        learning_rate=(
            float(training_raw["learning_rate"])
            if training_raw.get("learning_rate") is not None
            else None
        ),
        steps_per_slot=int(training_raw.get("steps_per_slot", 1)),
        eval_stride=int(training_raw.get("eval_stride", 50)),
    )
    _require(training.slots >= 1, "training.slots must be >= 1")
    _require(training.warmup_rounds >= 1, "training.warmup_rounds must be >= 1")
    _require(training.warmup_rounds <= training.slots,
             "training.warmup_rounds cannot exceed training.slots")
    _require(training.batch_size >= 1, "training.batch_size must be >= 1")
    if training.learning_rate is not None:
        _require(training.learning_rate > 0, "training.learning_rate must be > 0")

    try:
        ogrs = SelectorConfig(
            samples_per_slot=training.batch_size,
            iterations=int(ogrs_raw.get("iterations", 20)),
            alpha=float(ogrs_raw.get("alpha", 0.5)),
            gamma=(float(ogrs_raw["gamma"])
                   if ogrs_raw.get("gamma") is not None else None),
            window_size=int(ogrs_raw.get("window_size", 5)),
            zeta=float(ogrs_raw.get("zeta", 5.0)),
            bandwidth=(float(ogrs_raw["bandwidth"])
                       if ogrs_raw.get("bandwidth") is not None else None),
            init_policy=ogrs_raw.get("init_policy", "uniform_random"),
            count_reset=ogrs_raw.get("count_reset", "never"),
            decay_rho=float(ogrs_raw.get("decay_rho", 0.9)),
        )
    except ValueError as exc:
        raise ConfigError(f"ogrs: {exc}") from exc

    compare_raw = raw.get("compare", {}) or {}
    _check_keys(compare_raw, _SCHEMA["compare"], "compare")
    ratios = compare_raw.get("clean_ratios", []) or []
    ratios = tuple(float(r) for r in ratios)
    for r in ratios:
        _require(0.0 <= r <= 1.0, f"compare.clean_ratios entry {r} outside [0, 1]")

    seeds_raw = raw.get("seeds", [1])
    _require(isinstance(seeds_raw, list) and seeds_raw, "seeds must be a nonempty list")
    seeds = tuple(int(s) for s in seeds_raw)

    output_dir = raw.get("output_dir", "out")
    _require(isinstance(output_dir, str) and output_dir, "output_dir must be a string")

    cfg = ExperimentConfig(
        dataset=dataset,
        noise_segments=tuple(segments),
        num_classes=num_classes,
        model=model,
        selectors=tuple(selectors),
        ogrs=ogrs,
        training=training,
        compare_clean_ratios=ratios,
        seeds=seeds,
        output_dir=output_dir,
    )
    try:
        make_schedule(cfg.noise_segments)  # surfaces gap/overlap errors now
    except ValueError as exc:
        raise ConfigError(f"noise.segments: {exc}") from exc
    return cfg


def parse_config(path) -> ExperimentConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_config_text(text)


def serialize_config(cfg: ExperimentConfig) -> str:
    """Canonical YAML with every field explicit (round-trips through parse)."""
    doc = {
        "dataset": asdict(cfg.dataset),
        "noise": {
            "segments": [list(seg) for seg in cfg.noise_segments],
            "num_classes": cfg.num_classes,
        },
        "model": asdict(cfg.model),
        "selectors": [
            {"kind": s.kind, **({"phi_hat": s.phi_hat} if s.kind == "itlm" else {})}
            for s in cfg.selectors
        ],
        "ogrs": {
            "iterations": cfg.ogrs.iterations,
            "alpha": cfg.ogrs.alpha,
            "gamma": cfg.ogrs.gamma,
            "window_size": cfg.ogrs.window_size,
            "zeta": cfg.ogrs.zeta,
            "bandwidth": cfg.ogrs.bandwidth,
            "init_policy": cfg.ogrs.init_policy,
            "count_reset": cfg.ogrs.count_reset,
            "decay_rho": cfg.ogrs.decay_rho,
        },
        "training": asdict(cfg.training),
        "compare": {"clean_ratios": list(cfg.compare_clean_ratios)},
        "seeds": list(cfg.seeds),
        "output_dir": cfg.output_dir,
    }
    return yaml.safe_dump(doc, sort_keys=True, default_flow_style=None)


def with_overrides(
    cfg: ExperimentConfig,
    seeds: tuple[int, ...] | None = None,
    output_dir: str | None = None,
) -> ExperimentConfig:
    if seeds is not None:
        cfg = replace(cfg, seeds=tuple(seeds))
    if output_dir is not None:
        cfg = replace(cfg, output_dir=output_dir)
    return cfg
