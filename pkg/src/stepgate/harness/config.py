"""Experiment configuration: strict JSON in, fully-defaulted dataclasses out.

Every key is validated against the schema and unknown keys are rejected with
their dotted path, because a silently ignored typo ("epcohs") is the easiest
way to wreck reproducibility.  A run is a pure function of (config, seed).
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

from ..errors import ConfigError

MODES = ("standalone", "e2e", "frame_conditioned", "scsampler", "uniform", "random")
TASKS = ("single_label", "multi_label")
SELECTIONS = ("gate-count", "topk")
RECIPE_STYLES = ("anchored", "paired")


@dataclass
class DatasetConfig:
    """Either a directory holding train.sgds/test.sgds or a generation spec.

    recipe_style "anchored" gives every class a prototype of its own;
    "paired" builds each recipe from two shared prototypes only, which makes
    relevance context-dependent in a way single-frame scoring cannot resolve.
    """

    path: str | None = None
    n_train: int = 2000
    n_test: int = 500
    n_classes: int = 10
    n_shared: int = 6
    n_background: int = 8
    d_raw: int = 32
    timesteps: int = 32
    frames_per_slot: int = 16
    noise_sigma: float = 0.3
    relevant_fraction: float = 0.3
    confuser_share: float = 0.35
    task: str = "single_label"
    recipe_style: str = "anchored"


@dataclass
class ModelConfig:
    light_channels: int = 64
    heavy_channels: int = 64
    n_kernels: int = 128
    gate_hidden: int = 64
    height: int = 1
    width: int = 1
    segment_len: int = 8
    open_bias: float = 2.0


@dataclass
class TrainingConfig:
    batch_size: int = 32
    epochs: int = 30
    lr: float = 1e-3
    eps: float = 1e-4
    l0_weight: float = 0.0
    sample_budget: int | None = None  # timesteps for scorer/uniform/random arms


@dataclass
class EvalConfig:
    budgets: list = field(default_factory=list)
    selection: str = "gate-count"


@dataclass
class ExperimentConfig:
    mode: str = "e2e"
    seed: int = 0
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    training: TrainingConfig = field(default_factory=TrainingConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)

    def to_dict(self) -> dict:
        return asdict(self)

    def canonical_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))


_SCHEMA = {
    "mode": str,
    "seed": int,
    "dataset": {
        "path": (str, type(None)),
        "n_train": int, "n_test": int, "n_classes": int, "n_shared": int,
        "n_background": int, "d_raw": int, "timesteps": int,
        "frames_per_slot": int, "noise_sigma": (int, float),
        "relevant_fraction": (int, float), "confuser_share": (int, float),
        "task": str, "recipe_style": str,
    },
    "model": {
        "light_channels": int, "heavy_channels": int, "n_kernels": int,
        "gate_hidden": int, "height": int, "width": int, "segment_len": int,
        "open_bias": (int, float),
    },
    "training": {
        "batch_size": int, "epochs": int, "lr": (int, float),
        "eps": (int, float), "l0_weight": (int, float),
        "sample_budget": (int, type(None)),
    },
    "eval": {"budgets": list, "selection": str},
}


def _check_section(raw: dict, schema: dict, path: str) -> None:
    for key, val in raw.items():
        where = f"{path}.{key}" if path else key
        if key not in schema:
            known = ", ".join(sorted(schema))
            raise ConfigError(f"unknown config key {where!r}; known keys here: {known}")
        expect = schema[key]
        if isinstance(expect, dict):
            if not isinstance(val, dict):
                raise ConfigError(f"{where} must be an object, got {type(val).__name__}")
            _check_section(val, expect, where)
        else:
            # bool is an int subclass but never a valid numeric config value
            if isinstance(val, bool) and expect is not bool:
                raise ConfigError(f"{where} must not be a boolean")
            if not isinstance(val, expect):
                names = expect.__name__ if isinstance(expect, type) else \
                    "/".join(t.__name__ for t in expect)
                raise ConfigError(f"{where} must be {names}, got {type(val).__name__}")


def _validate_values(cfg: ExperimentConfig) -> None:
    if cfg.mode not in MODES:
        raise ConfigError(f"mode must be one of {MODES}, got {cfg.mode!r}")
    if cfg.seed < 0:
        raise ConfigError(f"seed must be non-negative, got {cfg.seed}")
    d = cfg.dataset
    if d.task not in TASKS:
        raise ConfigError(f"dataset.task must be one of {TASKS}, got {d.task!r}")
    if d.recipe_style not in RECIPE_STYLES:
        raise ConfigError(
            f"dataset.recipe_style must be one of {RECIPE_STYLES}, got {d.recipe_style!r}"
        )
    for name in ("n_train", "n_test", "n_classes", "d_raw", "timesteps", "frames_per_slot"):
        if getattr(d, name) < 1:
            raise ConfigError(f"dataset.{name} must be positive, got {getattr(d, name)}")
    if not 0.0 < d.relevant_fraction <= 1.0:
        raise ConfigError(f"dataset.relevant_fraction must be in (0, 1], got {d.relevant_fraction}")
    m = cfg.model
    for name in ("light_channels", "heavy_channels", "n_kernels", "gate_hidden",
                 "height", "width", "segment_len"):
        if getattr(m, name) < 1:
            raise ConfigError(f"model.{name} must be positive, got {getattr(m, name)}")
    if m.segment_len > d.frames_per_slot:
        raise ConfigError(
            f"model.segment_len {m.segment_len} cannot exceed "
            f"dataset.frames_per_slot {d.frames_per_slot}"
        )
    t = cfg.training
    if t.batch_size < 1 or t.epochs < 1:
        raise ConfigError("training.batch_size and training.epochs must be positive")
    if t.lr <= 0 or t.eps <= 0:
        raise ConfigError("training.lr and training.eps must be positive")
    if t.l0_weight < 0:
        raise ConfigError(f"training.l0_weight must be non-negative, got {t.l0_weight}")
    if t.sample_budget is not None and not 1 <= t.sample_budget <= d.timesteps:
        raise ConfigError(
            f"training.sample_budget must lie in [1, {d.timesteps}], got {t.sample_budget}"
        )
    e = cfg.eval
    if e.selection not in SELECTIONS:
        raise ConfigError(f"eval.selection must be one of {SELECTIONS}, got {e.selection!r}")
    for b in e.budgets:
        if isinstance(b, bool) or not isinstance(b, int) or not 1 <= b <= d.timesteps:
            raise ConfigError(f"eval.budgets entries must be ints in [1, {d.timesteps}], got {b!r}")


def config_from_dict(raw: dict) -> ExperimentConfig:
    """Build a fully-defaulted config from a (possibly partial) dict."""
    if not isinstance(raw, dict):
        raise ConfigError(f"config root must be an object, got {type(raw).__name__}")
    _check_section(raw, _SCHEMA, "")
    cfg = ExperimentConfig(
        mode=raw.get("mode", "e2e"),
        seed=raw.get("seed", 0),
        dataset=DatasetConfig(**raw.get("dataset", {})),
        model=ModelConfig(**raw.get("model", {})),
        training=TrainingConfig(**raw.get("training", {})),
        eval=EvalConfig(**raw.get("eval", {})),
    )
    _validate_values(cfg)
    return cfg


def load_config(path) -> ExperimentConfig:
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"config file not found: {p}")
    try:
        raw = json.loads(p.read_text())
    except ValueError as e:
        raise ConfigError(f"{p}: invalid JSON ({e})") from None
    return config_from_dict(raw)
