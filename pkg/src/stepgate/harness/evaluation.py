"""Evaluation: metrics per budget with cost accounting attached.

Evaluation always uses deterministic test-mode gates.  The natural
"gate-count" entry keeps however many gates opened (with a one-timestep
fallback when none did); "topk" entries force exactly k highest-activation
timesteps so different selection policies can be compared at matched budget.
Gate magnitudes are not applied at test time: the test activation is binary,
so on the open set the scaling is the identity, and under a top-k override
it would zero the force-included rows.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from ..baselines import sample_indices, scsampler_scores
from ..classifier import HEAD_HIDDEN, HEAVY_HIDDEN, classify, heavynet_features
from ..costmodel import GFLOP, CostRegistry, CostReport, desk_flops, pipeline_cost
from ..errors import ConfigError, ContractError, DomainError
from ..selector import LIGHT_HIDDEN, select, top_k_indices
from ..synthdata import Dataset
from .checkpoint import Checkpoint
from .config import ExperimentConfig
from .models import ModelBundle, build_bundle, selection_stride, training_sample_budget
from .training import fallback_index

_EVAL_STREAM = 0xE7A1

SELECTOR_MODES = ("standalone", "e2e", "frame_conditioned")


# ---------------------------------------------------------------------------
# metrics


def accuracy(predicted, labels) -> float:
    p = np.asarray(predicted)
    y = np.asarray(labels)
    if p.shape != y.shape or p.ndim != 1 or p.size == 0:
        raise DomainError(f"need matching non-empty 1-d arrays, got {p.shape} vs {y.shape}")
    return float(np.mean(p == y))


def average_precision(scores, targets) -> float:
    """Precision averaged at each positive's rank, best score first.

    Ties keep input order (stable sort); monotone transforms of the scores
    leave the value unchanged.
    """
    s = np.asarray(scores, dtype=np.float64)
    t = np.asarray(targets, dtype=np.float64)
    if s.shape != t.shape or s.ndim != 1:
        raise DomainError(f"scores and targets must be matching 1-d arrays, "
                          f"got {s.shape} vs {t.shape}")
    if not np.isin(t, (0.0, 1.0)).all():
        raise DomainError("targets must be exactly 0 or 1")
    if not t.any():
        raise DomainError("average precision needs at least one positive")
    order = np.argsort(-s, kind="stable")
    hits = np.cumsum(t[order])
    ranks = np.flatnonzero(t[order]) + 1
    return float(np.mean(hits[ranks - 1] / ranks))


def mean_ap(scores: np.ndarray, targets: np.ndarray) -> tuple[float, list[int]]:
    """Mean AP over classes with at least one positive; returns the skipped
    class indices and warns about them."""
    s = np.asarray(scores, dtype=np.float64)
    t = np.asarray(targets, dtype=np.float64)
    if s.shape != t.shape or s.ndim != 2:
        raise DomainError(f"need matching (videos, classes) matrices, got {s.shape} vs {t.shape}")
    aps, skipped = [], []
    for c in range(s.shape[1]):
        if t[:, c].any():
            aps.append(average_precision(s[:, c], t[:, c]))
        else:
            skipped.append(c)
    if skipped:
        warnings.warn(f"classes {skipped} have no positives in this split; "
                      f"skipped in the mAP mean")
    if not aps:
        raise DomainError("every class lacks positives; mAP undefined")
    return float(np.mean(aps)), skipped


# ---------------------------------------------------------------------------
# cost wiring


def cost_registry_for(config: ExperimentConfig) -> CostRegistry:
    """Published rates plus this run's exactly-counted desk rates."""
    d, m = config.dataset, config.model
    context_mode = "frame" if config.mode == "frame_conditioned" else "context"
    desk = desk_flops(
        d_raw=d.d_raw, light_channels=m.light_channels, n_kernels=m.n_kernels,
        gate_hidden=m.gate_hidden, timesteps=d.timesteps,
        segment_len=m.segment_len, heavy_channels=m.heavy_channels,
        height=m.height, width=m.width, heavy_hidden=HEAVY_HIDDEN,
        head_hidden=HEAD_HIDDEN, n_classes=d.n_classes,
        context_mode=context_mode, light_hidden=LIGHT_HIDDEN,
    )
    scorer = (d.d_raw * LIGHT_HIDDEN + LIGHT_HIDDEN * m.light_channels
              + m.light_channels * d.n_classes) / GFLOP
    return CostRegistry.published().with_entries({**desk, "desk_scorer": scorer})


def _cost_for(config: ExperimentConfig, mean_heavy: float,
              registry: CostRegistry) -> CostReport:
    t = config.dataset.timesteps
    if config.mode in SELECTOR_MODES:
        return pipeline_cost(t, mean_heavy, "desk_heavy", registry,
                             light_model="desk_light")
    if config.mode == "scsampler":
        return pipeline_cost(t, mean_heavy, "desk_heavy", registry,
                             light_model="desk_scorer")
    return pipeline_cost(0, mean_heavy, "desk_heavy", registry)


# ---------------------------------------------------------------------------
# evaluation proper


@dataclass
class BudgetMetrics:
    budget: int | None          # None = natural gate count
    metric_name: str
    value: float
    mean_selected: float        # heavy timesteps per video
    mean_ratio: float
    heavy_rows: int             # measured on the instrumented encoder
    cost: CostReport

    def to_dict(self) -> dict:
        return {
            "budget": self.budget, "metric_name": self.metric_name,
            "value": self.value, "mean_selected": self.mean_selected,
            "mean_ratio": self.mean_ratio, "heavy_rows": self.heavy_rows,
            "cost": {
                "model": self.cost.model, "n_light": self.cost.n_light,
                "n_heavy": self.cost.n_heavy,
                "light_gflops": self.cost.light_gflops,
                "heavy_gflops": self.cost.heavy_gflops,
                "total_gflops": self.cost.total_gflops,
            },
        }


@dataclass
class EvalReport:
    mode: str
    task: str
    n_videos: int
    timesteps: int
    entries: list[BudgetMetrics] = field(default_factory=list)
    per_video_counts: dict[str, list[int]] = field(default_factory=dict)
    skipped_classes: list[int] = field(default_factory=list)

    def entry(self, budget: int | None) -> BudgetMetrics:
        for e in self.entries:
            if e.budget == budget:
                return e
        raise DomainError(f"no evaluation entry for budget {budget!r}")

    def to_dict(self) -> dict:
        return {
            "mode": self.mode, "task": self.task, "n_videos": self.n_videos,
            "timesteps": self.timesteps,
            "entries": [e.to_dict() for e in self.entries],
            "per_video_counts": self.per_video_counts,
            "skipped_classes": self.skipped_classes,
        }


def _video_indices(bundle: ModelBundle, config: ExperimentConfig, video,
                   video_index: int, budget: int | None,
                   stride: int) -> list[int]:
    t = config.dataset.timesteps
    if bundle.mode in SELECTOR_MODES:
        result = select(video.frames, bundle.selector, "test", stride)
        if budget is not None:
            return top_k_indices(result, budget)
        return result.selected_indices or [fallback_index(result.decisions)]
    k = budget if budget is not None else training_sample_budget(config)
    if bundle.mode == "scsampler":
        scores = scsampler_scores(video.frames, bundle.scorer, stride, t,
                                  config.model.segment_len)
        return sample_indices("topk", t, k, scores=scores)
    if bundle.mode == "uniform":
        return sample_indices("uniform", t, k)
    seed = np.random.default_rng(
        [config.seed, _EVAL_STREAM, video_index]).integers(1 << 62)
    return sample_indices("random", t, k, seed=int(seed))


def evaluate_bundle(bundle: ModelBundle, config: ExperimentConfig,
                    videos: list) -> EvalReport:
    """Metric per budget entry over one video list (normally the test split)."""
    if not videos:
        raise ContractError("evaluation needs at least one video")
    task = config.dataset.task
    t = config.dataset.timesteps
    stride = selection_stride(config)
    registry = cost_registry_for(config)
    budgets: list[int | None]
    if config.eval.selection == "gate-count":
        budgets = [None, *config.eval.budgets]
    else:
        if not config.eval.budgets:
            raise ConfigError("selection 'topk' needs a non-empty budgets list")
        budgets = list(config.eval.budgets)

    report = EvalReport(mode=bundle.mode, task=task, n_videos=len(videos),
                        timesteps=t)
    for budget in budgets:
        bundle.classifier.reset_instrumentation()
        counts: list[int] = []
        score_rows = np.zeros((len(videos), config.dataset.n_classes))
        for vi, video in enumerate(videos):
            idx = _video_indices(bundle, config, video, vi, budget, stride)
            feats = heavynet_features(video.frames, idx, bundle.classifier,
                                      stride)
            score_rows[vi] = classify(feats, None, bundle.classifier).data
            counts.append(len(idx))
        if task == "single_label":
            name = "accuracy"
            value = accuracy(np.argmax(score_rows, axis=1),
                             [int(v.labels) for v in videos])
        else:
            name = "mAP"
            value, skipped = mean_ap(
                score_rows, np.asarray([v.labels for v in videos]))
            report.skipped_classes = skipped
        mean_sel = float(np.mean(counts))
        key = "gate-count" if budget is None else f"topk-{budget}"
        report.per_video_counts[key] = counts
        report.entries.append(BudgetMetrics(
            budget=budget, metric_name=name, value=value,
            mean_selected=mean_sel, mean_ratio=mean_sel / t,
            heavy_rows=bundle.classifier.heavy_rows,
            cost=_cost_for(config, mean_sel, registry),
        ))
    return report


def evaluate_checkpoint(ckpt: Checkpoint, dataset: Dataset,
                        split: str = "test") -> EvalReport:
    """Rebuild the bundle a checkpoint describes and evaluate it."""
    if split not in ("train", "test"):
        raise DomainError(f"split must be 'train' or 'test', got {split!r}")
    config = ckpt.experiment_config()
    bundle = build_bundle(config)
    ckpt.apply_to_bundle(bundle)
    videos = dataset.train if split == "train" else dataset.test
    return evaluate_bundle(bundle, config, videos)
