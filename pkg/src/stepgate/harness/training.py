"""Training loops for every experiment mode.

All loops are deterministic given (config, seed): parameter init, batch
shuffles, gate noise, and baseline sampling each draw from streams derived
from the config seed, and batches run sequentially.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .. import autodiff as ad
from .. import gating
from ..autodiff import Adam, Tensor
from ..baselines import sample_indices, scorer_logits, scsampler_scores
from ..classifier import classify, head_logits, heavynet_features, task_loss
from ..errors import ConfigError, ContractError, TrainingDivergence
from ..selector import lightnet_features, select, self_attention
from ..synthdata import ActivitySpec, Dataset, generate_dataset, load_split
from .checkpoint import Checkpoint
from .config import ExperimentConfig
from .models import (
    ModelBundle,
    build_bundle,
    selection_stride,
    training_sample_budget,
)

_TRAIN_STREAM = 0x5EED
_SAMPLE_STREAM = 0xBA5E


@dataclass
class EpochLog:
    epoch: int
    loss: float
    accuracy: float
    selected_ratio: float


@dataclass
class TrainResult:
    config: ExperimentConfig
    bundle: ModelBundle
    checkpoint: Checkpoint
    epoch_logs: list[EpochLog] = field(default_factory=list)
    classifier_logs: list[EpochLog] = field(default_factory=list)

    @property
    def final_selected_ratio(self) -> float:
        return self.epoch_logs[-1].selected_ratio if self.epoch_logs else 0.0


# ---------------------------------------------------------------------------
# dataset plumbing


def spec_from_config(config: ExperimentConfig) -> ActivitySpec:
    d = config.dataset
    builder = {"anchored": ActivitySpec.default,
               "paired": ActivitySpec.paired}[d.recipe_style]
    return builder(
        n_classes=d.n_classes, n_shared=d.n_shared, n_background=d.n_background,
        d_raw=d.d_raw, timesteps=d.timesteps, frames_per_slot=d.frames_per_slot,
        noise_sigma=d.noise_sigma, relevant_fraction=d.relevant_fraction,
        confuser_share=d.confuser_share, task=d.task,
    )


def resolve_dataset(config: ExperimentConfig) -> Dataset:
    """Load the dataset a config points at, or generate it from the config."""
    d = config.dataset
    if d.path is None:
        return generate_dataset(spec_from_config(config), d.n_train, d.n_test,
                                config.seed)
    base = d.path
    spec_a, protos, train_videos, meta_a = load_split(f"{base}/train.sgds")
    spec_b, protos_b, test_videos, meta_b = load_split(f"{base}/test.sgds")
    if spec_a != spec_b or meta_a["seed"] != meta_b["seed"]:
        raise ConfigError(f"{base}: train and test splits come from different runs")
    if not np.array_equal(protos, protos_b):
        raise ConfigError(f"{base}: train and test splits disagree on prototypes")
    return Dataset(spec=spec_a, prototypes=protos, train=train_videos,
                   test=test_videos, seed=meta_a["seed"])


# ---------------------------------------------------------------------------
# loop helpers


def _train_rng(config: ExperimentConfig) -> np.random.Generator:
    return np.random.default_rng([config.seed, _TRAIN_STREAM])


def _batches(n: int, batch_size: int, rng: np.random.Generator):
    order = rng.permutation(n)
    for lo in range(0, n, batch_size):
        yield [int(i) for i in order[lo:lo + batch_size]]


def _mean_loss(per_video: list[Tensor]) -> Tensor:
    total = per_video[0]
    for term in per_video[1:]:
        total = ad.add(total, term)
    return ad.scale(total, 1.0 / len(per_video))


def _prediction_hit(logits: np.ndarray, labels, task: str) -> float:
    if task == "single_label":
        return float(int(np.argmax(logits)) == int(labels))
    want = np.asarray(labels, dtype=np.float64)
    return float(np.mean((logits > 0.0).astype(np.float64) == want))


def _check_finite(loss: Tensor, mode: str, epoch: int) -> None:
    if not np.isfinite(loss.data).all():
        raise TrainingDivergence(
            f"{mode} training diverged at epoch {epoch}: loss became non-finite"
        )


def fallback_index(decisions) -> int:
    """Timestep to keep when every gate closed: the highest logit wins."""
    return int(np.argmax([d.logit for d in decisions]))


# ---------------------------------------------------------------------------
# end-to-end (also the frame-conditioned ablation)


def train_end_to_end(config: ExperimentConfig,
                     dataset: Dataset | None = None) -> TrainResult:
    """Joint selector + classifier training on task loss plus the L0 term."""
    if config.mode not in ("e2e", "frame_conditioned"):
        raise ContractError(f"train_end_to_end got mode {config.mode!r}")
    dataset = dataset if dataset is not None else resolve_dataset(config)
    bundle = build_bundle(config)
    stride = selection_stride(config)
    tr = config.training
    task = config.dataset.task
    t_steps = config.dataset.timesteps
    params = bundle.named_parameters()
    opt = Adam(params.values(), lr=tr.lr, eps=tr.eps)
    rng = _train_rng(config)
    logs: list[EpochLog] = []

    for epoch in range(tr.epochs):
        loss_sum = hit_sum = ratio_sum = 0.0
        for batch in _batches(len(dataset.train), tr.batch_size, rng):
            with ad.record():
                per_video = []
                for vi in batch:
                    video = dataset.train[vi]
                    result = select(video.frames, bundle.selector, "train",
                                    stride, rng=rng)
                    idx = result.selected_indices
                    if idx:
                        gates = ad.take_rows(result.activated, idx)
                    else:
                        idx, gates = [fallback_index(result.decisions)], None
                    feats = heavynet_features(video.frames, idx,
                                              bundle.classifier, stride)
                    logits = classify(feats, gates, bundle.classifier)
                    loss_i = task_loss(logits, video.labels, task)
                    if tr.l0_weight > 0.0:
                        loss_i = ad.add(loss_i, gating.l0_penalty(
                            result.logits, tr.l0_weight))
                    per_video.append(loss_i)
                    hit_sum += _prediction_hit(logits.data, video.labels, task)
                    ratio_sum += len(result.selected_indices) / t_steps
                loss = _mean_loss(per_video)
                _check_finite(loss, config.mode, epoch)
                ad.backward(loss)
            opt.step()
            loss_sum += float(loss.data) * len(batch)
        n = len(dataset.train)
        logs.append(EpochLog(epoch, loss_sum / n, hit_sum / n, ratio_sum / n))

    ckpt = Checkpoint.from_bundle(config, bundle, step=opt.t, optimizer=opt)
    return TrainResult(config=config, bundle=bundle, checkpoint=ckpt,
                       epoch_logs=logs)


# ---------------------------------------------------------------------------
# stand-alone: selector with a light head first, heavy classifier second


def _light_video_logits(video, bundle: ModelBundle, stride: int,
                        rng: np.random.Generator):
    """Light-path logits for phase A: gated light features, light head, max
    over time. Returns (logits, gate logit tensor, open count)."""
    sel = bundle.selector
    feats = lightnet_features(video.frames, sel, stride)
    if sel.config.context_mode == "context":
        feats = self_attention(feats, sel)
    sims = gating.similarity_batch(feats, sel.bank)
    alphas = gating.gate_logits_batch(sims, sel.gate)
    t = sel.config.timesteps
    noises = gating.sample_gate_noise_batch(rng, t).reshape(t, 1)
    value, open_mask = gating.activate_train_batch(alphas, noises)
    gated = ad.mul(feats, ad.tile_cols(ad.reshape(value, (t,)), sel.config.channels))
    logits = ad.reduce_max(head_logits(gated, bundle.light_head), axis=0)
    return logits, alphas, int(np.count_nonzero(open_mask))


def _train_classifier_on_indices(bundle: ModelBundle, dataset: Dataset,
                                 config: ExperimentConfig,
                                 indices_for, mode_name: str) -> list[EpochLog]:
    """Shared phase B: fit the heavy classifier on fixed per-video timesteps.

    ``indices_for(epoch, video_index, video)`` supplies the timesteps; it is
    re-invoked each epoch so baselines may resample.
    """
    stride = selection_stride(config)
    tr = config.training
    task = config.dataset.task
    opt = Adam(bundle.classifier.named_parameters().values(),
               lr=tr.lr, eps=tr.eps)
    rng = _train_rng(config)
    rng.integers(1 << 30)  # offset from the phase A shuffle stream
    logs: list[EpochLog] = []
    t_steps = config.dataset.timesteps

    for epoch in range(tr.epochs):
        loss_sum = hit_sum = ratio_sum = 0.0
        for batch in _batches(len(dataset.train), tr.batch_size, rng):
            with ad.record():
                per_video = []
                for vi in batch:
                    video = dataset.train[vi]
                    idx = indices_for(epoch, vi, video)
                    feats = heavynet_features(video.frames, idx,
                                              bundle.classifier, stride)
                    logits = classify(feats, None, bundle.classifier)
                    per_video.append(task_loss(logits, video.labels, task))
                    hit_sum += _prediction_hit(logits.data, video.labels, task)
                    ratio_sum += len(idx) / t_steps
                loss = _mean_loss(per_video)
                _check_finite(loss, mode_name, epoch)
                ad.backward(loss)
            opt.step()
            loss_sum += float(loss.data) * len(batch)
        n = len(dataset.train)
        logs.append(EpochLog(epoch, loss_sum / n, hit_sum / n, ratio_sum / n))
    return logs


def train_standalone_selector(config: ExperimentConfig,
                              dataset: Dataset | None = None) -> TrainResult:
    """Two phases: selector + light head on gated light features, then the
    heavy classifier on the frozen selector's test-mode selections."""
    if config.mode != "standalone":
        raise ContractError(f"train_standalone_selector got mode {config.mode!r}")
    dataset = dataset if dataset is not None else resolve_dataset(config)
    bundle = build_bundle(config)
    stride = selection_stride(config)
    tr = config.training
    task = config.dataset.task
    t_steps = config.dataset.timesteps
    selector_params = {**bundle.selector.named_parameters("selector"),
                       **bundle.light_head.named_parameters("light_head")}
    opt = Adam(selector_params.values(), lr=tr.lr, eps=tr.eps)
    rng = _train_rng(config)
    logs: list[EpochLog] = []

    for epoch in range(tr.epochs):
        loss_sum = hit_sum = ratio_sum = 0.0
        for batch in _batches(len(dataset.train), tr.batch_size, rng):
            with ad.record():
                per_video = []
                for vi in batch:
                    video = dataset.train[vi]
                    logits, alphas, n_open = _light_video_logits(
                        video, bundle, stride, rng)
                    loss_i = task_loss(logits, video.labels, task)
                    if tr.l0_weight > 0.0:
                        loss_i = ad.add(loss_i, gating.l0_penalty(
                            alphas, tr.l0_weight))
                    per_video.append(loss_i)
                    hit_sum += _prediction_hit(logits.data, video.labels, task)
                    ratio_sum += n_open / t_steps
                loss = _mean_loss(per_video)
                _check_finite(loss, "standalone", epoch)
                ad.backward(loss)
            opt.step()
            loss_sum += float(loss.data) * len(batch)
        n = len(dataset.train)
        logs.append(EpochLog(epoch, loss_sum / n, hit_sum / n, ratio_sum / n))

    # the selector is frozen from here; its test-mode picks are fixed, so
    # compute them once per video
    fixed: dict[int, list[int]] = {}
    for vi, video in enumerate(dataset.train):
        result = select(video.frames, bundle.selector, "test", stride)
        idx = result.selected_indices or [fallback_index(result.decisions)]
        fixed[vi] = idx
    cls_logs = _train_classifier_on_indices(
        bundle, dataset, config, lambda e, vi, v: fixed[vi], "standalone")

    ckpt = Checkpoint.from_bundle(config, bundle, step=opt.t)
    return TrainResult(config=config, bundle=bundle, checkpoint=ckpt,
                       epoch_logs=logs, classifier_logs=cls_logs)


# ---------------------------------------------------------------------------
# baselines


def train_scsampler(config: ExperimentConfig,
                    dataset: Dataset | None = None) -> TrainResult:
    """Phase A fits the per-timestep scorer, phase B fits the classifier on
    each video's top-k scoring timesteps."""
    if config.mode != "scsampler":
        raise ContractError(f"train_scsampler got mode {config.mode!r}")
    dataset = dataset if dataset is not None else resolve_dataset(config)
    bundle = build_bundle(config)
    stride = selection_stride(config)
    d, tr = config.dataset, config.training
    seg = config.model.segment_len
    opt = Adam(bundle.scorer.named_parameters().values(), lr=tr.lr, eps=tr.eps)
    rng = _train_rng(config)
    logs: list[EpochLog] = []

    for epoch in range(tr.epochs):
        loss_sum = hit_sum = 0.0
        for batch in _batches(len(dataset.train), tr.batch_size, rng):
            with ad.record():
                per_video = []
                for vi in batch:
                    video = dataset.train[vi]
                    logits = scorer_logits(video.frames, bundle.scorer, stride,
                                           d.timesteps, seg)
                    # every timestep carries the video label; a multi-label
                    # video averages the cross-entropy over its positives,
                    # keeping the softmax head the saliency relies on
                    positives = video.positive_classes(dataset.spec)
                    terms = [ad.softmax_xent(logits, [c] * d.timesteps)
                             for c in positives]
                    frame_loss = terms[0]
                    for term in terms[1:]:
                        frame_loss = ad.add(frame_loss, term)
                    per_video.append(ad.scale(frame_loss, 1.0 / len(terms)))
                    hit_sum += float(np.mean(np.isin(
                        np.argmax(logits.data, axis=1), positives)))
                loss = _mean_loss(per_video)
                _check_finite(loss, "scsampler", epoch)
                ad.backward(loss)
            opt.step()
            loss_sum += float(loss.data) * len(batch)
        n = len(dataset.train)
        logs.append(EpochLog(epoch, loss_sum / n, hit_sum / n, 1.0))

    k = training_sample_budget(config)
    fixed: dict[int, list[int]] = {}
    for vi, video in enumerate(dataset.train):
        scores = scsampler_scores(video.frames, bundle.scorer, stride,
                                  d.timesteps, seg)
        fixed[vi] = sample_indices("topk", d.timesteps, k, scores=scores)
    cls_logs = _train_classifier_on_indices(
        bundle, dataset, config, lambda e, vi, v: fixed[vi], "scsampler")

    ckpt = Checkpoint.from_bundle(config, bundle, step=opt.t)
    return TrainResult(config=config, bundle=bundle, checkpoint=ckpt,
                       epoch_logs=logs, classifier_logs=cls_logs)


def train_fixed_sampler(config: ExperimentConfig,
                        dataset: Dataset | None = None) -> TrainResult:
    """Classifier-only training on uniform or seeded-random timesteps."""
    if config.mode not in ("uniform", "random"):
        raise ContractError(f"train_fixed_sampler got mode {config.mode!r}")
    dataset = dataset if dataset is not None else resolve_dataset(config)
    bundle = build_bundle(config)
    d = config.dataset
    k = training_sample_budget(config)

    if config.mode == "uniform":
        def indices_for(epoch, vi, video):
            return sample_indices("uniform", d.timesteps, k)
    else:
        def indices_for(epoch, vi, video):
            seed = np.random.default_rng(
                [config.seed, _SAMPLE_STREAM, epoch, vi]).integers(1 << 62)
            return sample_indices("random", d.timesteps, k, seed=int(seed))

    cls_logs = _train_classifier_on_indices(bundle, dataset, config,
                                            indices_for, config.mode)
    ckpt = Checkpoint.from_bundle(config, bundle, step=len(cls_logs))
    return TrainResult(config=config, bundle=bundle, checkpoint=ckpt,
                       classifier_logs=cls_logs)


_TRAINERS = {
    "standalone": train_standalone_selector,
    "e2e": train_end_to_end,
    "frame_conditioned": train_end_to_end,
    "scsampler": train_scsampler,
    "uniform": train_fixed_sampler,
    "random": train_fixed_sampler,
}


def run_training(config: ExperimentConfig,
                 dataset: Dataset | None = None) -> TrainResult:
    return _TRAINERS[config.mode](config, dataset)
