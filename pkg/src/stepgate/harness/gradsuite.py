"""Bundled finite-difference checks: every primitive op plus the full
training loss, reported as name -> max relative error.

Inputs are fixed and kept away from clip, threshold, and tie boundaries so
central differences are valid; the composite cases freeze gate noise by
reseeding inside the probed function and assert a safety margin on every
gate logit before checking.
"""

from __future__ import annotations

import numpy as np

from .. import autodiff as ad
from .. import gating
from ..autodiff import Tensor, finite_diff_check
from ..classifier import classify, heavynet_features, task_loss
from ..errors import ContractError
from ..selector import select
from ..synthdata import generate_dataset
from .config import DatasetConfig, ExperimentConfig, ModelConfig, TrainingConfig
from .models import build_bundle, selection_stride

THRESHOLD = 1e-4

_X34 = np.array([[0.3, -1.1, 0.7, 1.9],
                 [-0.4, 0.8, -1.6, 0.2],
                 [1.2, -0.6, 0.5, -0.9]])
_MAX_SAFE = np.array([[0.1, 1.4, -0.7, 2.2],
                      [1.9, -0.3, 0.8, -1.6],
                      [-2.0, 0.4, 1.1, 0.2]])


def _param(data) -> Tensor:
    return Tensor(np.array(data, dtype=np.float64), requires_grad=True)


def _project(t: Tensor, w: np.ndarray) -> Tensor:
    flat = ad.reshape(t, (int(np.prod(t.shape)),))
    return ad.reduce_sum(ad.mul(flat, Tensor(w.ravel())), axis=0)


def _op_cases(rng: np.random.Generator) -> dict[str, float]:
    b = Tensor(rng.standard_normal((4, 2)))
    bias2 = Tensor(rng.standard_normal(2))
    other = Tensor(rng.standard_normal((3, 4)))
    w34 = rng.standard_normal(12)
    w32 = rng.standard_normal(6)
    w43 = rng.standard_normal(12)
    w16 = rng.standard_normal(16)
    cases = {
        "matmul": (lambda x: _project(ad.matmul(x, b), w32), _param(_X34)),
        "transpose": (lambda x: _project(ad.transpose(x), w43), _param(_X34)),
        "add": (lambda x: _project(ad.add(x, other), w34), _param(_X34)),
        "sub": (lambda x: _project(ad.sub(x, other), w34), _param(_X34)),
        "mul": (lambda x: _project(ad.mul(x, other), w34), _param(_X34)),
        "scale": (lambda x: _project(ad.scale(x, -1.7), w34), _param(_X34)),
        "sigmoid": (lambda x: _project(ad.sigmoid(x), w34), _param(_X34)),
        # entries sit at least 0.2 from the relu kink
        "relu": (lambda x: _project(ad.relu(x), w34), _param(_X34)),
        "tanh": (lambda x: _project(ad.tanh(x), w34), _param(_X34)),
        "reduce_sum": (lambda x: _project(ad.reduce_sum(x, axis=0),
                                          w34[:4]), _param(_X34)),
        "reduce_mean": (lambda x: _project(ad.reduce_mean(x, axis=1),
                                           w34[:3]), _param(_X34)),
        # row and column maxima are unique with margin >= 0.3
        "reduce_max": (lambda x: _project(ad.reduce_max(x, axis=1),
                                          w34[:3]), _param(_MAX_SAFE)),
        "reshape": (lambda x: _project(ad.reshape(x, (2, 6)), w34), _param(_X34)),
        "tile_rows": (lambda x: _project(ad.tile_rows(x, 3), w34), _param(_X34[0])),
        "tile_cols": (lambda x: _project(ad.tile_cols(x, 4), w34[:12].reshape(3, 4)),
                      _param(_X34[:, 0])),
        "take_rows": (lambda x: _project(ad.take_rows(x, [0, 2, 2, 1]), w16),
                      _param(_X34)),
        "softmax_rows": (lambda x: _project(ad.softmax_rows(x), w34), _param(_X34)),
        "softmax_xent": (lambda x: ad.softmax_xent(x, [3, 0, 2]), _param(_X34)),
        "bce_logits": (lambda x: ad.bce_logits(
            x, np.array([[1, 0, 0, 1], [0, 1, 1, 0], [1, 1, 0, 0]],
                        dtype=np.float64)), _param(_X34)),
        "affine": (lambda x: _project(ad.affine(x, b, bias2), w32), _param(_X34)),
    }
    return {name: finite_diff_check(f, x) for name, (f, x) in cases.items()}


def _gating_cases() -> dict[str, float]:
    alphas = np.array([[1.2], [-0.8], [2.0], [-1.5]])
    noises = np.array([[0.5], [-0.7], [1.0], [0.4]])
    if np.min(np.abs(alphas + noises)) < 0.5:
        raise ContractError("gate FD case drifted onto the threshold")
    w = np.array([0.9, -1.3, 0.4, 0.7])

    def train_act(x):
        value, _ = gating.activate_train_batch(x, noises)
        return _project(value, w)

    return {
        "gate_train_activation": finite_diff_check(train_act, _param(alphas)),
        "l0_penalty": finite_diff_check(
            lambda x: gating.l0_penalty(x, 0.7), _param(alphas)),
    }


def _suite_config(seed: int) -> ExperimentConfig:
    return ExperimentConfig(
        mode="e2e", seed=seed,
        dataset=DatasetConfig(n_train=4, n_test=2, n_classes=3, n_shared=3,
                              n_background=2, d_raw=6, timesteps=4,
                              frames_per_slot=4, relevant_fraction=0.5),
        model=ModelConfig(light_channels=5, heavy_channels=5, n_kernels=6,
                          gate_hidden=5, segment_len=4),
        training=TrainingConfig(l0_weight=0.3),
    )


def _e2e_cases(seed: int) -> dict[str, float]:
    from .training import spec_from_config

    config = _suite_config(seed)
    bundle = build_bundle(config)
    stride = selection_stride(config)
    dataset = generate_dataset(spec_from_config(config), 4, 2, config.seed)
    video = dataset.train[0]
    noise_seed = 101

    def loss():
        rng = np.random.default_rng(noise_seed)
        result = select(video.frames, bundle.selector, "train", stride, rng=rng)
        idx = result.selected_indices
        if not idx:
            raise ContractError("FD video selected nothing; pick another seed")
        gates = ad.take_rows(result.activated, idx)
        feats = heavynet_features(video.frames, idx, bundle.classifier, stride)
        logits = classify(feats, gates, bundle.classifier)
        total = task_loss(logits, video.labels, "single_label")
        return ad.add(total, gating.l0_penalty(result.logits, 0.3))

    # margin check: every noisy logit must sit clear of the gate threshold
    probe_rng = np.random.default_rng(noise_seed)
    from ..selector import gate_logits
    alphas = gate_logits(video.frames, bundle.selector, stride).data.ravel()
    noises = gating.sample_gate_noise_batch(probe_rng, len(alphas))
    margin = float(np.min(np.abs(alphas + noises)))
    if margin < 5e-2:
        raise ContractError(
            f"gate margin {margin:.4f} too small for finite differences; "
            f"change the suite seed"
        )

    probes = {
        "e2e_loss/gate_w2": bundle.selector.gate.w2,
        "e2e_loss/gate_b2": bundle.selector.gate.b2,
        "e2e_loss/concept_kernels": bundle.selector.bank.kernels,
        "e2e_loss/attn_q": bundle.selector.attn_q,
        "e2e_loss/light_enc_b2": bundle.selector.enc_b2,
        "e2e_loss/heavy_enc_b2": bundle.classifier.enc_b2,
        "e2e_loss/head_w2": bundle.classifier.head.w2,
    }
    return {name: finite_diff_check(lambda _x: loss(), p)
            for name, p in probes.items()}


def run_gradient_suite(seed: int = 0) -> dict[str, float]:
    """All checks; values are max relative errors, passing means < 1e-4."""
    rng = np.random.default_rng(seed)
    errs = _op_cases(rng)
    errs.update(_gating_cases())
    errs.update(_e2e_cases(seed))
    return errs


def suite_passes(errors: dict[str, float], threshold: float = THRESHOLD) -> bool:
    return bool(errors) and max(errors.values()) < threshold
