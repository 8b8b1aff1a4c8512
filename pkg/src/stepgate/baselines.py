"""Segment-conditioned sampling baselines.

The saliency scorer judges each timestep from that timestep's light frame
alone: a private light encoder feeds a linear softmax head and the score is
the head's maximum class probability.  No operation here ever looks across
timesteps, so position- and context-invariance hold structurally.  The head
starts at zero, which makes the untrained score exactly ``1 / n_classes``.

``sample_indices`` owns the three selector-free sampling rules (evenly
spaced, seeded random, score top-k) shared by the baseline arms.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ContractError, DimensionError, DomainError
from .selector import LIGHT_HIDDEN, align_timesteps

SAMPLE_MODES = ("uniform", "random", "topk")


@dataclass
class ScorerParams:
    """Light encoder plus linear classification head of the saliency scorer."""

    enc_w1: Tensor
    enc_b1: Tensor
    enc_w2: Tensor
    enc_b2: Tensor
    head_w: Tensor
    head_b: Tensor

    @classmethod
    def init(cls, d_raw: int, channels: int, n_classes: int,
             rng: np.random.Generator) -> "ScorerParams":
        if min(d_raw, channels) < 1 or n_classes < 2:
            raise DomainError(
                f"scorer needs positive dims and >= 2 classes, got "
                f"d_raw={d_raw}, channels={channels}, n_classes={n_classes}"
            )
        s1, s2 = 1.0 / math.sqrt(d_raw), 1.0 / math.sqrt(LIGHT_HIDDEN)
        return cls(
            enc_w1=Tensor(s1 * rng.standard_normal((d_raw, LIGHT_HIDDEN)), requires_grad=True),
            enc_b1=Tensor(np.zeros(LIGHT_HIDDEN), requires_grad=True),
            enc_w2=Tensor(s2 * rng.standard_normal((LIGHT_HIDDEN, channels)), requires_grad=True),
            enc_b2=Tensor(np.zeros(channels), requires_grad=True),
            # zero head: softmax starts uniform, so scores start at 1 / n_classes
            head_w=Tensor(np.zeros((channels, n_classes)), requires_grad=True),
            head_b=Tensor(np.zeros(n_classes), requires_grad=True),
        )

    @property
    def channels(self) -> int:
        return self.enc_w2.shape[1]

    @property
    def n_classes(self) -> int:
        return self.head_w.shape[1]

    def named_parameters(self, prefix: str = "scorer") -> dict[str, Tensor]:
        return {
            f"{prefix}.enc_w1": self.enc_w1, f"{prefix}.enc_b1": self.enc_b1,
            f"{prefix}.enc_w2": self.enc_w2, f"{prefix}.enc_b2": self.enc_b2,
            f"{prefix}.head_w": self.head_w, f"{prefix}.head_b": self.head_b,
        }


def scorer_logits(frames: np.ndarray, params: ScorerParams, stride: int,
                  timesteps: int, segment_len: int) -> Tensor:
    """Per-timestep class logits (T, L); the differentiable training path."""
    frames = np.asarray(frames, dtype=np.float64)
    if frames.ndim != 2 or frames.shape[1] != params.enc_w1.shape[0]:
        raise DimensionError(
            f"frames shape {frames.shape} does not match scorer input width "
            f"{params.enc_w1.shape[0]}"
        )
    idx = align_timesteps(timesteps, segment_len, stride, n_frames=frames.shape[0])
    h = ad.relu(ad.affine(Tensor(frames[idx]), params.enc_w1, params.enc_b1))
    feats = ad.affine(h, params.enc_w2, params.enc_b2)
    return ad.affine(feats, params.head_w, params.head_b)


def scsampler_score(x, params: ScorerParams) -> float:
    """Saliency of one timestep feature: max softmax probability of the head.

    Pure function of the single feature vector, so identical inputs score
    identically wherever they occur.
    """
    v = x.data if isinstance(x, Tensor) else np.asarray(x, dtype=np.float64)
    if v.ndim != 1 or v.shape[0] != params.channels:
        raise DimensionError(f"expected a ({params.channels},) feature, got shape {v.shape}")
    z = v @ params.head_w.data + params.head_b.data
    z = z - z.max()
    e = np.exp(z)
    return float(e.max() / e.sum())


def scsampler_scores(frames: np.ndarray, params: ScorerParams, stride: int,
                     timesteps: int, segment_len: int) -> np.ndarray:
    """Per-timestep saliency scores over one video, shape (T,)."""
    logits = scorer_logits(frames, params, stride, timesteps, segment_len).data
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e.max(axis=1) / e.sum(axis=1)


def sample_indices(mode: str, t: int, k: int, scores=None,
                   seed: int | None = None) -> list[int]:
    """Pick ``k`` of ``t`` timesteps; always distinct and ascending.

    uniform: evenly spaced with centered offset, ``floor((2i+1)*t / (2k))``.
    random: seeded draw without replacement.
    topk: the k highest scores, ties resolved to the lower index.
    """
    if mode not in SAMPLE_MODES:
        raise DomainError(f"mode must be one of {SAMPLE_MODES}, got {mode!r}")
    if t < 1 or not 1 <= k <= t:
        raise DomainError(f"need 1 <= k <= t, got k={k}, t={t}")
    if mode == "uniform":
        return [(2 * i + 1) * t // (2 * k) for i in range(k)]
    if mode == "random":
        rng = np.random.default_rng(seed)
        return sorted(int(i) for i in rng.choice(t, size=k, replace=False))
    if scores is None:
        raise ContractError("topk sampling needs scores")
    s = np.asarray(scores, dtype=np.float64)
    if s.shape != (t,):
        raise DimensionError(f"scores shape {s.shape} does not match t={t}")
    order = np.argsort(-s, kind="stable")
    return sorted(int(i) for i in order[:k])
