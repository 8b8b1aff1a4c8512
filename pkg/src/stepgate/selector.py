"""Timestep selection: light per-timestep features feed the gating stack.

A cheap shared encoder turns one raw frame per timestep slot into a feature
vector; in context mode a single-head self-attention layer mixes information
across timesteps before gating, while frame mode gates each timestep from its
own feature alone.  Heavy segments start at ``slot * stride`` and the light
frame for a slot is the segment's middle frame at offset ``segment_len // 2``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import gating
from .autodiff import Tensor
from .errors import ContractError, DimensionError, DomainError
from .gating import ConceptBank, GateDecision, GatingMLP

LIGHT_HIDDEN = 64

CONTEXT_MODES = ("context", "frame")


@dataclass
class SelectorConfig:
    """Shapes and switches of the selection stage."""

    channels: int
    n_kernels: int = 128
    context_mode: str = "context"
    attention_heads: int = 1
    timesteps: int = 32
    segment_len: int = 8

    def __post_init__(self):
        if self.context_mode not in CONTEXT_MODES:
            raise DomainError(f"context_mode must be one of {CONTEXT_MODES}, got {self.context_mode!r}")
        if self.attention_heads != 1:
            raise DomainError(f"only one attention head is supported, got {self.attention_heads}")
        for name in ("channels", "n_kernels", "timesteps", "segment_len"):
            if getattr(self, name) < 1:
                raise DomainError(f"{name} must be positive, got {getattr(self, name)}")


@dataclass
class SelectorParams:
    """Learned state of the selection stage."""

    config: SelectorConfig
    enc_w1: Tensor
    enc_b1: Tensor
    enc_w2: Tensor
    enc_b2: Tensor
    attn_q: Tensor | None
    attn_k: Tensor | None
    attn_v: Tensor | None
    bank: ConceptBank
    gate: GatingMLP

    @classmethod
    def init(cls, config: SelectorConfig, d_raw: int, rng: np.random.Generator,
             gate_hidden: int = 64, open_bias: float = 2.0) -> "SelectorParams":
        c = config.channels
        s_in, s_hid, s_att = 1.0 / math.sqrt(d_raw), 1.0 / math.sqrt(LIGHT_HIDDEN), 1.0 / math.sqrt(c)
        if config.context_mode == "context":
            attn = [Tensor(s_att * rng.standard_normal((c, c)), requires_grad=True) for _ in range(3)]
        else:
            attn = [None, None, None]
        return cls(
            config=config,
            enc_w1=Tensor(s_in * rng.standard_normal((d_raw, LIGHT_HIDDEN)), requires_grad=True),
            enc_b1=Tensor(np.zeros(LIGHT_HIDDEN), requires_grad=True),
            enc_w2=Tensor(s_hid * rng.standard_normal((LIGHT_HIDDEN, c)), requires_grad=True),
            enc_b2=Tensor(np.zeros(c), requires_grad=True),
            attn_q=attn[0], attn_k=attn[1], attn_v=attn[2],
            bank=ConceptBank.init(config.n_kernels, c, rng),
            gate=GatingMLP.init(config.n_kernels, gate_hidden, rng, open_bias=open_bias),
        )

    def named_parameters(self, prefix: str = "selector") -> dict[str, Tensor]:
        out = {
            f"{prefix}.enc_w1": self.enc_w1, f"{prefix}.enc_b1": self.enc_b1,
            f"{prefix}.enc_w2": self.enc_w2, f"{prefix}.enc_b2": self.enc_b2,
        }
        if self.attn_q is not None:
            out.update({f"{prefix}.attn_q": self.attn_q, f"{prefix}.attn_k": self.attn_k,
                        f"{prefix}.attn_v": self.attn_v})
        out.update({
            f"{prefix}.kernels": self.bank.kernels,
            f"{prefix}.gate_w1": self.gate.w1, f"{prefix}.gate_b1": self.gate.b1,
            f"{prefix}.gate_w2": self.gate.w2, f"{prefix}.gate_b2": self.gate.b2,
        })
        return out


@dataclass
class SelectionResult:
    """Gate outcomes for one video: per-timestep decisions, the ascending
    list of open timesteps, and the differentiable activated values."""

    decisions: list[GateDecision]
    selected_indices: list[int]
    activated: Tensor  # shape (T,)
    logits: Tensor | None = None  # (T, 1), differentiable; feeds the L0 term


# ---------------------------------------------------------------------------
# alignment


def segment_center(start: int, segment_len: int) -> int:
    """Middle frame of the segment covering ``[start, start + segment_len)``.

    For ``segment_len == 1`` this is the identity on starts.
    """
    if start < 0 or segment_len < 1:
        raise DomainError(f"bad segment: start={start}, segment_len={segment_len}")
    return start + segment_len // 2


def align_timesteps(t_heavy: int, segment_len: int, stride: int,
                    n_frames: int | None = None) -> list[int]:
    """Light frame index for each heavy timestep slot.

    The heavy segment of slot ``i`` covers raw frames
    ``[i * stride, i * stride + segment_len)`` and its light frame is the
    segment's middle one, ``segment_center(i * stride, segment_len)``.
    """
    if t_heavy < 1 or segment_len < 1 or stride < 1:
        raise DomainError(
            f"alignment needs positive sizes, got t_heavy={t_heavy}, "
            f"segment_len={segment_len}, stride={stride}"
        )
    indices = [segment_center(i * stride, segment_len) for i in range(t_heavy)]
    limit = n_frames if n_frames is not None else t_heavy * stride
    if indices[-1] >= limit:
        raise ContractError(
            f"alignment index {indices[-1]} out of range for {limit} frames "
            f"(t_heavy={t_heavy}, segment_len={segment_len}, stride={stride})"
        )
    return indices


# ---------------------------------------------------------------------------
# forward pieces


def lightnet_features(frames: np.ndarray, params: SelectorParams, stride: int) -> Tensor:
    """Shared two-layer MLP over each timestep's aligned light frame."""
    cfg = params.config
    frames = np.asarray(frames, dtype=np.float64)
    if frames.ndim != 2 or frames.shape[1] != params.enc_w1.shape[0]:
        raise DimensionError(
            f"frames shape {frames.shape} does not match encoder input width "
            f"{params.enc_w1.shape[0]}"
        )
    idx = align_timesteps(cfg.timesteps, cfg.segment_len, stride, n_frames=frames.shape[0])
    x0 = Tensor(frames[idx])
    h = ad.relu(ad.affine(x0, params.enc_w1, params.enc_b1))
    return ad.affine(h, params.enc_w2, params.enc_b2)


def self_attention(features: Tensor, params: SelectorParams) -> Tensor:
    """Single-head scaled dot-product self-attention with a residual add."""
    if params.attn_q is None:
        raise ContractError("self_attention called on a frame-mode selector")
    c = params.config.channels
    if features.data.ndim != 2 or features.shape[1] != c:
        raise DimensionError(f"attention needs (T, {c}) features, got {features.shape}")
    q = ad.matmul(features, params.attn_q)
    k = ad.matmul(features, params.attn_k)
    v = ad.matmul(features, params.attn_v)
    scores = ad.scale(ad.matmul(q, ad.transpose(k)), 1.0 / math.sqrt(c))
    return ad.add(features, ad.matmul(ad.softmax_rows(scores), v))


def gate_logits(frames: np.ndarray, params: SelectorParams, stride: int) -> Tensor:
    """Per-timestep gate logits as a (T, 1) column."""
    feats = lightnet_features(frames, params, stride)
    if params.config.context_mode == "context":
        feats = self_attention(feats, params)
    sims = gating.similarity_batch(feats, params.bank)
    return gating.gate_logits_batch(sims, params.gate)


def select(frames: np.ndarray, params: SelectorParams, mode: str, stride: int,
           rng: np.random.Generator | None = None) -> SelectionResult:
    """Run the full selection pipeline over one video's frames.

    ``mode`` is "train" (noisy clipped sigmoid; needs ``rng``) or "test"
    (deterministic step).  ``selected_indices`` is exactly the ascending set
    of open gates; empty selections are legal here and handled by callers.
    """
    if mode not in ("train", "test"):
        raise DomainError(f"selection mode must be 'train' or 'test', got {mode!r}")
    t = params.config.timesteps
    alphas = gate_logits(frames, params, stride)
    if mode == "train":
        if rng is None:
            raise ContractError("train-mode selection needs an rng for the gate noise")
        noises = gating.sample_gate_noise_batch(rng, t).reshape(t, 1)
        value, open_mask = gating.activate_train_batch(alphas, noises)
        noise_used = True
    else:
        value, open_mask = gating.activate_test_batch(alphas)
        noise_used = False
    activated = ad.reshape(value, (t,))
    decisions = [
        GateDecision(
            logit=float(alphas.data[i, 0]),
            value=Tensor(activated.data[i].copy()),
            open=bool(open_mask[i]),
            noise_used=noise_used,
        )
        for i in range(t)
    ]
    selected = [i for i in range(t) if open_mask[i]]
    return SelectionResult(decisions=decisions, selected_indices=selected,
                           activated=activated, logits=alphas)


def top_k_indices(result: SelectionResult, k: int) -> list[int]:
    """The k timesteps with the highest gate activation ``sigmoid(logit)``.

    Ranking uses the continuous activation rather than the thresholded value
    (in test mode the latter is binary and cannot order timesteps); ties go
    to the lower index.  Returned ascending.
    """
    t = len(result.decisions)
    if not (1 <= k <= t):
        raise DomainError(f"top-k budget must lie in [1, {t}], got {k}")
    scores = gating.sigmoid_np(np.asarray([d.logit for d in result.decisions]))
    order = np.argsort(-scores, kind="stable")
    return sorted(int(i) for i in order[:k])
