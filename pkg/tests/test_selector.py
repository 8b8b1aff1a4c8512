import math

import numpy as np
import numpy.testing as nptest
import pytest
from hypothesis import given, settings, strategies as st

import stepgate.autodiff as ad
import stepgate.gating as gt
import stepgate.selector as sel
from stepgate.autodiff import Tensor
from stepgate.errors import ContractError, DimensionError, DomainError

STRIDE = 16


def make_params(context_mode="context", channels=4, n_kernels=6, timesteps=4,
                segment_len=8, d_raw=5, seed=0, open_bias=0.0):
    cfg = sel.SelectorConfig(channels=channels, n_kernels=n_kernels,
                             context_mode=context_mode, timesteps=timesteps,
                             segment_len=segment_len)
    return sel.SelectorParams.init(cfg, d_raw, np.random.default_rng(seed),
                                   gate_hidden=8, open_bias=open_bias)


def random_frames(rng, timesteps=4, d_raw=5, stride=STRIDE):
    return rng.standard_normal((timesteps * stride, d_raw))


# ---------------------------------------------------------------------------
# alignment


def test_segment_center_worked_examples():
    assert sel.segment_center(0, 8) == 4
    assert sel.segment_center(16, 16) == 24
    assert sel.segment_center(5, 1) == 5


def test_align_timesteps_slots():
    assert sel.align_timesteps(4, 8, 16) == [4, 20, 36, 52]
    assert sel.align_timesteps(3, 1, 2) == [0, 2, 4]


def test_align_length_one_segments_are_identity_on_starts():
    for t in (1, 5):
        assert sel.align_timesteps(t, 1, 1) == list(range(t))


def test_align_out_of_range_is_contract_error():
    with pytest.raises(ContractError):
        sel.align_timesteps(4, 8, 16, n_frames=52)  # last center is index 52


def test_align_bad_sizes_are_domain_errors():
    with pytest.raises(DomainError):
        sel.align_timesteps(0, 8, 16)
    with pytest.raises(DomainError):
        sel.segment_center(-1, 8)


# ---------------------------------------------------------------------------
# light features


def test_lightnet_reads_center_frames_with_shared_encoder():
    params = make_params(context_mode="frame")
    rng = np.random.default_rng(3)
    frames = random_frames(rng)
    feats = sel.lightnet_features(frames, params, STRIDE).data

    def encode_one(v):
        h = np.maximum(v @ params.enc_w1.data + params.enc_b1.data, 0.0)
        return h @ params.enc_w2.data + params.enc_b2.data

    for t, center in enumerate(sel.align_timesteps(4, 8, STRIDE)):
        nptest.assert_allclose(feats[t], encode_one(frames[center]), rtol=1e-12)


def test_lightnet_rejects_wrong_width():
    params = make_params()
    with pytest.raises(DimensionError):
        sel.lightnet_features(np.zeros((64, 7)), params, STRIDE)


# ---------------------------------------------------------------------------
# attention


def test_self_attention_hand_oracle_t2():
    """Exhaustive scalar-loop oracle for a 2-timestep, 2-channel attention."""
    cfg = sel.SelectorConfig(channels=2, n_kernels=2, timesteps=2, segment_len=1)
    rng = np.random.default_rng(0)
    params = sel.SelectorParams.init(cfg, 3, rng, gate_hidden=4)
    x = np.asarray([[1.0, -0.5], [0.25, 2.0]])
    out = sel.self_attention(Tensor(x), params).data

    wq, wk, wv = params.attn_q.data, params.attn_k.data, params.attn_v.data
    q, k, v = x @ wq, x @ wk, x @ wv
    expected = np.zeros_like(x)
    for i in range(2):
        scores = [sum(q[i][c] * k[j][c] for c in range(2)) / math.sqrt(2) for j in range(2)]
        mx = max(scores)
        weights = [math.exp(s - mx) for s in scores]
        z = sum(weights)
        for c in range(2):
            expected[i, c] = x[i, c] + sum(weights[j] / z * v[j][c] for j in range(2))
    nptest.assert_allclose(out, expected, rtol=1e-12)


def test_attention_rows_mix_other_timesteps():
    params = make_params(context_mode="context")
    rng = np.random.default_rng(4)
    frames = random_frames(rng)
    base = sel.gate_logits(frames, params, STRIDE).data.copy()
    # change only the last timestep's center frame; earlier logits must move
    frames2 = frames.copy()
    frames2[sel.align_timesteps(4, 8, STRIDE)[-1]] += 10.0
    bumped = sel.gate_logits(frames2, params, STRIDE).data
    assert np.abs(bumped[:-1] - base[:-1]).max() > 1e-9


def test_frame_mode_ignores_other_timesteps():
    params = make_params(context_mode="frame")
    rng = np.random.default_rng(5)
    frames = random_frames(rng)
    base = sel.gate_logits(frames, params, STRIDE).data.copy()
    frames2 = frames.copy()
    frames2[sel.align_timesteps(4, 8, STRIDE)[-1]] += 10.0
    bumped = sel.gate_logits(frames2, params, STRIDE).data
    nptest.assert_array_equal(bumped[:-1], base[:-1])
    assert abs(bumped[-1] - base[-1]).max() > 1e-9


def _permute_slots(frames, perm, stride=STRIDE):
    slots = frames.reshape(-1, stride, frames.shape[1])
    return slots[perm].reshape(-1, frames.shape[1])


@settings(max_examples=10, deadline=None)
@given(seed=st.integers(min_value=0, max_value=10_000))
def test_frame_mode_is_permutation_equivariant(seed):
    params = make_params(context_mode="frame", seed=1)
    rng = np.random.default_rng(seed)
    frames = random_frames(rng)
    perm = rng.permutation(4)
    base = sel.gate_logits(frames, params, STRIDE).data
    permuted = sel.gate_logits(_permute_slots(frames, perm), params, STRIDE).data
    nptest.assert_array_equal(permuted, base[perm])


def test_context_mode_is_not_permutation_invariant():
    params = make_params(context_mode="context", seed=2)
    rng = np.random.default_rng(6)
    frames = random_frames(rng)
    perm = np.asarray([1, 0, 3, 2])
    base = sel.gate_logits(frames, params, STRIDE).data
    permuted = sel.gate_logits(_permute_slots(frames, perm), params, STRIDE).data
    assert np.abs(permuted - base).max() > 1e-9


# ---------------------------------------------------------------------------
# select


def test_select_test_mode_is_deterministic_and_consistent():
    params = make_params(open_bias=0.5)
    rng = np.random.default_rng(7)
    frames = random_frames(rng)
    r1 = sel.select(frames, params, "test", STRIDE)
    r2 = sel.select(frames, params, "test", STRIDE)
    assert r1.selected_indices == r2.selected_indices
    nptest.assert_array_equal(r1.activated.data, r2.activated.data)
    assert r1.selected_indices == [i for i, d in enumerate(r1.decisions) if d.open]
    assert r1.selected_indices == sorted(r1.selected_indices)
    for i, d in enumerate(r1.decisions):
        assert d.open == (d.logit > 0.0)
        assert d.activated in (0.0, 1.0)
        assert not d.noise_used


def test_select_train_mode_reproducible_under_seed():
    params = make_params()
    frames = random_frames(np.random.default_rng(8))
    r1 = sel.select(frames, params, "train", STRIDE, rng=np.random.default_rng(99))
    r2 = sel.select(frames, params, "train", STRIDE, rng=np.random.default_rng(99))
    assert r1.selected_indices == r2.selected_indices
    nptest.assert_array_equal(r1.activated.data, r2.activated.data)


def test_select_train_mode_requires_rng():
    params = make_params()
    with pytest.raises(ContractError):
        sel.select(random_frames(np.random.default_rng(0)), params, "train", STRIDE)


def test_select_unknown_mode_is_domain_error():
    params = make_params()
    with pytest.raises(DomainError):
        sel.select(random_frames(np.random.default_rng(0)), params, "eval", STRIDE)


def test_select_train_activated_matches_decisions():
    params = make_params()
    frames = random_frames(np.random.default_rng(10))
    res = sel.select(frames, params, "train", STRIDE, rng=np.random.default_rng(1))
    for i, d in enumerate(res.decisions):
        assert res.activated.data[i] == d.activated
        if d.open:
            assert 0.5 < d.activated <= 1.0
        else:
            assert d.activated == 0.0


def test_zero_noise_train_selection_equals_test_selection():
    params = make_params(open_bias=0.3)
    frames = random_frames(np.random.default_rng(11))
    alphas = sel.gate_logits(frames, params, STRIDE)
    value, mask = gt.activate_train_batch(alphas, np.zeros_like(alphas.data))
    test_res = sel.select(frames, params, "test", STRIDE)
    assert list(np.where(mask)[0]) == test_res.selected_indices


# ---------------------------------------------------------------------------
# top-k override


def test_top_k_ranks_by_activation_with_lower_index_ties():
    decisions = [
        gt.GateDecision(logit=0.5, value=Tensor(np.asarray(1.0)), open=True, noise_used=False),
        gt.GateDecision(logit=2.0, value=Tensor(np.asarray(1.0)), open=True, noise_used=False),
        gt.GateDecision(logit=0.5, value=Tensor(np.asarray(1.0)), open=True, noise_used=False),
        gt.GateDecision(logit=-1.0, value=Tensor(np.asarray(0.0)), open=False, noise_used=False),
    ]
    res = sel.SelectionResult(decisions, [0, 1, 2], Tensor(np.asarray([1.0, 1.0, 1.0, 0.0])))
    assert sel.top_k_indices(res, 1) == [1]
    assert sel.top_k_indices(res, 2) == [0, 1]   # tie at 0.5 goes to index 0
    assert sel.top_k_indices(res, 3) == [0, 1, 2]
    assert sel.top_k_indices(res, 4) == [0, 1, 2, 3]


def test_top_k_budget_out_of_range():
    params = make_params()
    res = sel.select(random_frames(np.random.default_rng(0)), params, "test", STRIDE)
    with pytest.raises(DomainError):
        sel.top_k_indices(res, 0)
    with pytest.raises(DomainError):
        sel.top_k_indices(res, 5)


# ---------------------------------------------------------------------------
# gradients through the whole selection stack


def test_selection_gradient_reaches_all_selector_params():
    params = make_params(context_mode="context", open_bias=2.0)
    frames = random_frames(np.random.default_rng(12))
    with ad.record() as rec:
        res = sel.select(frames, params, "train", STRIDE, rng=np.random.default_rng(2))
        loss = ad.reduce_sum(res.activated, axis=0)
    assert res.selected_indices, "expected at least one open gate with open bias 2"
    ad.backward(loss, rec)
    for name, p in params.named_parameters().items():
        assert p.grad is not None, name
    assert np.abs(params.bank.kernels.grad).max() > 0.0
    assert np.abs(params.enc_w1.grad).max() > 0.0
    assert np.abs(params.attn_q.grad).max() > 0.0


def test_selection_fd_gradient_with_frozen_noise():
    params = make_params(context_mode="context", channels=3, n_kernels=4,
                         timesteps=3, segment_len=4, d_raw=4, seed=5, open_bias=1.0)
    frames = np.random.default_rng(13).standard_normal((3 * STRIDE, 4))
    noises = gt.sample_gate_noise_batch(np.random.default_rng(21), 3).reshape(3, 1)

    def f(_):
        alphas = sel.gate_logits(frames, params, STRIDE)
        value, _mask = gt.activate_train_batch(alphas, noises)
        return ad.reduce_sum(ad.reshape(value, (3,)), axis=0)

    # keep the check honest: no gate may sit within 1e-2 of its threshold
    alphas = sel.gate_logits(frames, params, STRIDE).data
    assert np.abs(alphas + noises).min() > 1e-2
    assert ad.finite_diff_check(f, params.bank.kernels) < 1e-4
    assert ad.finite_diff_check(f, params.attn_v) < 1e-4
    assert ad.finite_diff_check(f, params.enc_w2) < 1e-4
