import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import tiny_config
from stepgate.errors import ConfigError, ContractError, DomainError
from stepgate.harness.checkpoint import Checkpoint
from stepgate.harness.evaluation import (accuracy, average_precision,
                                         cost_registry_for,
                                         evaluate_bundle,
                                         evaluate_checkpoint, mean_ap)
from stepgate.harness.models import build_bundle


# ---------------------------------------------------------------------------
# metric oracles


def test_accuracy_oracle():
    assert accuracy([1, 2, 0, 1], [1, 2, 2, 1]) == pytest.approx(0.75)
    assert accuracy([0], [0]) == 1.0
    with pytest.raises(DomainError):
        accuracy([1, 2], [1])
    with pytest.raises(DomainError):
        accuracy([], [])


def test_average_precision_hand_computed():
    # positives land at ranks 1 and 3: (1/1 + 2/3) / 2
    assert average_precision([0.9, 0.8, 0.7, 0.6],
                             [1, 0, 1, 0]) == pytest.approx(5 / 6)
    assert average_precision([0.1, 0.9], [1, 0]) == pytest.approx(0.5)
    assert average_precision([0.5, 0.6], [1, 1]) == 1.0
    # worst ordering: positives at the bottom
    assert average_precision([0.9, 0.8, 0.1],
                             [0, 0, 1]) == pytest.approx(1 / 3)


def test_average_precision_ties_keep_input_order():
    assert average_precision([0.5, 0.5], [1, 0]) == 1.0
    assert average_precision([0.5, 0.5], [0, 1]) == pytest.approx(0.5)


@given(st.lists(st.tuples(st.integers(-20, 20), st.booleans()),
                min_size=2, max_size=30).filter(
                    lambda rows: any(t for _, t in rows)))
@settings(max_examples=60, deadline=None)
def test_average_precision_invariants(rows):
    # integer scores keep ties exact under the affine transform below
    scores = [float(s) for s, _ in rows]
    targets = [int(t) for _, t in rows]
    ap = average_precision(scores, targets)
    assert 0.0 < ap <= 1.0
    shifted = average_precision([3.0 * s + 7.0 for s in scores], targets)
    assert ap == pytest.approx(shifted)   # monotone transforms change nothing
    if all(targets):
        assert ap == 1.0


def test_average_precision_needs_a_positive():
    with pytest.raises(DomainError):
        average_precision([0.4, 0.2], [0, 0])


def test_mean_ap_averages_and_skips_empty_classes():
    scores = np.asarray([[0.9, 0.1, 0.3],
                         [0.2, 0.8, 0.4],
                         [0.7, 0.6, 0.5]])
    targets = np.asarray([[1.0, 0.0, 0.0],
                          [0.0, 1.0, 0.0],
                          [1.0, 0.0, 0.0]])
    with pytest.warns(UserWarning, match=r"classes \[2\]"):
        value, skipped = mean_ap(scores, targets)
    assert skipped == [2]
    expected = (average_precision(scores[:, 0], targets[:, 0])
                + average_precision(scores[:, 1], targets[:, 1])) / 2
    assert value == pytest.approx(expected)
    with pytest.raises(DomainError):
        mean_ap(scores, targets[:, :2])


# ---------------------------------------------------------------------------
# evaluate_bundle


@pytest.fixture(scope="module")
def e2e_setup(tiny_data):
    cfg = tiny_config("e2e")
    cfg.eval.budgets = [1, 3]
    return cfg, build_bundle(cfg), tiny_data


def test_report_structure(e2e_setup):
    cfg, bundle, data = e2e_setup
    report = evaluate_bundle(bundle, cfg, data.test)
    assert [e.budget for e in report.entries] == [None, 1, 3]
    assert report.n_videos == len(data.test)
    assert set(report.per_video_counts) == {"gate-count", "topk-1", "topk-3"}
    nat = report.entries[0]
    assert nat.metric_name == "accuracy"
    assert 0.0 <= nat.value <= 1.0
    # fresh selector with positive open bias keeps every gate open
    assert nat.mean_selected == cfg.dataset.timesteps
    assert nat.mean_ratio == 1.0


def test_topk_entries_select_exactly_k(e2e_setup):
    cfg, bundle, data = e2e_setup
    report = evaluate_bundle(bundle, cfg, data.test)
    for k in (1, 3):
        entry = report.entry(k)
        assert entry.mean_selected == k
        assert entry.mean_ratio == pytest.approx(k / cfg.dataset.timesteps)
        assert all(c == k for c in report.per_video_counts[f"topk-{k}"])
    with pytest.raises(DomainError):
        report.entry(5)


def test_heavy_rows_instrumentation_counts_selected_rows(e2e_setup):
    cfg, bundle, data = e2e_setup
    report = evaluate_bundle(bundle, cfg, data.test)
    assert report.entry(1).heavy_rows == len(data.test)
    assert report.entry(3).heavy_rows == 3 * len(data.test)


def test_cost_scales_with_budget(e2e_setup):
    cfg, bundle, data = e2e_setup
    report = evaluate_bundle(bundle, cfg, data.test)
    c1, c3 = report.entry(1).cost, report.entry(3).cost
    assert c1.n_heavy == 1 and c3.n_heavy == 3
    assert c1.n_light == c3.n_light == cfg.dataset.timesteps
    assert c3.total_gflops > c1.total_gflops
    registry = cost_registry_for(cfg)
    assert registry.rate("desk_heavy") > 0
    assert c1.heavy_gflops == pytest.approx(registry.rate("desk_heavy"))


def test_evaluation_is_deterministic(e2e_setup):
    cfg, bundle, data = e2e_setup
    a = evaluate_bundle(bundle, cfg, data.test)
    b = evaluate_bundle(bundle, cfg, data.test)
    for ea, eb in zip(a.entries, b.entries):
        assert ea.value == eb.value
        assert ea.mean_selected == eb.mean_selected


def test_random_mode_reuses_the_per_video_eval_stream(tiny_data):
    cfg = tiny_config("random")
    bundle = build_bundle(cfg)
    a = evaluate_bundle(bundle, cfg, tiny_data.test)
    b = evaluate_bundle(bundle, cfg, tiny_data.test)
    assert a.entries[0].value == b.entries[0].value
    cfg2 = tiny_config("random", seed=1)
    c = evaluate_bundle(build_bundle(cfg2), cfg2, tiny_data.test)
    assert c.entries[0].mean_selected == a.entries[0].mean_selected


def test_multi_label_reports_map():
    from stepgate.harness.training import spec_from_config
    from stepgate.synthdata import generate_dataset
    cfg = tiny_config("e2e", **{"dataset.task": "multi_label"})
    data = generate_dataset(spec_from_config(cfg), 6, 12, cfg.seed)
    bundle = build_bundle(cfg)
    report = evaluate_bundle(bundle, cfg, data.test)
    assert report.entries[0].metric_name == "mAP"
    assert report.task == "multi_label"
    assert 0.0 <= report.entries[0].value <= 1.0


def test_topk_selection_requires_budgets(e2e_setup):
    cfg, bundle, data = e2e_setup
    solo = tiny_config("e2e", **{"eval.selection": "topk"})
    with pytest.raises(ConfigError, match="non-empty budgets"):
        evaluate_bundle(bundle, solo, data.test)
    solo.eval.budgets = [2]
    report = evaluate_bundle(bundle, solo, data.test)
    assert [e.budget for e in report.entries] == [2]


def test_empty_video_list_is_rejected(e2e_setup):
    cfg, bundle, _ = e2e_setup
    with pytest.raises(ContractError):
        evaluate_bundle(bundle, cfg, [])


def test_evaluate_checkpoint_matches_bundle_evaluation(e2e_setup):
    cfg, bundle, data = e2e_setup
    ckpt = Checkpoint.from_bundle(cfg, bundle, step=0)
    via_ckpt = evaluate_checkpoint(ckpt, data)
    direct = evaluate_bundle(bundle, cfg, data.test)
    assert via_ckpt.entries[0].value == direct.entries[0].value
    train_side = evaluate_checkpoint(ckpt, data, split="train")
    assert train_side.n_videos == len(data.train)
    with pytest.raises(DomainError):
        evaluate_checkpoint(ckpt, data, split="validation")
