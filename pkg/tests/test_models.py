import numpy as np
import pytest

from conftest import tiny_config
from stepgate.harness.models import (ModelBundle, build_bundle,
                                     selection_stride,
                                     training_sample_budget)


@pytest.mark.parametrize("mode,groups", [
    ("standalone", {"selector", "light_head", "classifier"}),
    ("e2e", {"selector", "classifier"}),
    ("frame_conditioned", {"selector", "classifier"}),
    ("scsampler", {"scorer", "classifier"}),
    ("uniform", {"classifier"}),
    ("random", {"classifier"}),
])
def test_bundle_holds_the_mode_parameter_groups(mode, groups):
    bundle = build_bundle(tiny_config(mode))
    assert bundle.mode == mode
    present = {name for name in ("selector", "light_head", "classifier", "scorer")
               if getattr(bundle, name) is not None}
    assert present == groups
    prefixes = {name.split(".")[0] for name in bundle.named_parameters()}
    assert prefixes == groups


def test_context_mode_follows_the_experiment_mode():
    assert build_bundle(tiny_config("e2e")).selector.config.context_mode == "context"
    assert build_bundle(
        tiny_config("frame_conditioned")).selector.config.context_mode == "frame"
    assert build_bundle(tiny_config("standalone")).selector.config.context_mode == "context"


def test_build_is_deterministic_per_seed():
    a = build_bundle(tiny_config("e2e"))
    b = build_bundle(tiny_config("e2e"))
    for (na, ta), (nb, tb) in zip(a.named_parameters().items(),
                                  b.named_parameters().items()):
        assert na == nb
        np.testing.assert_array_equal(ta.data, tb.data)
    c = build_bundle(tiny_config("e2e", seed=1))
    flat = np.concatenate([t.data.ravel() for t in a.named_parameters().values()])
    flat_c = np.concatenate([t.data.ravel() for t in c.named_parameters().values()])
    assert not np.array_equal(flat, flat_c)


def test_parameter_names_are_unique_and_prefixed():
    names = list(build_bundle(tiny_config("standalone")).named_parameters())
    assert len(names) == len(set(names))
    assert all("." in n for n in names)


def test_selection_stride_is_frames_per_slot():
    cfg = tiny_config("e2e")
    assert selection_stride(cfg) == cfg.dataset.frames_per_slot


def test_training_sample_budget_default_and_override():
    cfg = tiny_config("uniform")
    assert training_sample_budget(cfg) == max(1, round(cfg.dataset.timesteps / 4))
    cfg.training.sample_budget = 5
    assert training_sample_budget(cfg) == 5


def test_empty_bundle_has_no_parameters():
    assert ModelBundle(mode="uniform").named_parameters() == {}
