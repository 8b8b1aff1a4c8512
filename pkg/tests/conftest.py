import pytest

from stepgate.harness.config import (DatasetConfig, EvalConfig,
                                     ExperimentConfig, ModelConfig,
                                     TrainingConfig)
from stepgate.harness.training import spec_from_config
from stepgate.synthdata import generate_dataset


def tiny_config(mode="e2e", **overrides) -> ExperimentConfig:
    """Smallest experiment that still exercises every code path."""
    cfg = ExperimentConfig(
        mode=mode,
        seed=0,
        dataset=DatasetConfig(n_train=12, n_test=6, n_classes=3, n_shared=2,
                              n_background=2, d_raw=6, timesteps=6,
                              frames_per_slot=2, noise_sigma=0.3,
                              relevant_fraction=0.34, confuser_share=0.35),
        model=ModelConfig(light_channels=8, heavy_channels=4, n_kernels=8,
                          gate_hidden=4, segment_len=2, open_bias=2.0),
        training=TrainingConfig(batch_size=6, epochs=2, lr=1e-3, eps=1e-4),
        eval=EvalConfig(),
    )
    for key, val in overrides.items():
        section, _, field = key.partition(".")
        if field:
            setattr(getattr(cfg, section), field, val)
        else:
            setattr(cfg, section, val)
    return cfg


@pytest.fixture(scope="session")
def tiny_cfg():
    return tiny_config()


@pytest.fixture(scope="session")
def tiny_data(tiny_cfg):
    d = tiny_cfg.dataset
    return generate_dataset(spec_from_config(tiny_cfg), d.n_train, d.n_test,
                            tiny_cfg.seed)
