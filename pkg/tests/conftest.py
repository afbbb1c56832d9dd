import sys
from pathlib import Path

import numpy as np
import pytest
import torch

sys.path.insert(0, str(Path(__file__).parent))

from bgcrack.backbone import BackboneConfig
from bgcrack.data import SynthConfig, generate_synthetic
from bgcrack.decoder import ModelConfig
from bgcrack.engine import TrainConfig, train
from bgcrack.gip import GipConfig
from bgcrack.losses import LossConfig


def small_model_config(**overrides):
    """A narrow configuration for CPU-speed training tests."""
    kwargs = dict(
        backbone=BackboneConfig(stem_channels=8, stage_channels=[16, 32, 48, 64]),
        gip=GipConfig(depth=1, heads=2),
        embed_channels=16,
    )
    kwargs.update(overrides)
    return ModelConfig(**kwargs)


def fill_params(module, seed, scale=0.25):
    """Deterministically overwrite every parameter and BN statistic."""
    rng = np.random.default_rng(seed)
    with torch.no_grad():
        for p in module.parameters():
            p.copy_(torch.from_numpy(
                rng.uniform(-scale, scale, size=tuple(p.shape))).to(p.dtype))
        for name, buf in module.named_buffers():
            if name.endswith("running_var"):
                buf.copy_(torch.from_numpy(
                    rng.uniform(0.5, 1.5, size=tuple(buf.shape))).to(buf.dtype))
            elif name.endswith("running_mean"):
                buf.copy_(torch.from_numpy(
                    rng.uniform(-scale, scale, size=tuple(buf.shape))).to(buf.dtype))
    return module


@pytest.fixture(scope="session")
def overfit_run(tmp_path_factory):
    """Memorization run reused by the acceptance and visualization tests:
    10 synthetic 64x64 images, 200 Adam steps at the stock optimizer settings."""
    records = generate_synthetic(SynthConfig(n_images=10, size=64, seed=7))
    out_dir = tmp_path_factory.mktemp("overfit")
    cfg = TrainConfig(
        out_dir=str(out_dir),
        lr=6e-3, batch_size=5, epochs=100,  # 2 steps/epoch -> 200 steps
        seed=11, use_augment=False,
        model=small_model_config(),
        loss=LossConfig(),
    )
    model, log = train(cfg, train_records=records, val_records=[])
    return model, records, log, out_dir
