"""Shared fixtures: tiny network configurations sized for CPU-fast checks."""

import numpy as np
import pytest

from mitoscope.network import NetworkConfig, init_supervised, init_unsupervised


def tiny_config(**overrides):
    base = dict(frame_size=8, hidden_channels=2, event_classes=2,
                encoder_len=2, target_len=3, grid_factor=8)
    base.update(overrides)
    return NetworkConfig(**base)


def random_frames(rng, count, size):
    return [rng.uniform(0.05, 0.95, (1, size, size)) for _ in range(count)]


def perturb_model(model, rng, scale=0.3):
    """Give biases and peepholes nonzero values so every parameter has a
    live gradient path."""
    for name, arr in model.named_params():
        if ".b_" in name or ".w_c" in name or name.endswith(".b"):
            arr += rng.uniform(-scale, scale, arr.shape)
    return model


@pytest.fixture
def tiny_unsup_model():
    rng = np.random.default_rng(2024)
    return perturb_model(init_unsupervised(tiny_config(), seed=11), rng)


@pytest.fixture
def tiny_sup_model():
    rng = np.random.default_rng(2025)
    return perturb_model(init_supervised(tiny_config(), seed=12), rng)
