"""Shared fixtures: small synthetic scenes and a fast model configuration."""

import numpy as np
import pytest

from protomix.data import (
    SplitSpec,
    augment_target,
    extract_all_patches,
    split_few_shot,
    synth_dataset,
)
from protomix.episodes import EpisodeConfig
from protomix.model import TransformerConfig
from protomix.training import TrainConfig

TINY_MODEL = TransformerConfig(d_model=8, n_heads=2, d_head=4, d_feed=8,
                               n_encoders=2, patch_size=3)


def make_target_pools(seed=0, n_classes=3, bands=4, size=18, noise=0.02,
                      shots=3, augment_to=12, patch_size=3):
    """Synthetic scene split into labeled/test pools plus the augmented pool."""
    cube, labels = synth_dataset(n_classes, bands, (1, n_classes), noise,
                                 seed=seed, width=size, height=size)
    samples = extract_all_patches(cube, labels, patch_size)
    spec = SplitSpec(shots_per_class=shots, augment_to=augment_to, seed=seed)
    labeled, test = split_few_shot(samples, spec)
    reference = augment_target(labeled, spec, seed=seed)
    return cube, labels, labeled, test, reference


def tiny_train_cfg(**overrides):
    defaults = dict(total_iterations=10, source_iterations=0, mode="apnt*",
                    mix_mode="transmix", seed=0)
    defaults.update(overrides)
    return TrainConfig(**defaults)


def tiny_episode_cfg(**overrides):
    defaults = dict(n_way=3, k_shot=2, m_query=3, seed=0)
    defaults.update(overrides)
    return EpisodeConfig(**defaults)


@pytest.fixture(scope="session")
def target_pools():
    return make_target_pools()
