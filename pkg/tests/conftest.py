import numpy as np
import pytest

from cbmaudit.data import split_dataset
from cbmaudit.models import TrainConfig, train_independent
from cbmaudit.synth import default_spec, generate_factorized_task


@pytest.fixture(scope="session")
def small_factorized():
    """Tiny noise-free factorized task, 2 scalar concepts on disjoint supports."""
    spec = default_spec(d=8, k_groups=2, n=1200, leak_strength=0.0,
                        noise_std=0.0, seed=3)
    dataset = generate_factorized_task(spec)
    split = split_dataset(dataset, (0.7, 0.15, 0.15), 0)
    return spec, dataset, split


@pytest.fixture(scope="session")
def small_leaky():
    spec = default_spec(d=12, k_groups=2, n=1500, leak_strength=0.5,
                        noise_std=0.05, seed=5)
    dataset = generate_factorized_task(spec)
    split = split_dataset(dataset, (0.7, 0.15, 0.15), 0)
    return spec, dataset, split


@pytest.fixture(scope="session")
def quick_config():
    return TrainConfig(seed=0, epochs=60, patience=60, batch_size=256)


@pytest.fixture(scope="session")
def small_independent_model(small_factorized, quick_config):
    _, dataset, split = small_factorized
    return train_independent(dataset, split, quick_config)
