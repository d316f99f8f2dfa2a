"""Shared fixtures for shiftkit tests."""
import numpy as np
import pytest

from shiftkit.core import LabeledDataset, Rng
from shiftkit.datasets import gen_synthetic_modes, translation_family
from shiftkit.schemas import Architecture, TrainConfig


@pytest.fixture
def rng():
    return Rng(0)


@pytest.fixture
def blobs():
    """Two well-separated 2-D classes, 20 points each."""
    generator = Rng(7).generator
    features = np.vstack(
        [
            generator.normal([-2.0, 0.0], 0.3, size=(20, 2)),
            generator.normal([2.0, 0.0], 0.3, size=(20, 2)),
        ]
    )
    labels = np.repeat([0, 1], 20)
    return LabeledDataset(features, labels, class_count=2, domain_id="blobs")


@pytest.fixture
def shifted_blobs(blobs):
    """`blobs` translated by one unit along the second axis."""
    return LabeledDataset(
        blobs.features + np.array([0.0, 1.0]),
        blobs.labels,
        class_count=2,
        domain_id="shifted",
    )


@pytest.fixture
def three_modes():
    """Three small translated modes with three classes each."""
    specs = translation_family(n_modes=3, n_classes=3, shift=1.0)
    return gen_synthetic_modes(specs, 30, Rng(3))


@pytest.fixture
def tiny_train():
    """A short training schedule for fast tests."""
    return TrainConfig(lr=0.1, batch_size=16, epochs=5, seed=0)


@pytest.fixture
def tiny_arch():
    """Factory for small classifier architectures."""

    def make(input_dim: int, n_classes: int, **heads) -> Architecture:
        return Architecture.classifier(
            input_dim, n_classes, hidden_dims=(6,), latent_dim=4, **heads
        )

    return make
