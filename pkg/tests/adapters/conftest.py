"""Fixtures for adapter tests."""
import numpy as np
import pytest


@pytest.fixture
def numeric_grad():
    """Central-difference gradient of a scalar function of a flat vector."""

    def grad(loss_fn, params, indices, step=1e-6):
        values = []
        for idx in indices:
            bumped = params.copy()
            bumped[idx] += step
            lowered = params.copy()
            lowered[idx] -= step
            values.append((loss_fn(bumped) - loss_fn(lowered)) / (2 * step))
        return np.array(values)

    return grad


@pytest.fixture
def sources(three_modes):
    """The first two synthetic modes."""
    return three_modes[:2]


@pytest.fixture
def target(three_modes):
    """Unlabeled features of the third synthetic mode."""
    return three_modes[2].features
