"""Tests for transfer component analysis."""
import numpy as np
import pytest

from shiftkit.adapters.tca import tca_adapt, tca_fit, tca_transform
from shiftkit.exceptions import InputDomainError, UnsupportedModeError
from shiftkit.schemas import KernelKind, KernelSpec


@pytest.fixture
def model(blobs, shifted_blobs):
    return tca_fit(blobs.features, shifted_blobs.features, n_components=2)


def test_tca_fit__linear_components(model):
    assert model.n_components == 2
    assert model.W.shape == (80, 2)
    assert np.all(np.diff(model.eigenvalues) >= 0)


def test_tca_fit__leading_component_ignores_shift(model):
    # The shift runs along the second axis; the classes split along the first.
    projected = tca_transform(model, model.joint)[:, 0]
    gap = abs(projected[:40].mean() - projected[40:].mean())
    assert gap < 0.1 * projected.std()


def test_tca_fit__rbf_kernel_resolves_sigma(blobs, shifted_blobs):
    model = tca_fit(
        blobs.features,
        shifted_blobs.features,
        KernelSpec(kind=KernelKind.RBF),
        n_components=3,
    )
    assert model.kernel.sigma is not None
    assert model.n_components <= 3


def test_tca_fit__too_many_components(blobs, shifted_blobs):
    with pytest.raises(InputDomainError, match="Cannot extract 81 components"):
        tca_fit(blobs.features, shifted_blobs.features, n_components=81)


def test_tca_fit__negative_mu(blobs, shifted_blobs):
    with pytest.raises(InputDomainError, match="nonnegative"):
        tca_fit(blobs.features, shifted_blobs.features, mu=-1.0)


def test_tca_transform__out_of_sample(model):
    with pytest.raises(UnsupportedModeError, match="transductive"):
        tca_transform(model, np.array([[10.0, 10.0]]))
    extended = tca_transform(model, np.array([[10.0, 10.0]]), extend=True)
    assert extended.shape == (1, 2)


def test_tca_adapt__splits_projection(blobs, shifted_blobs):
    source, target, model = tca_adapt(blobs, shifted_blobs.features, n_components=2)
    assert source.features.shape == (40, 2)
    assert target.shape == (40, 2)
    np.testing.assert_array_equal(source.labels, blobs.labels)
    np.testing.assert_allclose(
        np.vstack([source.features, target]), tca_transform(model, model.joint)
    )
