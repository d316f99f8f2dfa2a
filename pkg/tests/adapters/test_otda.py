"""Tests for OT domain adaptation."""
import numpy as np

from shiftkit.adapters.otda import otda_adapt, otda_plan
from shiftkit.schemas import SolverKind, SolverSpec


def test_otda_adapt__translation_maps_pointwise(blobs, shifted_blobs):
    adapted = otda_adapt(blobs, shifted_blobs.features)
    np.testing.assert_allclose(adapted.features, shifted_blobs.features, atol=1e-9)
    np.testing.assert_array_equal(adapted.labels, blobs.labels)


def test_otda_plan__uniform_marginals(blobs, shifted_blobs):
    plan = otda_plan(blobs, shifted_blobs.features[:25])
    np.testing.assert_allclose(plan.row_marginal, np.full(40, 1 / 40), atol=1e-12)
    np.testing.assert_allclose(plan.col_marginal, np.full(25, 1 / 25), atol=1e-12)


def test_otda_adapt__sinkhorn_stays_in_target_hull(blobs, shifted_blobs):
    solver = SolverSpec(kind=SolverKind.SINKHORN, epsilon=0.5)
    adapted = otda_adapt(blobs, shifted_blobs.features, solver)
    lower = shifted_blobs.features.min(axis=0)
    upper = shifted_blobs.features.max(axis=0)
    assert np.all(adapted.features >= lower - 1e-9)
    assert np.all(adapted.features <= upper + 1e-9)
