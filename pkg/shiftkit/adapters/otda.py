"""Optimal transport domain adaptation by barycentric mapping."""
from typing import Optional

import numpy as np

from shiftkit.adapters.base import adapter_errors, target_features
from shiftkit.core import LabeledDataset
from shiftkit.exceptions import InputDomainError
from shiftkit.schemas import SolverSpec
from shiftkit.transport import TransportPlan, barycentric_map, cost_matrix, solve_ot


@adapter_errors("OTDA")
def otda_plan(
    source: LabeledDataset, target: np.ndarray, solver: Optional[SolverSpec] = None
) -> TransportPlan:
    """Uniform-marginal OT plan from source features to target features."""
    X_t = target_features(target)
    if source.n == 0:
        raise InputDomainError("OTDA needs a nonempty source.")
    return solve_ot(
        np.full(source.n, 1 / source.n),
        np.full(X_t.shape[0], 1 / X_t.shape[0]),
        cost_matrix(source.features, X_t),
        solver,
    )


def otda_adapt(
    source: LabeledDataset, target: np.ndarray, solver: Optional[SolverSpec] = None
) -> LabeledDataset:
    """Transports labeled source samples onto the target distribution.

    Labels are carried along unchanged; each feature row becomes a convex
    combination of target rows.
    """
    X_t = target_features(target)
    plan = otda_plan(source, X_t, solver)
    return source.with_features(barycentric_map(plan, X_t))
