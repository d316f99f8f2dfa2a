"""Wasserstein barycenter transport."""
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from shiftkit.adapters.base import adapter_errors, multi_source, target_features
from shiftkit.classifiers import FeedForwardNet, train_erm
from shiftkit.core import LabeledDataset, Rng, SimplexWeights, as_empirical
from shiftkit.schemas import Architecture, TrainConfig, WbtConfig
from shiftkit.transport import (
    Barycenter,
    barycentric_map,
    cost_matrix,
    default_solver,
    free_support_barycenter,
    solve_ot,
)


@dataclass
class WbtResult:
    """The transported barycenter, its source barycenter, and the classifier."""

    transported: LabeledDataset
    barycenter: Barycenter
    net: Optional[FeedForwardNet] = None


@adapter_errors("WBT")
@multi_source(1)
def wbt_fit(
    sources: Sequence[LabeledDataset],
    target: np.ndarray,
    cfg: WbtConfig = WbtConfig(),
    rng: Rng = Rng(0),
    train: Optional[TrainConfig] = None,
    architecture: Optional[Architecture] = None,
) -> WbtResult:
    """Pools the sources into a labeled barycenter, then transports it to the target.

    The barycenter uses uniform weights 1/N. Its support is mapped onto the
    target by barycentric projection and labelled by the argmax of its
    soft labels. With `cfg.solver` set to Sinkhorn, both the barycenter and
    the final transport are entropic. A classifier is trained on the
    transported set when `train` is given.

    Args:
        cfg: `n_bary=None` uses the mean source size (at least the class count).
        rng: Stream for the barycenter initialization.
    """
    X_t = target_features(target)
    n_classes = sources[0].class_count
    n_bary = cfg.n_bary or int(round(np.mean([ds.n for ds in sources])))
    n_bary = max(n_bary, n_classes)

    barycenter = free_support_barycenter(
        [as_empirical(ds) for ds in sources],
        SimplexWeights.uniform(len(sources)),
        cfg.beta,
        n_bary,
        rng.child(0),
        cfg.max_iter,
        cfg.tol,
        label_mode=cfg.label_cost,
        solver=cfg.solver,
    )
    plan = solve_ot(
        np.full(n_bary, 1 / n_bary),
        np.full(X_t.shape[0], 1 / X_t.shape[0]),
        cost_matrix(barycenter.support, X_t),
        default_solver(n_bary, X_t.shape[0], cfg.solver),
    )
    transported = LabeledDataset(
        features=barycentric_map(plan, X_t),
        labels=np.argmax(barycenter.labels, axis=1),
        class_count=n_classes,
    )

    net = None
    if train is not None:
        architecture = architecture or Architecture.classifier(
            transported.n_features, n_classes
        )
        init = FeedForwardNet.initialize(architecture, Rng(train.seed).child(1))
        net = train_erm(init, transported, train).net
    return WbtResult(transported=transported, barycenter=barycenter, net=net)
