"""Joint distribution optimal transport."""
import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from shiftkit.adapters.base import adapter_errors, target_features
from shiftkit.classifiers import (
    FeedForwardNet,
    PROB_FLOOR,
    cce_backward,
    cce_loss,
    epoch_batches,
    sgd_step,
    train_erm,
)
from shiftkit.core import LabeledDataset, Rng
from shiftkit.exceptions import InputDomainError
from shiftkit.schemas import Architecture, JdotConfig
from shiftkit.transport import CostMatrix, TransportPlan, cost_matrix, solve_ot_exact

log = logging.getLogger(__name__)

OBJECTIVE_SLACK = 1e-6


@dataclass
class JdotResult:
    """Trained classifier, objective trace, and the last transport plan.

    `rejected` lists outer iterations whose classifier step was rejected
    at every learning rate; `flagged` lists iterations where the objective
    rose by more than the slack.
    """

    net: FeedForwardNet
    objective: list[float]
    plan: TransportPlan
    rejected: list[int] = field(default_factory=list)
    flagged: list[int] = field(default_factory=list)


def jdot_cost(
    X_s: np.ndarray,
    Y_s: np.ndarray,
    X_t: np.ndarray,
    probs_t: np.ndarray,
    alpha: float,
    beta: float,
) -> CostMatrix:
    """C_ij = α‖x_i − x_j‖² + β·CCE(y_i, h(x_j))."""
    features = cost_matrix(X_s, X_t).values
    labels = -Y_s @ np.log(np.clip(probs_t, PROB_FLOOR, 1.0)).T
    return CostMatrix(
        alpha * features + beta * labels, f"jdot(alpha={alpha}, beta={beta})"
    )


def default_architecture(source: LabeledDataset) -> Architecture:
    return Architecture.classifier(source.n_features, source.class_count)


def warm_start(
    source: LabeledDataset, cfg: JdotConfig, architecture: Optional[Architecture]
) -> FeedForwardNet:
    """Source ERM for `cfg.warm_start_epochs` epochs from a seeded init."""
    architecture = architecture or default_architecture(source)
    net = FeedForwardNet.initialize(architecture, Rng(cfg.train.seed).child(1))
    warm_cfg = cfg.train.copy(update={"epochs": cfg.warm_start_epochs})
    return train_erm(net, source, warm_cfg).net


def jdot_plan(
    net: FeedForwardNet,
    X_s: np.ndarray,
    Y_s: np.ndarray,
    row_w: np.ndarray,
    X_t: np.ndarray,
    cfg: JdotConfig,
) -> TransportPlan:
    """The γ-step: exact OT under the current classifier's ground cost."""
    C = jdot_cost(X_s, Y_s, X_t, net.forward(X_t), cfg.alpha, cfg.beta)
    return solve_ot_exact(row_w, np.full(X_t.shape[0], 1 / X_t.shape[0]), C)


def jdot_h_step(
    net: FeedForwardNet,
    plan: TransportPlan,
    Y_s: np.ndarray,
    X_t: np.ndarray,
    cfg: JdotConfig,
    rng: Rng,
) -> tuple[FeedForwardNet, bool]:
    """The h-step: fit target points to plan-transported source labels.

    Minimizes Σ_j b_j CCE(T_j / b_j, h(x_j)) with T = γᵀY_s and column mass
    b. A candidate is accepted only if it lowers that loss; otherwise the
    learning rate is halved and the step retried.

    Returns:
        The (possibly unchanged) network and whether a step was accepted.
    """
    transported = plan.values.T @ Y_s
    mass = plan.col_marginal
    soft = transported / mass[:, None]
    before = cce_loss(net.forward(X_t), soft, mass)

    lr = cfg.train.lr
    for attempt in range(cfg.max_rejections + 1):
        candidate = net.copy()
        batch_rng = rng.child(attempt)
        for _ in range(cfg.inner_epochs):
            for batch in epoch_batches(X_t.shape[0], cfg.train.batch_size, batch_rng):
                grad = candidate.zero_grad()
                weights = mass[batch] / mass[batch].sum()
                cce_backward(candidate, X_t[batch], soft[batch], grad, weights=weights)
                sgd_step(candidate, grad, cfg.train, lr=lr)
        after = cce_loss(candidate.forward(X_t), soft, mass)
        if after < before:
            return candidate, True
        log.debug(
            "Rejected classifier step (%.6g ≥ %.6g) at lr %.3g.", after, before, lr
        )
        lr /= 2
    return net, False


@adapter_errors("JDOT")
def jdot_fit(
    source: LabeledDataset,
    target: np.ndarray,
    cfg: JdotConfig = JdotConfig(),
    architecture: Optional[Architecture] = None,
) -> JdotResult:
    """Alternates exact OT on the joint cost with classifier updates.

    The classifier is warm-started on the source, then each outer iteration
    solves for γ with h fixed and updates h with γ fixed. The objective
    trace records min_γ ⟨γ, C(h)⟩ at every γ-step.

    Raises:
        InputDomainError: If the source is empty.
    """
    X_t = target_features(target)
    if source.n == 0:
        raise InputDomainError("JDOT needs a nonempty source.")
    row_w = np.full(source.n, 1 / source.n)
    net = warm_start(source, cfg, architecture)
    Y_s = source.one_hot
    return _alternate(net, source.features, Y_s, row_w, X_t, cfg)


def _alternate(
    net: FeedForwardNet,
    X_s: np.ndarray,
    Y_s: np.ndarray,
    row_w: np.ndarray,
    X_t: np.ndarray,
    cfg: JdotConfig,
) -> JdotResult:
    result = JdotResult(net=net, objective=[], plan=None)
    step_rng = Rng(cfg.train.seed).child(2)
    for outer in range(cfg.outer_iters):
        plan = jdot_plan(result.net, X_s, Y_s, row_w, X_t, cfg)
        if result.objective and plan.cost > result.objective[-1] + OBJECTIVE_SLACK:
            result.flagged.append(outer)
        result.objective.append(plan.cost)
        result.plan = plan
        result.net, accepted = jdot_h_step(
            result.net, plan, Y_s, X_t, cfg, step_rng.child(outer)
        )
        if not accepted:
            result.rejected.append(outer)
    return result
