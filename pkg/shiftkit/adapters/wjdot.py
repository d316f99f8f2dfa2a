"""Weighted joint distribution optimal transport for multiple sources."""
import logging
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from shiftkit.adapters.base import adapter_errors, multi_source, target_features
from shiftkit.adapters.jdot import (
    OBJECTIVE_SLACK,
    jdot_cost,
    jdot_h_step,
    jdot_plan,
    warm_start,
)
from shiftkit.classifiers import FeedForwardNet
from shiftkit.core import LabeledDataset, Rng, SimplexWeights, concat
from shiftkit.schemas import Architecture, WjdotConfig
from shiftkit.transport import TransportPlan, solve_ot_exact

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class WjdotModel:
    """Source weights α and the classifier h."""

    alpha: SimplexWeights
    net: FeedForwardNet


@dataclass
class WjdotResult:
    """A fitted model plus its objective and α traces.

    `objective` records min_γ W(α, h) at every γ-step; `alphas` records α
    after every outer iteration.
    """

    model: WjdotModel
    objective: list[float]
    alphas: list[np.ndarray]
    plan: Optional[TransportPlan] = None
    rejected: list[int] = field(default_factory=list)
    flagged: list[int] = field(default_factory=list)


def mixture_weights(alpha: SimplexWeights, sizes: Sequence[int]) -> np.ndarray:
    """Row masses of P̂_α: sample i of source k carries α_k / n_k."""
    return np.concatenate([np.full(n, alpha[k] / n) for k, n in enumerate(sizes)])


def alpha_gradient(plan: TransportPlan, sizes: Sequence[int]) -> np.ndarray:
    """∂/∂α_k of the OT cost: the mean row potential over source k.

    Potentials are defined up to a constant, so the gradient is centered.
    """
    bounds = np.cumsum([0, *sizes])
    grad = np.array(
        [plan.u[start:end].mean() for start, end in zip(bounds[:-1], bounds[1:])]
    )
    return grad - grad.mean()


def alpha_step(
    alpha: SimplexWeights,
    plan: TransportPlan,
    C: np.ndarray,
    sizes: Sequence[int],
    col_w: np.ndarray,
    cfg: WjdotConfig,
) -> SimplexWeights:
    """One projected-gradient step on α with backtracking.

    The normalized gradient step starts at `cfg.alpha_step` and is halved up
    to `cfg.max_backtracks` times; a candidate is accepted only if it does
    not raise the transport cost.
    """
    grad = alpha_gradient(plan, sizes)
    scale = np.abs(grad).max()
    if scale == 0:
        return alpha
    grad = grad / scale
    step = cfg.alpha_step
    for _ in range(cfg.max_backtracks + 1):
        candidate = SimplexWeights.project(alpha.values - step * grad)
        cost = solve_ot_exact(mixture_weights(candidate, sizes), col_w, C).cost
        if cost <= plan.cost:
            return candidate
        step /= 2
    log.debug("No α step lowered the transport cost; keeping α.")
    return alpha


@adapter_errors("WJDOT")
@multi_source(1)
def wjdot_fit(
    sources: Sequence[LabeledDataset],
    target: np.ndarray,
    cfg: WjdotConfig = WjdotConfig(),
    architecture: Optional[Architecture] = None,
) -> WjdotResult:
    """Learns source weights α and a target classifier h jointly.

    P̂_α is the α-weighted concatenation of the sources. Each outer iteration
    solves for γ, updates h as JDOT does, then updates α by a projected
    gradient step with h fixed. With one source α stays [1] and the fit
    matches `jdot_fit` for the same seed.
    """
    X_t = target_features(target)
    pooled = concat(sources)
    sizes = [ds.n for ds in sources]
    col_w = np.full(X_t.shape[0], 1 / X_t.shape[0])
    Y_s = pooled.one_hot

    alpha = SimplexWeights.uniform(len(sources))
    net = warm_start(pooled, cfg, architecture)
    result = WjdotResult(model=WjdotModel(alpha, net), objective=[], alphas=[])
    step_rng = Rng(cfg.train.seed).child(2)
    for outer in range(cfg.outer_iters):
        row_w = mixture_weights(alpha, sizes)
        plan = jdot_plan(net, pooled.features, Y_s, row_w, X_t, cfg)
        if result.objective and plan.cost > result.objective[-1] + OBJECTIVE_SLACK:
            result.flagged.append(outer)
        result.objective.append(plan.cost)
        result.plan = plan
        net, accepted = jdot_h_step(net, plan, Y_s, X_t, cfg, step_rng.child(outer))
        if not accepted:
            result.rejected.append(outer)

        if len(sources) > 1:
            C = jdot_cost(
                pooled.features, Y_s, X_t, net.forward(X_t), cfg.alpha, cfg.beta
            ).values
            current = solve_ot_exact(row_w, col_w, C)
            alpha = alpha_step(alpha, current, C, sizes, col_w, cfg)
        result.alphas.append(alpha.values.copy())

    result.model = WjdotModel(alpha, net)
    return result
