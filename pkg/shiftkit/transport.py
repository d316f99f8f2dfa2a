"""Optimal transport primitives: ground costs, solvers, barycenters."""
import logging
from dataclasses import dataclass
from typing import Optional, Sequence, Union

import numpy as np
import ot
from scipy.spatial.distance import cdist
from scipy.special import logsumexp, rel_entr

from shiftkit.core import (
    EmpiricalDistribution,
    LabeledDataset,
    Rng,
    SimplexWeights,
    check_weights,
)
from shiftkit.exceptions import InputDomainError
from shiftkit.schemas import LabelCost, SolverKind, SolverSpec

log = logging.getLogger(__name__)

MARGINAL_TOL = 1e-6
EXACT_MAX_ITER = 1_000_000
EXACT_SIZE_LIMIT = 512
SCALING_STAGE_ITERS = 100

Labeled = Union[LabeledDataset, EmpiricalDistribution]


@dataclass(frozen=True, eq=False)
class CostMatrix:
    """Ground-cost matrix plus a short descriptor of how it was built."""

    values: np.ndarray
    descriptor: str = "sqeuclidean"

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 2:
            raise InputDomainError("Cost matrix must be 2-dimensional.")
        if not np.all(np.isfinite(values)):
            raise InputDomainError("Cost matrix has non-finite entries.")
        if values.size and values.min() < 0:
            raise InputDomainError("Cost matrix has negative entries.")
        object.__setattr__(self, "values", values)

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape


@dataclass(frozen=True, eq=False)
class TransportPlan:
    """A coupling between two weight vectors.

    `u` and `v` are the dual potentials reported by the solver; `residual`
    is the L1 marginal residual at exit.
    """

    values: np.ndarray
    row_marginal: np.ndarray
    col_marginal: np.ndarray
    cost: float
    converged: bool = True
    n_iter: int = 0
    residual: float = 0.0
    u: Optional[np.ndarray] = None
    v: Optional[np.ndarray] = None

    @property
    def marginal_error(self) -> float:
        """Largest absolute deviation of row or column sums from the marginals."""
        return float(
            max(
                np.abs(self.values.sum(axis=1) - self.row_marginal).max(),
                np.abs(self.values.sum(axis=0) - self.col_marginal).max(),
            )
        )

    def entropic_cost(self, epsilon: float) -> float:
        """⟨γ, C⟩ + ε·KL(γ ‖ a ⊗ b), the entropic OT objective at this plan."""
        product = np.outer(self.row_marginal, self.col_marginal)
        return self.cost + epsilon * float(rel_entr(self.values, product).sum())


def _cost_values(cost: Union[CostMatrix, np.ndarray]) -> np.ndarray:
    if isinstance(cost, CostMatrix):
        return cost.values
    return CostMatrix(cost).values


def cost_matrix(X: np.ndarray, Y: np.ndarray) -> CostMatrix:
    """Squared Euclidean cost between the rows of `X` and `Y`.

    Raises:
        InputDomainError: If `X` and `Y` have different column counts.
    """
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    Y = np.atleast_2d(np.asarray(Y, dtype=np.float64))
    if X.shape[1] != Y.shape[1]:
        raise InputDomainError(
            f"Cannot compare {X.shape[1]}-dimensional and "
            f"{Y.shape[1]}-dimensional points."
        )
    return CostMatrix(cdist(X, Y, "sqeuclidean"), "sqeuclidean")


def _features_and_labels(obj: Labeled) -> tuple[np.ndarray, Optional[np.ndarray]]:
    if isinstance(obj, LabeledDataset):
        return obj.features, obj.one_hot
    return obj.support, obj.labels


def label_cost(Y_P: np.ndarray, Y_Q: np.ndarray, mode: LabelCost) -> np.ndarray:
    """Label-disagreement term of a labeled ground cost (before scaling by β).

    The indicator form is ½‖y − y′‖², which is [y ≠ y′] on one-hot labels
    and stays quadratic on soft labels. The squared-label form is ‖y − y′‖².
    """
    sq = cdist(Y_P, Y_Q, "sqeuclidean")
    return 0.5 * sq if LabelCost(mode) == LabelCost.INDICATOR else sq


def labeled_cost_matrix(
    P: Labeled,
    Q: Labeled,
    beta: float,
    mode: LabelCost = LabelCost.INDICATOR,
) -> CostMatrix:
    """Feature cost plus β-weighted label disagreement.

    Raises:
        InputDomainError: If β is negative, either side is unlabeled,
            or the two sides disagree on feature or label dimension.
    """
    if beta < 0:
        raise InputDomainError(f"Label weight β must be nonnegative (got {beta}).")
    X_P, Y_P = _features_and_labels(P)
    X_Q, Y_Q = _features_and_labels(Q)
    if Y_P is None or Y_Q is None:
        raise InputDomainError("Labeled costs need labels on both sides.")
    if Y_P.shape[1] != Y_Q.shape[1]:
        raise InputDomainError("Label dimensions disagree.")
    features = cost_matrix(X_P, X_Q).values
    mode = LabelCost(mode)
    return CostMatrix(
        features + beta * label_cost(Y_P, Y_Q, mode), f"{mode.value}(beta={beta})"
    )


def solve_ot_exact(
    row_w: np.ndarray, col_w: np.ndarray, C: Union[CostMatrix, np.ndarray]
) -> TransportPlan:
    """Exact optimal transport plan (network simplex).

    Raises:
        InputDomainError: If a weight vector is negative, does not sum to 1,
            or does not match the cost matrix.
    """
    row_w = check_weights(row_w, "row weights")
    col_w = check_weights(col_w, "column weights")
    values = _cost_values(C)
    if values.shape != (row_w.size, col_w.size):
        raise InputDomainError(
            f"Cost matrix of shape {values.shape} does not match "
            f"weights of sizes {row_w.size} and {col_w.size}."
        )

    plan, info = ot.emd(row_w, col_w, values, numItermax=EXACT_MAX_ITER, log=True)
    converged = info.get("warning") is None
    if not converged:
        log.warning("Exact OT did not converge: %s", info["warning"])
    return TransportPlan(
        values=plan,
        row_marginal=row_w,
        col_marginal=col_w,
        cost=float(np.sum(plan * values)),
        converged=converged,
        residual=float(
            np.abs(plan.sum(axis=1) - row_w).sum()
            + np.abs(plan.sum(axis=0) - col_w).sum()
        ),
        u=np.asarray(info["u"]),
        v=np.asarray(info["v"]),
    )


def _sinkhorn_stage(
    log_a: np.ndarray,
    log_b: np.ndarray,
    a: np.ndarray,
    C: np.ndarray,
    eps: float,
    f: np.ndarray,
    g: np.ndarray,
    max_iter: int,
    tol: float,
) -> tuple[np.ndarray, np.ndarray, int, float]:
    """Log-domain Sinkhorn iterations at a fixed ε (warm-started from f, g)."""
    err = np.inf
    it = 0
    while it < max_iter:
        it += 1
        f = eps * log_a - eps * logsumexp((g[None, :] - C) / eps, axis=1)
        g = eps * log_b - eps * logsumexp((f[:, None] - C) / eps, axis=0)
        # Columns are exact after the g update; rows carry the residual.
        rows = np.exp(logsumexp((f[:, None] + g[None, :] - C) / eps, axis=1))
        err = float(np.abs(rows - a).sum())
        if err < tol:
            break
    return f, g, it, err


def solve_ot_sinkhorn(
    row_w: np.ndarray,
    col_w: np.ndarray,
    C: Union[CostMatrix, np.ndarray],
    epsilon: Optional[float] = None,
    max_iter: int = 1000,
    tol: float = 1e-6,
) -> TransportPlan:
    """Entropic optimal transport plan via log-domain Sinkhorn.

    When `epsilon` is small relative to the cost scale, the solve is
    warm-started through a geometric sequence of larger ε values
    (at most 100 iterations each); the final ε gets up to `max_iter`.

    Args:
        epsilon: Regularization strength; defaults to 0.05 × mean(C).
        tol: Stop once the L1 row-marginal residual drops below `tol`.

    Raises:
        InputDomainError: If ε is not positive or the weights are infeasible.
    """
    row_w = check_weights(row_w, "row weights")
    col_w = check_weights(col_w, "column weights")
    values = _cost_values(C)
    if values.shape != (row_w.size, col_w.size):
        raise InputDomainError("Cost matrix does not match weight sizes.")
    if epsilon is None:
        mean_cost = float(values.mean()) if values.size else 0.0
        epsilon = 0.05 * mean_cost if mean_cost > 0 else 1.0
    if epsilon <= 0:
        raise InputDomainError(f"Sinkhorn ε must be positive (got {epsilon}).")

    with np.errstate(divide="ignore"):
        log_a = np.log(row_w)
        log_b = np.log(col_w)

    f = np.zeros(row_w.size)
    g = np.zeros(col_w.size)
    n_iter = 0
    stage_eps = max(float(values.max(initial=0.0)), epsilon)
    while stage_eps > epsilon * 2:
        f, g, stage_iter, _ = _sinkhorn_stage(
            log_a, log_b, row_w, values, stage_eps, f, g, SCALING_STAGE_ITERS, tol
        )
        n_iter += stage_iter
        stage_eps /= 2
    f, g, stage_iter, err = _sinkhorn_stage(
        log_a, log_b, row_w, values, epsilon, f, g, max_iter, tol
    )
    n_iter += stage_iter

    plan = np.exp((f[:, None] + g[None, :] - values) / epsilon)
    converged = err < tol
    if not converged:
        log.warning(
            "Sinkhorn did not converge in %d iterations "
            "(ε=%.3g, marginal residual %.3g).",
            max_iter,
            epsilon,
            err,
        )
    return TransportPlan(
        values=plan,
        row_marginal=row_w,
        col_marginal=col_w,
        cost=float(np.sum(plan * values)),
        converged=converged,
        n_iter=n_iter,
        residual=err,
        u=f,
        v=g,
    )


def solve_ot(
    row_w: np.ndarray,
    col_w: np.ndarray,
    C: Union[CostMatrix, np.ndarray],
    solver: Optional[SolverSpec] = None,
) -> TransportPlan:
    """Dispatches to the exact or entropic solver (exact by default)."""
    if solver is None or solver.kind == SolverKind.EXACT:
        return solve_ot_exact(row_w, col_w, C)
    return solve_ot_sinkhorn(
        row_w, col_w, C, solver.epsilon, solver.max_iter, solver.tol
    )


def wasserstein_distance(
    P: EmpiricalDistribution,
    Q: EmpiricalDistribution,
    cost: Union[str, LabelCost] = "sqeuclidean",
    solver: Optional[SolverSpec] = None,
    *,
    beta: float = 1.0,
) -> float:
    """Optimal transport cost ⟨γ*, C⟩ between two weighted point clouds.

    Args:
        cost: `"sqeuclidean"` for the feature cost, or a `LabelCost` mode
            for the β-weighted labeled cost.
    """
    if cost == "sqeuclidean":
        C = cost_matrix(P.support, Q.support)
    else:
        C = labeled_cost_matrix(P, Q, beta, LabelCost(cost))
    return solve_ot(P.weights, Q.weights, C, solver).cost


def barycentric_map(
    plan: Union[TransportPlan, np.ndarray], X_target: np.ndarray
) -> np.ndarray:
    """Maps each source point to the plan-weighted mean of target points.

    Rows are normalized by their own mass, which reduces to n_S · γ · X for
    a uniform row marginal. Rows carrying no mass map to zero.
    """
    values = plan.values if isinstance(plan, TransportPlan) else np.asarray(plan)
    X_target = np.asarray(X_target, dtype=np.float64)
    if values.shape[1] != X_target.shape[0]:
        raise InputDomainError(
            f"Plan has {values.shape[1]} columns but the target has "
            f"{X_target.shape[0]} points."
        )
    mass = values.sum(axis=1, keepdims=True)
    coefs = np.divide(values, mass, out=np.zeros_like(values), where=mass > 0)
    return coefs @ X_target


@dataclass(frozen=True, eq=False)
class Barycenter:
    """Free-support Wasserstein barycenter with its objective trace."""

    support: np.ndarray
    labels: Optional[np.ndarray]
    objective: list[float]
    converged: bool

    @property
    def distribution(self) -> EmpiricalDistribution:
        return EmpiricalDistribution.uniform(self.support, self.labels)

    def to_dataset(self, domain_id=None) -> LabeledDataset:
        return self.distribution.to_dataset(domain_id)


def _class_balanced_init(
    dists: Sequence[EmpiricalDistribution], n_bary: int, rng: Rng
) -> tuple[np.ndarray, Optional[np.ndarray]]:
    """Seeded subsample of the pooled supports, one-hot labels balanced by class."""
    pooled = np.vstack([d.support for d in dists])
    if dists[0].labels is None:
        picks = rng.generator.choice(
            pooled.shape[0], size=n_bary, replace=n_bary > pooled.shape[0]
        )
        return pooled[picks].copy(), None

    n_classes = dists[0].class_count
    pooled_labels = np.concatenate([d.hard_labels() for d in dists])
    counts = [
        n_bary // n_classes + (c < n_bary % n_classes) for c in range(n_classes)
    ]
    support = []
    labels = []
    for c, count in enumerate(counts):
        if count == 0:
            continue
        candidates = np.flatnonzero(pooled_labels == c)
        if candidates.size == 0:
            candidates = np.arange(pooled.shape[0])
        picks = rng.generator.choice(
            candidates, size=count, replace=count > candidates.size
        )
        support.append(pooled[picks])
        labels.extend([c] * count)
    encoded = np.zeros((n_bary, n_classes))
    encoded[np.arange(n_bary), labels] = 1.0
    return np.vstack(support), encoded


def default_solver(
    n_rows: int, n_cols: int, solver: Optional[SolverSpec] = None
) -> SolverSpec:
    """`solver` if given; otherwise exact OT up to 512 points per side."""
    if solver is not None:
        return solver
    if max(n_rows, n_cols) <= EXACT_SIZE_LIMIT:
        return SolverSpec(kind=SolverKind.EXACT)
    return SolverSpec(kind=SolverKind.SINKHORN)


def free_support_barycenter(
    dists: Sequence[EmpiricalDistribution],
    alpha: SimplexWeights,
    beta: float,
    n_bary: int,
    rng: Rng,
    max_iter: int = 30,
    tol: float = 1e-6,
    *,
    label_mode: LabelCost = LabelCost.INDICATOR,
    solver: Optional[SolverSpec] = None,
    init: Optional[tuple[np.ndarray, Optional[np.ndarray]]] = None,
) -> Barycenter:
    """Labeled free-support Wasserstein barycenter by fixed-point iteration.

    Each iteration solves one OT problem per input (barycenter rows, input
    columns) and moves the barycenter support and soft labels to the
    α-weighted sum of barycentric maps. Inputs with zero weight are skipped.

    Args:
        dists: Input distributions; either all carry soft labels or none do.
        alpha: Barycentric weights, one per input.
        beta: Weight of the label term in the ground cost.
        n_bary: Number of barycenter support points (uniform weights).
        rng: Stream for the support initialization.
        init: Optional (support, labels) warm start.

    Raises:
        InputDomainError: If `dists` is empty, `alpha` has the wrong length,
            inputs disagree on dimensions, or `n_bary` is below the class count.
    """
    if not dists:
        raise InputDomainError("Barycenter needs at least one distribution.")
    if len(alpha) != len(dists):
        raise InputDomainError(
            f"Got {len(alpha)} weights for {len(dists)} distributions."
        )
    if len({d.dim for d in dists}) != 1:
        raise InputDomainError("Distributions disagree on feature dimension.")
    labeled = {d.labels is not None for d in dists}
    if len(labeled) != 1:
        raise InputDomainError("Either all distributions carry labels or none do.")
    is_labeled = labeled.pop()
    if is_labeled:
        if len({d.class_count for d in dists}) != 1:
            raise InputDomainError("Distributions disagree on class count.")
        if n_bary < dists[0].class_count:
            raise InputDomainError(
                f"Barycenter size {n_bary} is below the class count "
                f"{dists[0].class_count}."
            )
    if beta < 0:
        raise InputDomainError(f"Label weight β must be nonnegative (got {beta}).")

    if init is None:
        support, labels = _class_balanced_init(dists, n_bary, rng)
    else:
        support = np.array(init[0], dtype=np.float64)
        labels = None if init[1] is None else np.array(init[1], dtype=np.float64)
        if support.shape[0] != n_bary:
            raise InputDomainError("Warm-start support has the wrong size.")

    bary_w = np.full(n_bary, 1 / n_bary)
    active = [idx for idx in range(len(dists)) if alpha[idx] > 0]
    objective: list[float] = []
    converged = False
    for _ in range(max_iter):
        new_support = np.zeros_like(support)
        new_labels = None if labels is None else np.zeros_like(labels)
        total = 0.0
        for idx in active:
            dist = dists[idx]
            C = cost_matrix(support, dist.support).values
            if is_labeled:
                C = C + beta * label_cost(labels, dist.labels, label_mode)
            plan = solve_ot(
                bary_w, dist.weights, C, default_solver(n_bary, dist.n, solver)
            )
            total += alpha[idx] * plan.cost
            new_support += alpha[idx] * barycentric_map(plan, dist.support)
            if is_labeled:
                new_labels += alpha[idx] * barycentric_map(plan, dist.labels)
        objective.append(total)

        displacement = float(np.abs(new_support - support).max(initial=0.0))
        support, labels = new_support, new_labels
        if displacement < tol:
            converged = True
            break

    return Barycenter(
        support=support, labels=labels, objective=objective, converged=converged
    )
