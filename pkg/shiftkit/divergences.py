"""Distribution-shift estimators: maximum mean discrepancy and the H-distance."""
import logging
from dataclasses import dataclass
from typing import Optional, Union

import numpy as np
from scipy.spatial.distance import pdist
from scipy.special import expit
from sklearn.metrics.pairwise import linear_kernel, polynomial_kernel, rbf_kernel
from sklearn.model_selection import train_test_split
from sklearn.preprocessing import StandardScaler

from shiftkit.classifiers import epoch_batches
from shiftkit.core import EmpiricalDistribution, LabeledDataset, Rng
from shiftkit.exceptions import InputDomainError
from shiftkit.schemas import KernelKind, KernelSpec, TrainConfig

log = logging.getLogger(__name__)

DOMAIN_CLF_STEPS = 500
DOMAIN_CLF_LR = 0.1

Samples = Union[np.ndarray, EmpiricalDistribution, LabeledDataset]


def _points(samples: Samples) -> np.ndarray:
    if isinstance(samples, EmpiricalDistribution):
        return samples.support
    if isinstance(samples, LabeledDataset):
        return samples.features
    return np.atleast_2d(np.asarray(samples, dtype=np.float64))


def median_sigma(X: np.ndarray) -> float:
    """Median pairwise Euclidean distance (1.0 if all points coincide)."""
    if X.shape[0] < 2:
        return 1.0
    dists = pdist(X)
    dists = dists[dists > 0]
    return float(np.median(dists)) if dists.size else 1.0


def resolve_kernel(spec: KernelSpec, X: np.ndarray) -> KernelSpec:
    """Fixes the RBF bandwidth by the median heuristic on `X` if unset."""
    if spec.kind == KernelKind.RBF and spec.sigma is None:
        return spec.copy(update={"sigma": median_sigma(X)})
    return spec


def kernel_matrix(spec: KernelSpec, X: np.ndarray, Y: np.ndarray) -> np.ndarray:
    """Gram matrix k(X, Y) for a resolved kernel."""
    if spec.kind == KernelKind.LINEAR:
        return linear_kernel(X, Y)
    if spec.kind == KernelKind.RBF:
        if spec.sigma is None:
            raise InputDomainError("RBF kernel bandwidth is unresolved.")
        return rbf_kernel(X, Y, gamma=1 / (2 * spec.sigma**2))
    return polynomial_kernel(X, Y, degree=spec.degree, gamma=1.0, coef0=spec.offset)


@dataclass(frozen=True, eq=False)
class JointKernelMatrices:
    """Joint Gram matrix K over [source; target] and the MMD weighting L."""

    K: np.ndarray
    L: np.ndarray
    n_source: int
    n_target: int


def mmd_weights(n_source: int, n_target: int, literal: bool = False) -> np.ndarray:
    """The MMD weighting matrix L.

    The default is the dense form L = eeᵀ, e = [1/n_S …, −1/n_T …]. With
    `literal=True`, every block is a scaled (rectangular) identity:
    I/n_S², −2·I_rect/(n_S n_T), I/n_T².
    """
    if not literal:
        e = np.concatenate(
            [np.full(n_source, 1 / n_source), np.full(n_target, -1 / n_target)]
        )
        return np.outer(e, e)
    cross = -2 * np.eye(n_source, n_target) / (n_source * n_target)
    return np.block(
        [
            [np.eye(n_source) / n_source**2, cross],
            [cross.T, np.eye(n_target) / n_target**2],
        ]
    )


def joint_kernel_matrices(
    P: Samples, Q: Samples, spec: KernelSpec, literal: bool = False
) -> JointKernelMatrices:
    """Builds K and L for the pooled sample [P; Q]."""
    X_P, X_Q = _points(P), _points(Q)
    if X_P.shape[1] != X_Q.shape[1]:
        raise InputDomainError("Samples disagree on dimension.")
    joint = np.vstack([X_P, X_Q])
    spec = resolve_kernel(spec, joint)
    return JointKernelMatrices(
        K=kernel_matrix(spec, joint, joint),
        L=mmd_weights(X_P.shape[0], X_Q.shape[0], literal),
        n_source=X_P.shape[0],
        n_target=X_Q.shape[0],
    )


def mmd(
    P: Samples, Q: Samples, spec: KernelSpec = KernelSpec(), literal: bool = False
) -> float:
    """Biased MMD² estimate Tr(KL).

    Negative values from floating-point cancellation are clamped to 0.
    """
    joint = joint_kernel_matrices(P, Q, spec, literal)
    value = float(np.sum(joint.K * joint.L))
    if value < 0:
        log.debug("Clamping negative MMD estimate %.3g to 0.", value)
        return 0.0
    return value


def _pair_grad(spec: KernelSpec, A: np.ndarray, B: np.ndarray) -> np.ndarray:
    """Gradient of Σ_ij k(a_i, b_j) with respect to the rows of A."""
    if spec.kind == KernelKind.LINEAR:
        return np.broadcast_to(B.sum(axis=0), A.shape).copy()
    if spec.kind == KernelKind.RBF:
        K = kernel_matrix(spec, A, B)
        return -(K.sum(axis=1)[:, None] * A - K @ B) / spec.sigma**2
    G = A @ B.T + spec.offset
    return (spec.degree * G ** (spec.degree - 1)) @ B


def mmd_with_grad(
    Z_source: np.ndarray, Z_target: np.ndarray, spec: KernelSpec
) -> tuple[float, np.ndarray, np.ndarray]:
    """Dense-form MMD² with its gradient with respect to both samples.

    An unset RBF bandwidth is resolved on the pooled sample and then held
    constant for the gradient.

    Returns:
        (value, ∂/∂Z_source, ∂/∂Z_target). The value is not clamped.
    """
    n_s, n_t = Z_source.shape[0], Z_target.shape[0]
    spec = resolve_kernel(spec, np.vstack([Z_source, Z_target]))
    k_ss = kernel_matrix(spec, Z_source, Z_source).sum()
    k_st = kernel_matrix(spec, Z_source, Z_target).sum()
    k_tt = kernel_matrix(spec, Z_target, Z_target).sum()
    value = k_ss / n_s**2 - 2 * k_st / (n_s * n_t) + k_tt / n_t**2

    d_source = 2 * _pair_grad(spec, Z_source, Z_source) / n_s**2 - 2 * _pair_grad(
        spec, Z_source, Z_target
    ) / (n_s * n_t)
    d_target = 2 * _pair_grad(spec, Z_target, Z_target) / n_t**2 - 2 * _pair_grad(
        spec, Z_target, Z_source
    ) / (n_s * n_t)
    return float(value), d_source, d_target


@dataclass(frozen=True)
class HDistance:
    """Domain-discriminability estimates from one holdout evaluation.

    `literal` is 2(1 − mean holdout BCE); `proxy_a` is 2(1 − 2ε) with the
    holdout 0-1 error ε, clamped to [0, 2].
    """

    literal: float
    proxy_a: float
    holdout_error: float
    holdout_bce: float


def _fit_domain_classifier(
    X: np.ndarray, d: np.ndarray, train: Optional[TrainConfig]
) -> tuple[np.ndarray, float]:
    """Logistic regression weights and bias, fit by minibatch gradient descent."""
    if train is None:
        train = TrainConfig(
            lr=DOMAIN_CLF_LR,
            epochs=DOMAIN_CLF_STEPS,
            batch_size=d.size,
            weight_decay=0.0,
        )
    w = np.zeros(X.shape[1])
    b = 0.0
    rng = Rng(train.seed)
    for epoch in range(train.epochs):
        for batch in epoch_batches(d.size, train.batch_size, rng.child(epoch)):
            residual = expit(X[batch] @ w + b) - d[batch]
            grad = X[batch].T @ residual / batch.size
            w -= train.lr * (grad + train.weight_decay * w)
            b -= train.lr * residual.mean()
    return w, b


def h_distance(
    P: Samples,
    Q: Samples,
    rng: Rng,
    split: float = 0.5,
    train: Optional[TrainConfig] = None,
) -> HDistance:
    """Estimates the H-distance with a logistic-regression domain classifier.

    Source points are labeled 0 and target points 1. The classifier is
    trained on a stratified train split and evaluated on the holdout.

    Args:
        split: Holdout fraction, in (0, 1).
        train: Schedule for the domain classifier (minibatch SGD with L2
            decay). Defaults to 500 full-batch steps at learning rate 0.1.

    Raises:
        InputDomainError: If either domain has fewer than 2 points or
            `split` is outside (0, 1).
    """
    X_P, X_Q = _points(P), _points(Q)
    if X_P.shape[0] < 2 or X_Q.shape[0] < 2:
        raise InputDomainError("Each domain needs at least 2 points for a holdout.")
    if not 0 < split < 1:
        raise InputDomainError(f"Holdout fraction must lie in (0, 1) (got {split}).")

    X = np.vstack([X_P, X_Q])
    d = np.concatenate([np.zeros(X_P.shape[0]), np.ones(X_Q.shape[0])])
    X_train, X_test, d_train, d_test = train_test_split(
        X, d, test_size=split, stratify=d, random_state=rng.integer_seed()
    )
    scaler = StandardScaler().fit(X_train)
    X_train = scaler.transform(X_train)
    X_test = scaler.transform(X_test)

    w, b = _fit_domain_classifier(X_train, d_train, train)

    p = np.clip(expit(X_test @ w + b), 1e-12, 1 - 1e-12)
    bce = float(-np.mean(d_test * np.log(p) + (1 - d_test) * np.log(1 - p)))
    error = float(np.mean((p >= 0.5) != (d_test == 1)))
    return HDistance(
        literal=2 * (1 - bce),
        proxy_a=float(np.clip(2 * (1 - 2 * error), 0.0, 2.0)),
        holdout_error=error,
        holdout_bce=bce,
    )
