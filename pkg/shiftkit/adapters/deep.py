"""Deep single-source adapters: MMD-regularized nets, DANN, DeepJDOT.

All three train a `FeedForwardNet` by minibatch SGD on
CCE(source) + λ·L_d(φ), pairing every source batch with an equally sized
target batch. Source batches follow the same stream as `train_erm`, so
with λ = 0 the MMD and DeepJDOT adapters reduce to plain source ERM.
"""
import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.spatial.distance import cdist

from shiftkit.adapters.base import adapter_errors, target_features
from shiftkit.classifiers import (
    PROB_FLOOR,
    FeedForwardNet,
    bce_grad,
    bce_loss,
    cce_backward,
    cce_grad,
    cce_loss,
    check_finite,
    epoch_batches,
    grad_reversal_forward,
    sgd_step,
)
from shiftkit.core import LabeledDataset, Rng
from shiftkit.divergences import mmd, mmd_with_grad
from shiftkit.exceptions import InputDomainError
from shiftkit.schemas import Architecture, DeepDaConfig, HeadKind, HeadSpec
from shiftkit.transport import TransportPlan, solve_ot_exact

log = logging.getLogger(__name__)

BATCH_STREAM = 0
INIT_STREAM = 1
PAIRED_STREAM = 3
HOLDOUT_STREAM = 4

DOMAIN_HEAD = "domain"


@dataclass
class DeepResult:
    """A trained network, its per-epoch objective, and adapter diagnostics."""

    net: FeedForwardNet
    losses: list[float]
    diagnostics: dict[str, float] = field(default_factory=dict)
    domain_accuracy: list[float] = field(default_factory=list)


def initial_net(
    source: LabeledDataset,
    cfg: DeepDaConfig,
    architecture: Optional[Architecture] = None,
    net: Optional[FeedForwardNet] = None,
) -> FeedForwardNet:
    """A copy of `net`, or a seeded initialization of `architecture`."""
    if net is not None:
        return net.copy()
    architecture = architecture or Architecture.classifier(
        source.n_features, source.class_count
    )
    return FeedForwardNet.initialize(
        architecture, Rng(cfg.train.seed).child(INIT_STREAM)
    )


def paired_indices(rng: Rng, n: int, size: int) -> np.ndarray:
    """A batch of `size` indices into a domain of `n` points."""
    return rng.generator.choice(n, size=size, replace=size > n)


@adapter_errors("MMD-net")
def mmdnet_fit(
    source: LabeledDataset,
    target: np.ndarray,
    cfg: DeepDaConfig = DeepDaConfig(),
    architecture: Optional[Architecture] = None,
    net: Optional[FeedForwardNet] = None,
) -> DeepResult:
    """Minimizes CCE(source) + λ·MMD(φ(source batch), φ(target batch)).

    The recorded loss is full-batch CCE + λ·MMD on all source and target
    latents. Diagnostics carry the full-sample latent MMD before and after
    training.

    Raises:
        TrainingError: If the objective becomes NaN or infinite.
    """
    X_t = target_features(target)
    net = initial_net(source, cfg, architecture, net)
    Y_s = source.one_hot
    train = cfg.train
    batch_rng = Rng(train.seed).child(BATCH_STREAM)
    target_rng = Rng(train.seed).child(PAIRED_STREAM, 1)

    def objective() -> tuple[float, float]:
        Z_s, _ = net.extract(source.features)
        Z_t, _ = net.extract(X_t)
        latent_mmd = mmd(Z_s, Z_t, cfg.kernel)
        class_loss = cce_loss(net.head_probs(Z_s), Y_s)
        return class_loss + cfg.lam * latent_mmd, latent_mmd

    loss, mmd_before = objective()
    mmd_after = mmd_before
    losses = [loss]
    for epoch in range(train.epochs):
        for batch in epoch_batches(source.n, train.batch_size, batch_rng):
            t_batch = paired_indices(target_rng, X_t.shape[0], batch.size)
            grad = net.zero_grad()
            Z_s, cache_s = net.extract(source.features[batch])
            probs = net.head_probs(Z_s)
            dZ_s = net.backward_head("main", Z_s, cce_grad(probs, Y_s[batch]), grad)
            Z_t, cache_t = net.extract(X_t[t_batch])
            _, g_s, g_t = mmd_with_grad(Z_s, Z_t, cfg.kernel)
            net.backward_extractor(cache_s, dZ_s + cfg.lam * g_s, grad)
            net.backward_extractor(cache_t, cfg.lam * g_t, grad)
            sgd_step(net, grad, train)
        loss, mmd_after = objective()
        check_finite(loss, "MMD-net training", epoch)
        losses.append(loss)

    return DeepResult(
        net=net,
        losses=losses,
        diagnostics={"latent_mmd_before": mmd_before, "latent_mmd_after": mmd_after},
    )


def with_domain_head(architecture: Architecture) -> Architecture:
    """`architecture` plus a one-output sigmoid domain head, if it lacks one."""
    if DOMAIN_HEAD in architecture.heads:
        return architecture
    heads = {
        **architecture.heads,
        DOMAIN_HEAD: HeadSpec(out_dim=1, kind=HeadKind.SIGMOID),
    }
    return architecture.copy(update={"heads": heads})


def domain_branch(
    net: FeedForwardNet,
    Z: np.ndarray,
    domains: np.ndarray,
    lam: float,
    grad: np.ndarray,
) -> tuple[float, np.ndarray]:
    """λ·BCE of the domain head.

    Accumulates the head gradient into `grad`; returns (BCE, ∂/∂Z).
    """
    probs = net.head_probs(Z, DOMAIN_HEAD)
    dZ = net.backward_head(DOMAIN_HEAD, Z, lam * bce_grad(probs, domains), grad)
    return bce_loss(probs, domains), dZ


def dann_domain_grad(
    net: FeedForwardNet,
    X: np.ndarray,
    domains: np.ndarray,
    lam: float,
    lam_rev: float = 1.0,
) -> tuple[float, np.ndarray]:
    """Gradient of the domain branch alone, through the reversal layer.

    The domain head receives ∂(λ·BCE); φ receives −λ_rev times its share.
    """
    grad = net.zero_grad()
    features = grad_reversal_forward(net, X, lam_rev)
    bce, dZ = domain_branch(net, features.values, domains, lam, grad)
    features.backward(net, dZ, grad)
    return bce, grad


def holdout_split(
    n: int, fraction: float, rng: Rng
) -> tuple[np.ndarray, np.ndarray]:
    """Seeded (train, holdout) index split with both parts nonempty."""
    order = rng.generator.permutation(n)
    n_hold = min(max(1, int(round(fraction * n))), n - 1)
    return np.sort(order[n_hold:]), np.sort(order[:n_hold])


def domain_accuracy(net: FeedForwardNet, X_s: np.ndarray, X_t: np.ndarray) -> float:
    """Accuracy of the domain head at telling source (0) from target (1)."""
    p_s = net.forward(X_s, DOMAIN_HEAD).reshape(-1)
    p_t = net.forward(X_t, DOMAIN_HEAD).reshape(-1)
    correct = np.sum(p_s < 0.5) + np.sum(p_t >= 0.5)
    return float(correct / (p_s.size + p_t.size))


@adapter_errors("DANN")
def dann_fit(
    source: LabeledDataset,
    target: np.ndarray,
    cfg: DeepDaConfig = DeepDaConfig(),
    architecture: Optional[Architecture] = None,
    net: Optional[FeedForwardNet] = None,
) -> DeepResult:
    """Domain-adversarial training through a gradient reversal layer.

    A `cfg.holdout` fraction of each domain is held out to track domain
    classification accuracy after every epoch; training uses the rest.
    A domain head is added to `architecture` when missing; a given `net`
    must already carry one.

    Raises:
        InputDomainError: If either domain has fewer than 2 points, or
            `net` has no domain head.
        TrainingError: If the objective becomes NaN or infinite.
    """
    X_t = target_features(target)
    if source.n < 2 or X_t.shape[0] < 2:
        raise InputDomainError("DANN needs at least 2 points per domain.")
    if net is not None and DOMAIN_HEAD not in net.architecture.heads:
        raise InputDomainError(f'DANN needs a "{DOMAIN_HEAD}" head on the network.')
    if net is None:
        architecture = with_domain_head(
            architecture
            or Architecture.classifier(source.n_features, source.class_count)
        )
    net = initial_net(source, cfg, architecture, net)

    train = cfg.train
    seeded = Rng(train.seed)
    s_train, s_hold = holdout_split(
        source.n, cfg.holdout, seeded.child(HOLDOUT_STREAM, 0)
    )
    t_train, t_hold = holdout_split(
        X_t.shape[0], cfg.holdout, seeded.child(HOLDOUT_STREAM, 1)
    )
    train_source = source.subset(s_train)
    X_tt = X_t[t_train]
    Y_s = train_source.one_hot
    batch_rng = seeded.child(BATCH_STREAM)
    target_rng = seeded.child(PAIRED_STREAM, 1)

    def objective() -> float:
        Z_s, _ = net.extract(train_source.features)
        Z_t, _ = net.extract(X_tt)
        Z = np.vstack([Z_s, Z_t])
        d = np.concatenate([np.zeros(Z_s.shape[0]), np.ones(Z_t.shape[0])])
        class_loss = cce_loss(net.head_probs(Z_s), Y_s)
        return class_loss + cfg.lam * bce_loss(net.head_probs(Z, DOMAIN_HEAD), d)

    losses = [objective()]
    accuracies = []
    for epoch in range(train.epochs):
        for batch in epoch_batches(train_source.n, train.batch_size, batch_rng):
            t_batch = paired_indices(target_rng, X_tt.shape[0], batch.size)
            X = np.vstack([train_source.features[batch], X_tt[t_batch]])
            d = np.concatenate([np.zeros(batch.size), np.ones(t_batch.size)])
            grad = net.zero_grad()
            features = grad_reversal_forward(net, X, cfg.lam_rev)
            Z_s = features.values[: batch.size]
            d_direct = np.zeros_like(features.values)
            d_direct[: batch.size] = net.backward_head(
                "main", Z_s, cce_grad(net.head_probs(Z_s), Y_s[batch]), grad
            )
            _, d_domain = domain_branch(net, features.values, d, cfg.lam, grad)
            features.backward(net, d_domain, grad, d_direct)
            sgd_step(net, grad, train)
        loss = objective()
        check_finite(loss, "DANN training", epoch)
        losses.append(loss)
        accuracies.append(domain_accuracy(net, source.features[s_hold], X_t[t_hold]))

    return DeepResult(
        net=net,
        losses=losses,
        diagnostics={"domain_accuracy": accuracies[-1]} if accuracies else {},
        domain_accuracy=accuracies,
    )


def deepjdot_batch_loss(
    net: FeedForwardNet,
    X_s: np.ndarray,
    Y_s: np.ndarray,
    X_t: np.ndarray,
    alpha: float,
    beta: float,
    grad: Optional[np.ndarray] = None,
    scale: float = 1.0,
    plan: Optional[np.ndarray] = None,
) -> tuple[float, np.ndarray, TransportPlan]:
    """Σ γ_ij C_ij for C_ij = α‖φ(x_i) − φ(x_j)‖² + β·CCE(y_i, h(φ(x_j))).

    γ is the exact OT plan between uniform batch weights (or `plan`, if
    given) and is held constant for the gradient. The gradient is scaled
    by `scale` and accumulated into `grad`.

    Returns:
        (loss, grad, plan).
    """
    grad = net.zero_grad() if grad is None else grad
    Z_s, cache_s = net.extract(X_s)
    Z_t, cache_t = net.extract(X_t)
    probs = net.head_probs(Z_t)
    labels = -Y_s @ np.log(np.clip(probs, PROB_FLOOR, 1.0)).T
    C = alpha * cdist(Z_s, Z_t, "sqeuclidean") + beta * labels
    if plan is None:
        transport = solve_ot_exact(
            np.full(Z_s.shape[0], 1 / Z_s.shape[0]),
            np.full(Z_t.shape[0], 1 / Z_t.shape[0]),
            C,
        )
    else:
        plan = np.asarray(plan, dtype=np.float64)
        transport = TransportPlan(
            values=plan,
            row_marginal=plan.sum(axis=1),
            col_marginal=plan.sum(axis=0),
            cost=float(np.sum(plan * C)),
        )
    gamma = transport.values
    rows = gamma.sum(axis=1)
    cols = gamma.sum(axis=0)

    dZ_s = 2 * alpha * (rows[:, None] * Z_s - gamma @ Z_t)
    dZ_t = -2 * alpha * (gamma.T @ Z_s - cols[:, None] * Z_t)
    dlogits = beta * (cols[:, None] * probs - gamma.T @ Y_s)
    dZ_label = net.backward_head("main", Z_t, scale * dlogits, grad)
    net.backward_extractor(cache_s, scale * dZ_s, grad)
    net.backward_extractor(cache_t, scale * dZ_t + dZ_label, grad)
    return float(np.sum(gamma * C)), grad, transport


@adapter_errors("DeepJDOT")
def deepjdot_fit(
    source: LabeledDataset,
    target: np.ndarray,
    cfg: DeepDaConfig = DeepDaConfig(),
    architecture: Optional[Architecture] = None,
    net: Optional[FeedForwardNet] = None,
) -> DeepResult:
    """Minimizes CCE(source) + λ·(batch JDOT loss in latent space).

    The recorded loss is the full-batch source CCE plus λ times the mean
    batch JDOT loss of the epoch.

    Raises:
        TrainingError: If the objective becomes NaN or infinite.
    """
    X_t = target_features(target)
    net = initial_net(source, cfg, architecture, net)
    Y_s = source.one_hot
    train = cfg.train
    batch_rng = Rng(train.seed).child(BATCH_STREAM)
    target_rng = Rng(train.seed).child(PAIRED_STREAM, 1)

    losses = [cce_loss(net.forward(source.features), Y_s)]
    for epoch in range(train.epochs):
        batch_losses = []
        for batch in epoch_batches(source.n, train.batch_size, batch_rng):
            t_batch = paired_indices(target_rng, X_t.shape[0], batch.size)
            grad = net.zero_grad()
            cce_backward(net, source.features[batch], Y_s[batch], grad)
            value, _, _ = deepjdot_batch_loss(
                net,
                source.features[batch],
                Y_s[batch],
                X_t[t_batch],
                cfg.jdot_alpha,
                cfg.jdot_beta,
                grad,
                scale=cfg.lam,
            )
            batch_losses.append(value)
            sgd_step(net, grad, train)
        class_loss = cce_loss(net.forward(source.features), Y_s)
        loss = class_loss + cfg.lam * float(np.mean(batch_losses))
        check_finite(loss, "DeepJDOT training", epoch)
        losses.append(loss)
    return DeepResult(net=net, losses=losses)
