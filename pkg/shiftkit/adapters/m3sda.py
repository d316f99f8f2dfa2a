"""Moment matching for multi-source domain adaptation (M3SDA, M3SDA-β).

One shared extractor φ feeds a class head `source_<k>` per source. The
extractor is trained on the mean source risk plus moment penalties between
latent batch means:

    Ω_src_tgt = (1/N) Σ_p Σ_k ‖E[φ(x_k)^p] − E[φ(x_T)^p]‖
    Ω_src_src = Σ_p Σ_{i<j} ‖E[φ(x_i)^p] − E[φ(x_j)^p]‖ / C(N, 2)

The β variant adds a paired head `paired_<k>` per source and two phases per
step that maximize, then minimize, the L1 output discrepancy between each
pair of heads on the target batch.
"""
import logging
from dataclasses import dataclass, field
from math import ceil, comb
from typing import Optional, Sequence

import numpy as np

from shiftkit.adapters.base import adapter_errors, multi_source, target_features
from shiftkit.adapters.deep import (
    HOLDOUT_STREAM,
    INIT_STREAM,
    PAIRED_STREAM,
    holdout_split,
    paired_indices,
)
from shiftkit.classifiers import (
    FeedForwardNet,
    cce_grad,
    cce_loss,
    check_finite,
    predict,
    sgd_step,
)
from shiftkit.core import LabeledDataset, Rng, SimplexWeights
from shiftkit.exceptions import InputDomainError
from shiftkit.schemas import Architecture, DeepDaConfig, HeadSpec

log = logging.getLogger(__name__)

NORM_FLOOR = 1e-12


def source_head(k: int) -> str:
    return f"source_{k}"


def paired_head(k: int) -> str:
    return f"paired_{k}"


def m3sda_architecture(
    input_dim: int,
    n_classes: int,
    n_sources: int,
    paired: bool = False,
    hidden_dims: tuple[int, ...] = (64, 64),
    latent_dim: Optional[int] = 32,
) -> Architecture:
    """Shared extractor with one class head per source (plus paired heads)."""
    heads = {source_head(k): HeadSpec(out_dim=n_classes) for k in range(n_sources)}
    if paired:
        heads.update(
            {paired_head(k): HeadSpec(out_dim=n_classes) for k in range(n_sources)}
        )
    return Architecture(
        input_dim=input_dim,
        hidden_dims=hidden_dims,
        latent_dim=latent_dim,
        heads=heads,
    )


@dataclass
class MomentPenalties:
    """Moment penalties and their gradients with respect to each latent batch.

    `source_grads[k]` matches `latents[k]`; `target_grad` matches the target.
    """

    src_tgt: float
    src_src: float
    source_grads: list[np.ndarray]
    target_grad: np.ndarray


def _norm_grad(diff: np.ndarray) -> tuple[float, np.ndarray]:
    norm = float(np.linalg.norm(diff))
    if norm < NORM_FLOOR:
        return norm, np.zeros_like(diff)
    return norm, diff / norm


def moment_penalties(
    latents: Sequence[np.ndarray],
    Z_target: np.ndarray,
    orders: Sequence[int] = (1, 2),
    literal_pairwise_factor: bool = False,
) -> MomentPenalties:
    """Ω_src_tgt and Ω_src_src on latent batch means.

    With `literal_pairwise_factor`, the source-source sum is multiplied by
    C(N, 2) instead of divided by it.
    """
    n_sources = len(latents)
    n_pairs = comb(n_sources, 2)
    pair_scale = n_pairs if literal_pairwise_factor else 1 / max(n_pairs, 1)
    src_tgt = 0.0
    src_src = 0.0
    source_grads = [np.zeros_like(Z) for Z in latents]
    target_grad = np.zeros_like(Z_target)

    for p in orders:
        means = [np.mean(Z**p, axis=0) for Z in latents]
        mean_t = np.mean(Z_target**p, axis=0)
        d_means = [np.zeros_like(mean) for mean in means]
        d_mean_t = np.zeros_like(mean_t)
        for k in range(n_sources):
            norm, g = _norm_grad(means[k] - mean_t)
            src_tgt += norm / n_sources
            d_means[k] += g / n_sources
            d_mean_t -= g / n_sources
        for i in range(n_sources):
            for j in range(i + 1, n_sources):
                norm, g = _norm_grad(means[i] - means[j])
                src_src += pair_scale * norm
                d_means[i] += pair_scale * g
                d_means[j] -= pair_scale * g
        for k, Z in enumerate(latents):
            source_grads[k] += p * Z ** (p - 1) / Z.shape[0] * d_means[k]
        target_grad += p * Z_target ** (p - 1) / Z_target.shape[0] * d_mean_t

    return MomentPenalties(src_tgt, src_src, source_grads, target_grad)


def m3sda_loss(
    net: FeedForwardNet,
    X_sources: Sequence[np.ndarray],
    Y_sources: Sequence[np.ndarray],
    X_target: np.ndarray,
    cfg: DeepDaConfig,
    grad: Optional[np.ndarray] = None,
) -> tuple[float, np.ndarray, MomentPenalties]:
    """(1/N) Σ_k CCE(h_k(φ(x_k)), y_k) + λ(Ω_src_tgt + Ω_src_src), with gradient.

    Returns:
        (loss, grad, penalties); the gradient is accumulated into `grad`.
    """
    grad = net.zero_grad() if grad is None else grad
    n_sources = len(X_sources)
    latents = []
    caches = []
    dZ = []
    risk = 0.0
    for k, (X, Y) in enumerate(zip(X_sources, Y_sources)):
        Z, cache = net.extract(X)
        probs = net.head_probs(Z, source_head(k))
        risk += cce_loss(probs, Y) / n_sources
        dZ.append(
            net.backward_head(
                source_head(k), Z, cce_grad(probs, Y) / n_sources, grad
            )
        )
        latents.append(Z)
        caches.append(cache)
    Z_t, cache_t = net.extract(X_target)
    penalties = moment_penalties(
        latents, Z_t, cfg.moment_orders, cfg.literal_pairwise_factor
    )
    for k in range(n_sources):
        net.backward_extractor(
            caches[k], dZ[k] + cfg.lam * penalties.source_grads[k], grad
        )
    net.backward_extractor(cache_t, cfg.lam * penalties.target_grad, grad)
    loss = risk + cfg.lam * (penalties.src_tgt + penalties.src_src)
    return loss, grad, penalties


def _softmax_backward(probs: np.ndarray, d_probs: np.ndarray) -> np.ndarray:
    return probs * (d_probs - np.sum(probs * d_probs, axis=1, keepdims=True))


def head_discrepancy(
    net: FeedForwardNet, Z_target: np.ndarray, k: int
) -> tuple[float, np.ndarray, np.ndarray]:
    """Mean L1 distance between the outputs of heads `source_k` and `paired_k`.

    Returns:
        (discrepancy, ∂/∂logits of source_k, ∂/∂logits of paired_k).
    """
    p = net.head_probs(Z_target, source_head(k))
    q = net.head_probs(Z_target, paired_head(k))
    sign = np.sign(p - q) / Z_target.shape[0]
    value = float(np.abs(p - q).sum(axis=1).mean())
    return value, _softmax_backward(p, sign), _softmax_backward(q, -sign)


def _paired_phases(
    net: FeedForwardNet,
    X_sources: Sequence[np.ndarray],
    Y_sources: Sequence[np.ndarray],
    X_target: np.ndarray,
    cfg: DeepDaConfig,
) -> None:
    """The two extra steps of the β variant, applied in place."""
    n_sources = len(X_sources)

    # (i) paired heads: source risk minus target discrepancy, φ frozen
    grad = net.zero_grad()
    Z_t, _ = net.extract(X_target)
    for k, (X, Y) in enumerate(zip(X_sources, Y_sources)):
        Z, _ = net.extract(X)
        probs = net.head_probs(Z, paired_head(k))
        net.backward_head(paired_head(k), Z, cce_grad(probs, Y) / n_sources, grad)
        _, _, d_q = head_discrepancy(net, Z_t, k)
        net.backward_head(paired_head(k), Z_t, -d_q / n_sources, grad)
    for k in range(n_sources):
        sgd_step(net, grad, cfg.train, where=net.head_slice(paired_head(k)))

    # (ii) extractor: target discrepancy, heads frozen
    grad = net.zero_grad()
    Z_t, cache_t = net.extract(X_target)
    dZ = np.zeros_like(Z_t)
    for k in range(n_sources):
        _, d_p, d_q = head_discrepancy(net, Z_t, k)
        dZ += net.backward_head(source_head(k), Z_t, d_p / n_sources, grad)
        dZ += net.backward_head(paired_head(k), Z_t, d_q / n_sources, grad)
    net.backward_extractor(cache_t, dZ, grad)
    sgd_step(net, grad, cfg.train, where=slice(0, net.extractor_size))


def m3sda_source_weights(accuracies: Sequence[float]) -> tuple[SimplexWeights, bool]:
    """w_k = acc_k / Σ acc_ℓ, or uniform (flagged) when every accuracy is 0."""
    accuracies = np.asarray(accuracies, dtype=np.float64)
    total = accuracies.sum()
    if total <= 0:
        log.warning(
            "All source heads have zero holdout accuracy; using uniform weights."
        )
        return SimplexWeights.uniform(accuracies.size), True
    return SimplexWeights(accuracies / total), False


def m3sda_predict(
    net: FeedForwardNet, X: np.ndarray, weights: SimplexWeights
) -> np.ndarray:
    """Σ_k w_k h_k(φ(x)); each row is a probability vector."""
    Z, _ = net.extract(np.asarray(X, dtype=np.float64))
    return sum(
        weights[k] * net.head_probs(Z, source_head(k)) for k in range(len(weights))
    )


@dataclass
class M3sdaResult:
    """Trained multi-head network and its source weighting."""

    net: FeedForwardNet
    weights: SimplexWeights
    losses: list[float]
    holdout_accuracy: list[float]
    degenerate_weights: bool = False
    penalties: list[tuple[float, float]] = field(default_factory=list)


@adapter_errors("M3SDA")
@multi_source(2)
def m3sda_fit(
    sources: Sequence[LabeledDataset],
    target: np.ndarray,
    cfg: DeepDaConfig = DeepDaConfig(),
    beta_variant: bool = False,
    architecture: Optional[Architecture] = None,
) -> M3sdaResult:
    """Trains M3SDA (or M3SDA-β) and weights the heads by holdout accuracy.

    A `cfg.holdout` fraction of each source is kept aside to score its head.
    Every step draws one equally sized batch per domain from its own seeded
    stream. The recorded loss is the full-batch objective after each epoch
    (initial value first); `penalties` holds (Ω_src_tgt, Ω_src_src) alongside.

    Raises:
        InputDomainError: If fewer than 2 sources are given, or a source has
            fewer than 2 points.
        TrainingError: If the objective becomes NaN or infinite.
    """
    X_t = target_features(target)
    n_sources = len(sources)
    if any(ds.n < 2 for ds in sources):
        raise InputDomainError("M3SDA needs at least 2 points per source.")
    architecture = architecture or m3sda_architecture(
        sources[0].n_features, sources[0].class_count, n_sources, beta_variant
    )
    train = cfg.train
    seeded = Rng(train.seed)
    net = FeedForwardNet.initialize(architecture, seeded.child(INIT_STREAM))

    splits = [
        holdout_split(ds.n, cfg.holdout, seeded.child(HOLDOUT_STREAM, k))
        for k, ds in enumerate(sources)
    ]
    fit_sets = [ds.subset(fit) for ds, (fit, _) in zip(sources, splits)]
    X_fit = [ds.features for ds in fit_sets]
    Y_fit = [ds.one_hot for ds in fit_sets]
    streams = [seeded.child(PAIRED_STREAM, k) for k in range(n_sources + 1)]
    main_span = (
        slice(0, net.head_slice(paired_head(0)).start) if beta_variant else slice(None)
    )

    def record() -> None:
        loss, _, penalties = m3sda_loss(net, X_fit, Y_fit, X_t, cfg)
        check_finite(loss, "M3SDA training", len(losses) - 1)
        losses.append(loss)
        trace.append((penalties.src_tgt, penalties.src_src))

    losses: list[float] = []
    trace: list[tuple[float, float]] = []
    record()
    steps = ceil(max(X.shape[0] for X in X_fit) / train.batch_size)
    for _ in range(train.epochs):
        for _ in range(steps):
            batches = [
                paired_indices(streams[k], X.shape[0], train.batch_size)
                for k, X in enumerate(X_fit)
            ]
            X_b = [X[idx] for X, idx in zip(X_fit, batches)]
            Y_b = [Y[idx] for Y, idx in zip(Y_fit, batches)]
            X_tb = X_t[paired_indices(streams[-1], X_t.shape[0], train.batch_size)]
            _, grad, _ = m3sda_loss(net, X_b, Y_b, X_tb, cfg)
            sgd_step(net, grad, train, where=main_span)
            if beta_variant:
                _paired_phases(net, X_b, Y_b, X_tb, cfg)
        record()

    holdout_accuracy = [
        float(
            np.mean(
                predict(net, ds.features[hold], source_head(k)) == ds.labels[hold]
            )
        )
        for k, (ds, (_, hold)) in enumerate(zip(sources, splits))
    ]
    weights, degenerate = m3sda_source_weights(holdout_accuracy)
    return M3sdaResult(
        net=net,
        weights=weights,
        losses=losses,
        holdout_accuracy=holdout_accuracy,
        degenerate_weights=degenerate,
        penalties=trace,
    )
