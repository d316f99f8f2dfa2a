"""Feed-forward networks with hand-derived gradients, ERM training, evaluation."""
import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.special import expit, softmax

from shiftkit.core import LabeledDataset, Rng
from shiftkit.exceptions import InputDomainError, TrainingError
from shiftkit.schemas import Architecture, HeadKind, TrainConfig

log = logging.getLogger(__name__)

PROB_FLOOR = 1e-12

LayerCache = list[tuple[np.ndarray, np.ndarray]]


@dataclass(frozen=True)
class _Layer:
    fan_in: int
    fan_out: int
    offset: int

    @property
    def size(self) -> int:
        return self.fan_in * self.fan_out + self.fan_out


def _layout(architecture: Architecture) -> dict[str, _Layer]:
    """Assigns every affine layer a slice of the flat parameter vector.

    Extractor layers come first, so the extractor occupies a prefix.
    """
    dims = [architecture.input_dim, *architecture.hidden_dims]
    if architecture.latent_dim is not None:
        dims.append(architecture.latent_dim)
    layers: dict[str, _Layer] = {}
    offset = 0
    for idx, (fan_in, fan_out) in enumerate(zip(dims[:-1], dims[1:])):
        layers[f"phi.{idx}"] = _Layer(fan_in, fan_out, offset)
        offset += layers[f"phi.{idx}"].size
    for name, head in architecture.heads.items():
        layers[f"head.{name}"] = _Layer(architecture.z_dim, head.out_dim, offset)
        offset += layers[f"head.{name}"].size
    return layers


class FeedForwardNet:
    """Extractor φ (affine + ReLU layers) with named affine heads.

    All parameters live in one flat vector; layer weights and biases are
    views into it.
    """

    architecture: Architecture
    params: np.ndarray

    def __init__(
        self, architecture: Architecture, params: Optional[np.ndarray] = None
    ):
        """Wraps a parameter vector (zeros if omitted) for `architecture`.

        Raises:
            InputDomainError: If `params` has the wrong size.
        """
        self.architecture = architecture
        self._layers = _layout(architecture)
        n_params = sum(layer.size for layer in self._layers.values())
        if params is None:
            params = np.zeros(n_params)
        params = np.array(params, dtype=np.float64).reshape(-1)
        if params.size != n_params:
            raise InputDomainError(
                f"Architecture needs {n_params} parameters, got {params.size}."
            )
        self.params = params

    @classmethod
    def initialize(cls, architecture: Architecture, rng: Rng) -> "FeedForwardNet":
        """Glorot-uniform weights, zero biases."""
        net = cls(architecture)
        for name, layer in net._layers.items():
            bound = np.sqrt(6 / (layer.fan_in + layer.fan_out))
            W, _ = net.layer(name)
            W[:] = rng.generator.uniform(-bound, bound, size=W.shape)
        return net

    @property
    def n_params(self) -> int:
        return self.params.size

    @property
    def extractor_size(self) -> int:
        """Number of leading parameters that belong to φ."""
        return sum(
            layer.size
            for name, layer in self._layers.items()
            if name.startswith("phi.")
        )

    @property
    def heads(self) -> list[str]:
        return list(self.architecture.heads)

    def layer(self, name: str) -> tuple[np.ndarray, np.ndarray]:
        """(W, b) views of a layer, by layout name (`phi.<i>` or `head.<name>`)."""
        return self._views(self.params, name)

    def head_slice(self, head: str) -> slice:
        """Span of a head's weights and bias in the flat parameter vector."""
        layer = self._layers[self._head_layer(head)]
        return slice(layer.offset, layer.offset + layer.size)

    def _views(self, vector: np.ndarray, name: str) -> tuple[np.ndarray, np.ndarray]:
        layer = self._layers[name]
        w_end = layer.offset + layer.fan_in * layer.fan_out
        W = vector[layer.offset : w_end].reshape(layer.fan_in, layer.fan_out)
        b = vector[w_end : w_end + layer.fan_out]
        return W, b

    def _head_layer(self, head: str) -> str:
        if head not in self.architecture.heads:
            raise InputDomainError(
                f'Unknown head "{head}" (available: {", ".join(self.heads)}).'
            )
        return f"head.{head}"

    def extract(self, X: np.ndarray) -> tuple[np.ndarray, LayerCache]:
        """Latent representation z = φ(x), plus the cache backprop needs."""
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2 or X.shape[1] != self.architecture.input_dim:
            raise InputDomainError(
                f"Expected inputs with {self.architecture.input_dim} columns, "
                f"got shape {X.shape}."
            )
        cache: LayerCache = []
        hidden = X
        for name in self._layers:
            if not name.startswith("phi."):
                break
            W, b = self.layer(name)
            pre = hidden @ W + b
            cache.append((hidden, pre))
            hidden = np.maximum(pre, 0.0)
        return hidden, cache

    def logits(self, Z: np.ndarray, head: str = "main") -> np.ndarray:
        W, b = self.layer(self._head_layer(head))
        return Z @ W + b

    def head_probs(self, Z: np.ndarray, head: str = "main") -> np.ndarray:
        logits = self.logits(Z, head)
        if self.architecture.heads[head].kind == HeadKind.SIGMOID:
            return expit(logits)
        return softmax(logits, axis=1)

    def forward(self, X: np.ndarray, head: str = "main") -> np.ndarray:
        """Class probabilities (softmax heads) or domain probabilities (sigmoid)."""
        Z, _ = self.extract(X)
        return self.head_probs(Z, head)

    def backward_head(
        self, head: str, Z: np.ndarray, dlogits: np.ndarray, grad: np.ndarray
    ) -> np.ndarray:
        """Accumulates head gradients into `grad`; returns ∂/∂Z."""
        name = self._head_layer(head)
        W, _ = self.layer(name)
        dW, db = self._views(grad, name)
        dW += Z.T @ dlogits
        db += dlogits.sum(axis=0)
        return dlogits @ W.T

    def backward_extractor(
        self, cache: LayerCache, dZ: np.ndarray, grad: np.ndarray
    ) -> np.ndarray:
        """Accumulates φ gradients into `grad`; returns ∂/∂X."""
        names = [name for name in self._layers if name.startswith("phi.")]
        upstream = dZ
        for name, (hidden, pre) in zip(reversed(names), reversed(cache)):
            W, _ = self.layer(name)
            dW, db = self._views(grad, name)
            dpre = upstream * (pre > 0)
            dW += hidden.T @ dpre
            db += dpre.sum(axis=0)
            upstream = dpre @ W.T
        return upstream

    def zero_grad(self) -> np.ndarray:
        return np.zeros_like(self.params)

    def copy(self) -> "FeedForwardNet":
        return FeedForwardNet(self.architecture, self.params)


def cce_loss(
    probs: np.ndarray, targets: np.ndarray, weights: Optional[np.ndarray] = None
) -> float:
    """Categorical cross-entropy, averaged (or `weights`-summed) over samples.

    Targets may be soft. Probabilities are clipped to [1e-12, 1].
    """
    probs = np.asarray(probs, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    if probs.shape != targets.shape:
        raise InputDomainError(
            f"Predictions {probs.shape} and targets {targets.shape} disagree."
        )
    if probs.shape[0] == 0:
        return 0.0
    per_sample = -(targets * np.log(np.clip(probs, PROB_FLOOR, 1.0))).sum(axis=1)
    if weights is None:
        return float(per_sample.mean())
    return float(np.dot(weights, per_sample))


def cce_grad(
    probs: np.ndarray, targets: np.ndarray, weights: Optional[np.ndarray] = None
) -> np.ndarray:
    """Gradient of `cce_loss` with respect to softmax logits."""
    n = probs.shape[0]
    if weights is None:
        weights = np.full(n, 1 / n) if n else np.zeros(0)
    return (probs * targets.sum(axis=1, keepdims=True) - targets) * weights[:, None]


def bce_loss(probs: np.ndarray, domains: np.ndarray) -> float:
    """Binary cross-entropy of sigmoid outputs (n × 1) against 0/1 labels."""
    p = np.clip(probs.reshape(-1), PROB_FLOOR, 1 - PROB_FLOOR)
    d = np.asarray(domains, dtype=np.float64).reshape(-1)
    return float(-np.mean(d * np.log(p) + (1 - d) * np.log(1 - p)))


def bce_grad(probs: np.ndarray, domains: np.ndarray) -> np.ndarray:
    """Gradient of `bce_loss` with respect to the sigmoid logit."""
    d = np.asarray(domains, dtype=np.float64).reshape(probs.shape)
    return (probs - d) / probs.shape[0]


def cce_backward(
    net: FeedForwardNet,
    X: np.ndarray,
    targets: np.ndarray,
    grad: np.ndarray,
    head: str = "main",
    weights: Optional[np.ndarray] = None,
) -> float:
    """Backpropagates CCE through a head and φ into `grad`; returns the loss."""
    Z, cache = net.extract(X)
    probs = net.head_probs(Z, head)
    dZ = net.backward_head(head, Z, cce_grad(probs, targets, weights), grad)
    net.backward_extractor(cache, dZ, grad)
    return cce_loss(probs, targets, weights)


def sgd_step(
    net: FeedForwardNet,
    grad: np.ndarray,
    cfg: TrainConfig,
    where: slice = slice(None),
    lr: Optional[float] = None,
) -> None:
    """One in-place SGD step with weight decay on `net.params[where]`."""
    lr = cfg.lr if lr is None else lr
    net.params[where] -= lr * (grad[where] + cfg.weight_decay * net.params[where])


def epoch_batches(n: int, batch_size: int, rng: Rng) -> list[np.ndarray]:
    """A fresh random partition of range(n) into minibatches."""
    order = rng.generator.permutation(n)
    return [order[start : start + batch_size] for start in range(0, n, batch_size)]


def check_finite(loss: float, what: str, epoch: int) -> None:
    if not np.isfinite(loss):
        raise TrainingError(f"{what} diverged at epoch {epoch} (loss = {loss}).")


@dataclass
class TrainResult:
    """A trained network and its per-epoch full-batch loss (initial loss first)."""

    net: FeedForwardNet
    losses: list[float]


def train_erm(
    net: FeedForwardNet, ds: LabeledDataset, cfg: TrainConfig, head: str = "main"
) -> TrainResult:
    """Empirical risk minimization of CCE by minibatch SGD.

    The input network is not modified. Minibatch order is drawn from
    stream 0 of `cfg.seed`.

    Raises:
        InputDomainError: If the dataset is empty.
        TrainingError: If the loss becomes NaN or infinite.
    """
    if ds.n == 0:
        raise InputDomainError("Cannot train on an empty dataset.")
    net = net.copy()
    targets = ds.one_hot
    batch_rng = Rng(cfg.seed).child(0)

    losses = [cce_loss(net.forward(ds.features, head), targets)]
    for epoch in range(cfg.epochs):
        for batch in epoch_batches(ds.n, cfg.batch_size, batch_rng):
            grad = net.zero_grad()
            cce_backward(net, ds.features[batch], targets[batch], grad, head)
            sgd_step(net, grad, cfg)
        loss = cce_loss(net.forward(ds.features, head), targets)
        check_finite(loss, "ERM training", epoch)
        losses.append(loss)
    return TrainResult(net=net, losses=losses)


def predict(net: FeedForwardNet, X: np.ndarray, head: str = "main") -> np.ndarray:
    """Argmax class predictions (ties go to the lowest class index)."""
    return np.argmax(net.forward(X, head), axis=1)


def accuracy(net: FeedForwardNet, ds: LabeledDataset, head: str = "main") -> float:
    """Fraction of correctly classified samples.

    Raises:
        InputDomainError: If the dataset is empty.
    """
    if ds.n == 0:
        raise InputDomainError("Cannot evaluate accuracy on an empty dataset.")
    return float(np.mean(predict(net, ds.features, head) == ds.labels))


@dataclass(frozen=True, eq=False)
class ReversedFeatures:
    """Latent features whose domain-branch gradient is scaled by −λ_rev."""

    values: np.ndarray
    cache: LayerCache
    lam_rev: float

    def backward(
        self,
        net: FeedForwardNet,
        d_domain: np.ndarray,
        grad: np.ndarray,
        d_direct: Optional[np.ndarray] = None,
    ) -> None:
        """Pushes −λ_rev · `d_domain` (plus any unreversed `d_direct`) into φ."""
        upstream = -self.lam_rev * d_domain
        if d_direct is not None:
            upstream = upstream + d_direct
        net.backward_extractor(self.cache, upstream, grad)


def grad_reversal_forward(
    net: FeedForwardNet, X: np.ndarray, lam_rev: float = 1.0
) -> ReversedFeatures:
    """φ(X) behind a gradient reversal layer (identity forward)."""
    Z, cache = net.extract(X)
    return ReversedFeatures(values=Z, cache=cache, lam_rev=lam_rev)
