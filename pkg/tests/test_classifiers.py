"""Tests for feed-forward networks and ERM training."""
import numpy as np
import pytest

from shiftkit.classifiers import (
    FeedForwardNet,
    accuracy,
    bce_grad,
    bce_loss,
    cce_backward,
    cce_grad,
    cce_loss,
    check_finite,
    epoch_batches,
    grad_reversal_forward,
    predict,
    sgd_step,
    train_erm,
)
from shiftkit.core import LabeledDataset, Rng
from shiftkit.exceptions import InputDomainError, TrainingError
from shiftkit.schemas import Architecture, HeadKind, HeadSpec, TrainConfig


def _numeric_grad(loss_fn, params, indices, step=1e-6):
    grads = []
    for idx in indices:
        bumped = params.copy()
        bumped[idx] += step
        lowered = params.copy()
        lowered[idx] -= step
        grads.append((loss_fn(bumped) - loss_fn(lowered)) / (2 * step))
    return np.array(grads)


@pytest.fixture
def net(tiny_arch):
    return FeedForwardNet.initialize(tiny_arch(2, 3), Rng(0))


def test_feed_forward_net__layout(net):
    # 2→6→4 extractor plus a 4→3 head.
    assert net.extractor_size == (2 * 6 + 6) + (6 * 4 + 4)
    assert net.n_params == net.extractor_size + 4 * 3 + 3
    assert net.heads == ["main"]
    assert net.head_slice("main") == slice(net.extractor_size, net.n_params)


def test_feed_forward_net__layer_is_view(net):
    W, b = net.layer("phi.0")
    W[0, 0] = 42.0
    assert net.params[0] == 42.0
    assert b.tolist() == [0.0] * 6


def test_feed_forward_net__wrong_param_count(tiny_arch):
    with pytest.raises(InputDomainError, match="parameters"):
        FeedForwardNet(tiny_arch(2, 3), np.zeros(3))


def test_feed_forward_net__unknown_head(net):
    with pytest.raises(InputDomainError, match="Unknown head"):
        net.forward(np.zeros((1, 2)), "domain")


def test_feed_forward_net__wrong_input_width(net):
    with pytest.raises(InputDomainError, match="2 columns"):
        net.extract(np.zeros((1, 3)))


def test_feed_forward_net__probabilities(net):
    probs = net.forward(Rng(1).generator.normal(size=(5, 2)))
    assert probs.shape == (5, 3)
    np.testing.assert_allclose(probs.sum(axis=1), 1.0)


def test_feed_forward_net__identity_extractor():
    arch = Architecture(
        input_dim=2,
        hidden_dims=(),
        latent_dim=None,
        heads={"main": HeadSpec(out_dim=2)},
    )
    net = FeedForwardNet(arch)
    X = np.array([[1.0, -2.0]])
    Z, cache = net.extract(X)
    np.testing.assert_array_equal(Z, X)
    assert cache == []
    assert net.extractor_size == 0


def test_feed_forward_net__sigmoid_head(tiny_arch):
    arch = tiny_arch(2, 2, domain=HeadSpec(out_dim=1, kind=HeadKind.SIGMOID))
    net = FeedForwardNet.initialize(arch, Rng(0))
    probs = net.forward(np.zeros((3, 2)), "domain")
    assert probs.shape == (3, 1)
    assert np.all((probs > 0) & (probs < 1))


def test_feed_forward_net__copy_is_independent(net):
    clone = net.copy()
    clone.params[0] += 1.0
    assert clone.params[0] != net.params[0]


def test_cce_loss__perfect_prediction():
    assert cce_loss(np.eye(2), np.eye(2)) == pytest.approx(0.0)


def test_cce_loss__clips_zero_probability():
    loss = cce_loss(np.array([[0.0, 1.0]]), np.array([[1.0, 0.0]]))
    assert loss == pytest.approx(-np.log(1e-12))


def test_cce_loss__shape_mismatch():
    with pytest.raises(InputDomainError, match="disagree"):
        cce_loss(np.ones((2, 2)) / 2, np.ones((2, 3)) / 3)


def test_cce_loss__weighted_sum():
    probs = np.array([[0.5, 0.5], [0.25, 0.75]])
    targets = np.eye(2)
    loss = cce_loss(probs, targets, np.array([0.2, 0.8]))
    assert loss == pytest.approx(-0.2 * np.log(0.5) - 0.8 * np.log(0.75))


def test_cce_backward__finite_differences(net):
    generator = Rng(2).generator
    X = generator.normal(size=(7, 2))
    targets = np.eye(3)[generator.integers(3, size=7)]
    grad = net.zero_grad()
    cce_backward(net, X, targets, grad)

    def loss_fn(params):
        return cce_loss(FeedForwardNet(net.architecture, params).forward(X), targets)

    indices = [0, 5, 13, net.extractor_size - 1, net.extractor_size, net.n_params - 1]
    np.testing.assert_allclose(
        grad[indices], _numeric_grad(loss_fn, net.params, indices), rtol=1e-4, atol=1e-7
    )


def test_cce_backward__soft_targets_finite_differences(net):
    generator = Rng(3).generator
    X = generator.normal(size=(4, 2))
    targets = generator.dirichlet(np.ones(3), size=4)
    weights = np.array([0.1, 0.2, 0.3, 0.4])
    grad = net.zero_grad()
    cce_backward(net, X, targets, grad, weights=weights)

    def loss_fn(params):
        probs = FeedForwardNet(net.architecture, params).forward(X)
        return cce_loss(probs, targets, weights)

    indices = list(range(0, net.n_params, 7))
    np.testing.assert_allclose(
        grad[indices], _numeric_grad(loss_fn, net.params, indices), rtol=1e-4, atol=1e-7
    )


def test_bce_grad__finite_differences():
    logits = np.array([[0.3], [-1.2], [2.0]])
    domains = np.array([0, 1, 1])

    def loss_fn(values):
        return bce_loss(1 / (1 + np.exp(-values.reshape(-1, 1))), domains)

    analytic = bce_grad(1 / (1 + np.exp(-logits)), domains).reshape(-1)
    numeric = _numeric_grad(loss_fn, logits.reshape(-1), range(3))
    np.testing.assert_allclose(analytic, numeric, rtol=1e-5)


def test_cce_grad__uniform_weights():
    probs = np.array([[0.25, 0.75]])
    np.testing.assert_allclose(cce_grad(probs, np.array([[1.0, 0.0]])), [[-0.75, 0.75]])


def test_sgd_step__respects_slice(net):
    before = net.params.copy()
    grad = np.ones_like(net.params)
    where = net.head_slice("main")
    sgd_step(net, grad, TrainConfig(lr=0.1, weight_decay=0.0), where=where)
    np.testing.assert_array_equal(net.params[: where.start], before[: where.start])
    np.testing.assert_allclose(net.params[where], before[where] - 0.1)


def test_epoch_batches__partition():
    batches = epoch_batches(10, 4, Rng(0))
    assert [b.size for b in batches] == [4, 4, 2]
    assert sorted(np.concatenate(batches).tolist()) == list(range(10))


def test_check_finite__nan():
    with pytest.raises(TrainingError, match="diverged at epoch 3"):
        check_finite(float("nan"), "ERM training", 3)


def test_train_erm__learns_separable_blobs(blobs, tiny_arch):
    net = FeedForwardNet.initialize(tiny_arch(2, 2), Rng(0))
    cfg = TrainConfig(lr=0.1, batch_size=8, epochs=30, seed=0)
    result = train_erm(net, blobs, cfg)
    assert len(result.losses) == cfg.epochs + 1
    assert result.losses[-1] < result.losses[0]
    assert accuracy(result.net, blobs) >= 0.95


def test_train_erm__input_net_untouched(blobs, tiny_arch, tiny_train):
    net = FeedForwardNet.initialize(tiny_arch(2, 2), Rng(0))
    before = net.params.copy()
    train_erm(net, blobs, tiny_train)
    np.testing.assert_array_equal(net.params, before)


def test_train_erm__reproducible(blobs, tiny_arch, tiny_train):
    net = FeedForwardNet.initialize(tiny_arch(2, 2), Rng(0))
    a = train_erm(net, blobs, tiny_train).net.params
    b = train_erm(net, blobs, tiny_train).net.params
    np.testing.assert_array_equal(a, b)


def test_train_erm__empty_dataset(tiny_arch, tiny_train):
    net = FeedForwardNet.initialize(tiny_arch(2, 2), Rng(0))
    empty = LabeledDataset(np.zeros((0, 2)), [], class_count=2)
    with pytest.raises(InputDomainError, match="empty"):
        train_erm(net, empty, tiny_train)


def test_predict__ties_to_lowest_class():
    arch = Architecture(
        input_dim=1,
        hidden_dims=(),
        latent_dim=None,
        heads={"main": HeadSpec(out_dim=3)},
    )
    assert predict(FeedForwardNet(arch), np.zeros((2, 1))).tolist() == [0, 0]


def test_grad_reversal_forward__flips_extractor_gradient(net):
    X = Rng(4).generator.normal(size=(3, 2))
    dZ = Rng(5).generator.normal(size=(3, 4))

    plain = net.zero_grad()
    _, cache = net.extract(X)
    net.backward_extractor(cache, dZ, plain)

    reversed_grad = net.zero_grad()
    features = grad_reversal_forward(net, X, lam_rev=0.5)
    np.testing.assert_array_equal(features.values, net.extract(X)[0])
    features.backward(net, dZ, reversed_grad)
    np.testing.assert_allclose(reversed_grad, -0.5 * plain)
