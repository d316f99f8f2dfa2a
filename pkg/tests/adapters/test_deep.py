"""Tests for deep single-source adapters."""
import numpy as np
import pytest

from shiftkit.adapters.deep import (
    DOMAIN_HEAD,
    INIT_STREAM,
    dann_domain_grad,
    dann_fit,
    deepjdot_batch_loss,
    deepjdot_fit,
    holdout_split,
    mmdnet_fit,
    with_domain_head,
)
from shiftkit.classifiers import FeedForwardNet, bce_loss, train_erm
from shiftkit.core import Rng, one_hot
from shiftkit.exceptions import InputDomainError
from shiftkit.schemas import DeepDaConfig, HeadKind, HeadSpec


@pytest.fixture
def cfg(tiny_train):
    return DeepDaConfig(lam=0.5, train=tiny_train)


@pytest.fixture
def dann_net(tiny_arch):
    arch = tiny_arch(2, 2, domain=HeadSpec(out_dim=1, kind=HeadKind.SIGMOID))
    return FeedForwardNet.initialize(arch, Rng(2))


@pytest.mark.parametrize("fit", [mmdnet_fit, deepjdot_fit])
def test_deep_fit__zero_lambda_is_source_erm(
    fit, blobs, shifted_blobs, tiny_train, tiny_arch
):
    arch = tiny_arch(2, 2)
    cfg = DeepDaConfig(lam=0.0, train=tiny_train)
    adapted = fit(blobs, shifted_blobs.features, cfg, arch)
    init = FeedForwardNet.initialize(arch, Rng(tiny_train.seed).child(INIT_STREAM))
    erm = train_erm(init, blobs, tiny_train)
    np.testing.assert_allclose(adapted.net.params, erm.net.params, rtol=1e-12)


def test_mmdnet_fit__records_latent_mmd(blobs, shifted_blobs, cfg, tiny_arch):
    result = mmdnet_fit(blobs, shifted_blobs.features, cfg, tiny_arch(2, 2))
    assert len(result.losses) == cfg.train.epochs + 1
    assert result.diagnostics["latent_mmd_before"] >= 0
    assert result.diagnostics["latent_mmd_after"] >= 0


def test_mmdnet_fit__does_not_modify_input_net(blobs, shifted_blobs, cfg, tiny_arch):
    net = FeedForwardNet.initialize(tiny_arch(2, 2), Rng(5))
    before = net.params.copy()
    mmdnet_fit(blobs, shifted_blobs.features, cfg, net=net)
    np.testing.assert_array_equal(net.params, before)


def test_with_domain_head__idempotent(tiny_arch):
    arch = with_domain_head(tiny_arch(2, 3))
    assert arch.heads[DOMAIN_HEAD].kind == HeadKind.SIGMOID
    assert with_domain_head(arch) is arch


def test_dann_domain_grad__head_finite_differences(dann_net, numeric_grad):
    generator = Rng(4).generator
    X = generator.normal(size=(6, 2))
    domains = np.array([0, 0, 0, 1, 1, 1])
    _, grad = dann_domain_grad(dann_net, X, domains, lam=0.7)

    def loss_fn(params):
        net = FeedForwardNet(dann_net.architecture, params)
        return 0.7 * bce_loss(net.forward(X, DOMAIN_HEAD), domains)

    span = dann_net.head_slice(DOMAIN_HEAD)
    indices = list(range(span.start, span.stop))
    np.testing.assert_allclose(
        grad[indices],
        numeric_grad(loss_fn, dann_net.params, indices),
        rtol=1e-4,
        atol=1e-7,
    )


def test_dann_domain_grad__extractor_is_reversed(dann_net, numeric_grad):
    generator = Rng(4).generator
    X = generator.normal(size=(6, 2))
    domains = np.array([0, 0, 0, 1, 1, 1])
    _, grad = dann_domain_grad(dann_net, X, domains, lam=0.7, lam_rev=0.5)

    def loss_fn(params):
        net = FeedForwardNet(dann_net.architecture, params)
        return 0.7 * bce_loss(net.forward(X, DOMAIN_HEAD), domains)

    indices = list(range(dann_net.extractor_size))
    np.testing.assert_allclose(
        grad[indices],
        -0.5 * numeric_grad(loss_fn, dann_net.params, indices),
        rtol=1e-4,
        atol=1e-7,
    )
    main = dann_net.head_slice("main")
    assert np.all(grad[main] == 0)


def test_holdout_split__disjoint_cover():
    train, hold = holdout_split(10, 0.2, Rng(0))
    assert hold.size == 2
    assert sorted(np.concatenate([train, hold]).tolist()) == list(range(10))


def test_holdout_split__both_parts_nonempty():
    train, hold = holdout_split(2, 0.9, Rng(0))
    assert (train.size, hold.size) == (1, 1)


def test_dann_fit__tracks_domain_accuracy(blobs, shifted_blobs, cfg, tiny_arch):
    result = dann_fit(blobs, shifted_blobs.features, cfg, tiny_arch(2, 2))
    assert DOMAIN_HEAD in result.net.heads
    assert len(result.domain_accuracy) == cfg.train.epochs
    assert all(0.0 <= acc <= 1.0 for acc in result.domain_accuracy)
    assert result.diagnostics["domain_accuracy"] == result.domain_accuracy[-1]


def test_dann_fit__net_without_domain_head(blobs, shifted_blobs, cfg, tiny_arch):
    net = FeedForwardNet.initialize(tiny_arch(2, 2), Rng(0))
    with pytest.raises(InputDomainError, match="head on the network"):
        dann_fit(blobs, shifted_blobs.features, cfg, net=net)


def test_dann_fit__tiny_domain(blobs, shifted_blobs, cfg):
    with pytest.raises(InputDomainError, match="at least 2 points"):
        dann_fit(blobs, shifted_blobs.features[:1], cfg)


def test_deepjdot_batch_loss__fixed_plan_finite_differences(
    tiny_arch, numeric_grad
):
    net = FeedForwardNet.initialize(tiny_arch(2, 3), Rng(6))
    generator = Rng(7).generator
    X_s = generator.normal(size=(4, 2))
    Y_s = one_hot([0, 1, 2, 1], 3)
    X_t = generator.normal(size=(5, 2))
    plan = generator.dirichlet(np.ones(20)).reshape(4, 5)
    loss, grad, transport = deepjdot_batch_loss(
        net, X_s, Y_s, X_t, alpha=0.3, beta=0.8, plan=plan
    )
    assert transport.cost == pytest.approx(loss)

    def loss_fn(params):
        candidate = FeedForwardNet(net.architecture, params)
        value, _, _ = deepjdot_batch_loss(
            candidate, X_s, Y_s, X_t, alpha=0.3, beta=0.8, plan=plan
        )
        return value

    indices = list(range(0, net.n_params, 3))
    np.testing.assert_allclose(
        grad[indices],
        numeric_grad(loss_fn, net.params, indices),
        rtol=1e-4,
        atol=1e-7,
    )


def test_deepjdot_batch_loss__exact_plan_marginals(tiny_arch):
    net = FeedForwardNet.initialize(tiny_arch(2, 2), Rng(6))
    generator = Rng(8).generator
    X_s = generator.normal(size=(4, 2))
    X_t = generator.normal(size=(6, 2))
    _, _, transport = deepjdot_batch_loss(
        net, X_s, one_hot([0, 1, 0, 1], 2), X_t, alpha=1.0, beta=1.0
    )
    np.testing.assert_allclose(transport.row_marginal, np.full(4, 0.25))
    np.testing.assert_allclose(transport.col_marginal, np.full(6, 1 / 6))


def test_deepjdot_fit__losses(blobs, shifted_blobs, cfg, tiny_arch):
    result = deepjdot_fit(blobs, shifted_blobs.features, cfg, tiny_arch(2, 2))
    assert len(result.losses) == cfg.train.epochs + 1
    assert all(np.isfinite(result.losses))
