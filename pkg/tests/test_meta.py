import numpy as np
import pytest

from lafr.data import SyntheticDomainSpec, generate_domain, make_rng, random_prototypes
from lafr.errors import InsufficientDomainsError
from lafr.gcn import gcn_backward, gcn_forward, gcn_loss, init_gcn
from lafr.meta import (
    MetaConfig,
    mean_loss_and_grad,
    meta_step,
    prepare_domain,
    split_meta,
    train_meta_gcn,
    train_pooled_gcn,
)


def _bundle(num=3, classes=6, seed=0, d=6):
    protos = random_prototypes(num * classes, d, seed)
    out = []
    for i in range(num):
        spec = SyntheticDomainSpec(num_classes=classes, images_per_class=(4, 6), rotation_seed=seed * 10 + i,
                                   rotation_strength=0.2, noise_sigma=0.08, sample_seed=i)
        out.append(prepare_domain(generate_domain(spec, protos[i * classes:(i + 1) * classes]), k=4))
    return out


def test_single_domain_cannot_split():
    with pytest.raises(InsufficientDomainsError):
        split_meta(_bundle(1), make_rng(0))
    with pytest.raises(InsufficientDomainsError):
        train_meta_gcn(_bundle(1), MetaConfig(max_iter=1))


def test_two_domains_split_one_one():
    bundle = _bundle(2)
    train, test, held = split_meta(bundle, make_rng(0))
    assert len(train) == 1 and train[0] is bundle[1 - held] and test is bundle[held]


def test_split_is_deterministic():
    bundle = _bundle(4, classes=3)
    assert split_meta(bundle, make_rng(9))[2] == split_meta(bundle, make_rng(9))[2]


def test_split_frequencies_uniform():
    bundle = _bundle(3, classes=3)
    rng = make_rng(1)
    counts = np.bincount([split_meta(bundle, rng)[2] for _ in range(10_000)], minlength=3)
    np.testing.assert_allclose(counts / 10_000, 1 / 3, atol=0.02)


def test_xi_zero_is_momentum_sgd_on_meta_train():
    bundle = _bundle(3)
    model = init_gcn(6, (5,), seed=1)
    cfg = MetaConfig(xi=0.0, alpha=0.3, beta=0.05, momentum=0.9)
    velocity = np.full(model.num_params, 0.01)
    new, vel, _, _ = meta_step(model, bundle[:2], bundle[2], cfg, velocity)
    _, g = mean_loss_and_grad(model.to_vector(), model.dims, bundle[:2])
    expected_v = 0.9 * velocity + g
    np.testing.assert_array_equal(vel, expected_v)
    np.testing.assert_array_equal(new.to_vector(), model.to_vector() - 0.05 * expected_v)


def test_alpha_zero_uses_both_gradients_at_phi():
    bundle = _bundle(3)
    model = init_gcn(6, (5,), seed=2)
    cfg = MetaConfig(alpha=0.0, xi=0.7, beta=0.1)
    new, vel, l_mtr, l_mte = meta_step(model, bundle[:2], bundle[2], cfg)
    phi = model.to_vector()
    _, g_tr = mean_loss_and_grad(phi, model.dims, bundle[:2])
    l_te, g_te = gcn_backward(model, bundle[2].graph, bundle[2].features, bundle[2].confidence)
    np.testing.assert_array_equal(vel, g_tr + 0.7 * g_te)
    assert l_mte == l_te


def test_meta_train_gradient_is_mean_over_domains():
    bundle = _bundle(3)
    model = init_gcn(6, (5,), seed=3)
    loss, grad = mean_loss_and_grad(model.to_vector(), model.dims, bundle[:2])
    parts = [gcn_backward(model, d.graph, d.features, d.confidence) for d in bundle[:2]]
    assert loss == pytest.approx((parts[0][0] + parts[1][0]) / 2, abs=1e-15)
    np.testing.assert_allclose(grad, (parts[0][1] + parts[1][1]) / 2, atol=1e-15)


def test_inner_step_does_not_mutate_caller():
    bundle = _bundle(3)
    model = init_gcn(6, (5,), seed=4)
    before = model.to_vector().copy()
    meta_step(model, bundle[:2], bundle[2], MetaConfig())
    np.testing.assert_array_equal(model.to_vector(), before)


def test_two_domain_training_reduces_held_out_loss():
    bundle = _bundle(3, classes=8, seed=5)
    model = init_gcn(6, (16,), seed=0)
    held = bundle[2]
    before = gcn_loss(gcn_forward(model, held.graph, held.features), held.confidence)
    trained, history = train_meta_gcn(bundle[:2], MetaConfig(max_iter=200, seed=0), model=model)
    after = gcn_loss(gcn_forward(trained, held.graph, held.features), held.confidence)
    assert after < before
    assert np.all(np.isfinite(history.meta_train)) and np.all(np.isfinite(history.meta_test))


def test_max_iter_one_is_one_step():
    bundle = _bundle(3)
    cfg = MetaConfig(max_iter=1, seed=3)
    model = init_gcn(6, (5,), seed=3)
    trained, history = train_meta_gcn(bundle, cfg, model=model)
    train, test, _ = split_meta(bundle, make_rng(3, 0x3E7A))
    expected, *_ = meta_step(model, train, test, cfg)
    assert history.iterations == [0]
    np.testing.assert_array_equal(trained.to_vector(), expected.to_vector())


def test_xi_zero_no_momentum_is_plain_sgd_stepwise():
    bundle = _bundle(3)
    cfg = MetaConfig(max_iter=5, xi=0.0, momentum=0.0, beta=0.2, seed=6)
    model = init_gcn(6, (5,), seed=6)
    trained, _ = train_meta_gcn(bundle, cfg, model=model)
    rng = make_rng(6, 0x3E7A)
    phi = model.to_vector()
    for _ in range(5):
        train, _, _ = split_meta(bundle, rng)
        phi = phi - 0.2 * mean_loss_and_grad(phi, model.dims, train)[1]
    np.testing.assert_array_equal(trained.to_vector(), phi)


def test_training_is_bit_identical_on_rerun():
    bundle = _bundle(3)
    a, ha = train_meta_gcn(bundle, MetaConfig(max_iter=20, seed=1), hidden=(4,))
    b, hb = train_meta_gcn(bundle, MetaConfig(max_iter=20, seed=1), hidden=(4,))
    assert a.to_vector().tobytes() == b.to_vector().tobytes()
    assert ha.to_csv() == hb.to_csv()
    p1, _ = train_pooled_gcn(bundle, MetaConfig(max_iter=20, seed=1), k=4, hidden=(4,))
    p2, _ = train_pooled_gcn(bundle, MetaConfig(max_iter=20, seed=1), k=4, hidden=(4,))
    assert p1.to_vector().tobytes() == p2.to_vector().tobytes()


def test_loss_history_csv(tmp_path):
    _, history = train_meta_gcn(_bundle(2), MetaConfig(max_iter=3), hidden=(3,))
    history.write_csv(tmp_path / "h.csv")
    lines = (tmp_path / "h.csv").read_text().splitlines()
    assert lines[0] == "iteration,L_mtr,L_mte" and len(lines) == 4


@pytest.mark.parametrize("kwargs", [dict(alpha=-0.1), dict(beta=0.0), dict(xi=-1.0), dict(max_iter=0),
                                    dict(momentum=1.0)])
def test_config_validation(kwargs):
    with pytest.raises(ValueError):
        MetaConfig(**kwargs)
