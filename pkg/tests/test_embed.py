import math

import numpy as np
import pytest

from bayes_curiosity import blr, embed
from bayes_curiosity.embed import DemoSet, EmbedTrainConfig, FeatureMap
from bayes_curiosity.envs import get_spec
from bayes_curiosity.errors import InvalidArgument
from bayes_curiosity.experts import get_expert
from bayes_curiosity.nn import MLPSpec

from oracles import central_fd, dense_posterior, dense_predictive_variance, rel_err, scalar_nll, tanh_mlp


def _random_map(rng, sizes=(3, 5, 4), scale=0.7):
    """Feature map with explicitly built layers, plus the oracle's own copy of them."""
    layers = [(rng.normal(scale=scale, size=(a, b)), rng.normal(scale=0.2, size=b))
              for a, b in zip(sizes[:-1], sizes[1:])]
    flat = np.concatenate([np.concatenate([W.ravel(), b]) for W, b in layers])
    mean = rng.normal(size=sizes[0])
    std = rng.uniform(0.5, 2.0, size=sizes[0])
    fm = FeatureMap(MLPSpec(sizes, "tanh"), flat, mean, std)

    def phi(x):
        return np.append(tanh_mlp(layers, (np.asarray(x) - mean) / std), 1.0)

    return fm, phi


def _demos(rng, n, d=3, k=2):
    return DemoSet(rng.normal(size=(n, d)), rng.normal(size=(n, k)))


def test_zero_weight_map_outputs_bias_only():
    fm = embed.init_feature_map(4, latent_dim=5)
    out = embed.embed(fm, np.array([1.0, -2.0, 3.0, 0.5]))
    np.testing.assert_array_equal(out, [0, 0, 0, 0, 0, 1])


def test_feature_shape_and_determinism():
    fm = embed.init_feature_map(3, 7, rng=np.random.default_rng(0))
    x = np.random.default_rng(1).normal(size=3)
    a, b = embed.embed(fm, x), embed.embed(fm, x)
    assert a.shape == (8,) and a[-1] == 1.0
    assert a.tobytes() == b.tobytes()


def test_features_match_oracle_forward():
    fm, phi = _random_map(np.random.default_rng(2))
    X = np.random.default_rng(3).normal(size=(6, 3))
    np.testing.assert_allclose(fm.features(X), [phi(x) for x in X], rtol=1e-14)


def test_features_reject_bad_input():
    fm = embed.init_feature_map(2, 3)
    with pytest.raises(InvalidArgument):
        fm.features(np.ones((2, 3)))
    with pytest.raises(InvalidArgument):
        fm.features(np.array([[np.nan, 0.0]]))


def test_feature_map_rejects_linear_output():
    net = MLPSpec((2, 3), "linear")
    with pytest.raises(InvalidArgument):
        FeatureMap(net, np.zeros(net.n_params), np.zeros(2), np.ones(2))


def test_feature_map_round_trip(tmp_path):
    fm, _ = _random_map(np.random.default_rng(4))
    fm.save(tmp_path / "fm.bin")
    back = FeatureMap.load(tmp_path / "fm.bin")
    X = np.random.default_rng(5).normal(size=(4, 3))
    assert back.features(X).tobytes() == fm.features(X).tobytes()
    assert (tmp_path / "fm.bin").read_bytes().startswith(b"BCPARAM featuremap 1\n")


def test_conditional_moments_single_point_large_beta():
    fm, _ = _random_map(np.random.default_rng(6))
    x0 = np.array([0.3, -0.2, 0.1])
    E = DemoSet(x0[None, :], np.array([[1.5, -0.5]]))
    mu, var = embed.conditional_moments(fm, E, x0, alpha=1e-4, beta=1e8)
    np.testing.assert_allclose(mu, [1.5, -0.5], rtol=1e-6)
    assert var < 1e-6


def test_query_orthogonal_to_demos_keeps_prior_variance():
    # the bias feature is shared by every observation, so exact orthogonality
    # only exists at the level of feature vectors
    alpha, beta = 0.2, 3.0
    Phi = np.array([[1.0, 0.0, 0.0, 0.0], [2.0, -1.0, 0.0, 0.0]])
    post = blr.update(blr.make_prior(alpha, beta, 4), Phi, [0.5, 1.0])
    q = np.array([0.0, 0.0, 1.5, -2.0])
    got = blr.predict(post, q)
    assert got.variance == pytest.approx(1 / beta + q @ q / alpha, rel=1e-12)
    assert got.mean == 0.0


def test_conditional_moments_compose_blr_core():
    rng = np.random.default_rng(7)
    fm, phi = _random_map(rng)
    E = _demos(rng, 12)
    x = rng.normal(size=3)
    mu, var = embed.conditional_moments(fm, E, x, 1e-2, 5.0)
    Phi = np.array([phi(e) for e in E.X])
    for k in range(2):
        _, m = dense_posterior(1e-2, 5.0, Phi, E.T[:, k])
        assert mu[k] == pytest.approx(phi(x) @ m, rel=1e-10)
    assert var == pytest.approx(dense_predictive_variance(1e-2, 5.0, Phi, phi(x)), rel=1e-10)
    # and equal to blr-core composed by hand
    post = blr.update(blr.make_prior(1e-2, 5.0, fm.dim), fm.features(E.X), E.T[:, 0])
    assert mu[0] == pytest.approx(blr.predict(post, embed.embed(fm, x)).mean, rel=1e-10)


def test_nll_zero_residual_unit_variance():
    # zero weights pin phi = (0, 1); one conditioning row with target 0 keeps the mean at 0,
    # and alpha = beta = 1.5 gives variance 1/1.5 + 1/(1.5 + 1.5) = 1
    fm = embed.init_feature_map(1, latent_dim=1)
    E = DemoSet(np.array([[0.0]]), np.array([[0.0]]))
    batch = DemoSet(np.array([[0.3]]), np.array([[0.0]]))
    assert embed.nll_loss(fm, E, batch, alpha=1.5, beta=1.5) == pytest.approx(
        0.5 * math.log(2 * math.pi), abs=1e-14)


def test_nll_doubling_residual_quadratic_term():
    fm, phi = _random_map(np.random.default_rng(8))
    rng = np.random.default_rng(9)
    E = _demos(rng, 10, k=1)
    x = rng.normal(size=3)
    mu, var = embed.conditional_moments(fm, E, x, 1e-2, 3.0)
    r = 0.4
    l1 = embed.nll_loss(fm, E, DemoSet(x[None, :], np.array([[mu[0] + r]])), 1e-2, 3.0)
    l2 = embed.nll_loss(fm, E, DemoSet(x[None, :], np.array([[mu[0] + 2 * r]])), 1e-2, 3.0)
    assert l2 - l1 == pytest.approx(3 * r * r / (2 * var), rel=1e-9)


@pytest.mark.parametrize("literal", [False, True])
def test_nll_matches_scalar_oracle(literal):
    for seed in range(5):
        rng = np.random.default_rng(100 + seed)
        fm, phi = _random_map(rng)
        E, B = _demos(rng, 9), _demos(rng, 6)
        got = embed.nll_loss(fm, E, B, 0.1, 4.0, unhalved_residual=literal)
        want = scalar_nll(phi, E.X, E.T, B.X, B.T, 0.1, 4.0, literal)
        assert got == pytest.approx(want, rel=1e-10, abs=1e-10)


def test_nll_frozen_value():
    # scalar-oracle value for this seed, computed once and frozen
    rng = np.random.default_rng(123)
    fm, _ = _random_map(rng)
    E, B = _demos(rng, 9), _demos(rng, 6)
    assert embed.nll_loss(fm, E, B, 0.1, 4.0) == pytest.approx(3.784866779434891, rel=1e-10)


@pytest.mark.parametrize("literal", [False, True])
def test_nll_gradient_finite_differences(literal):
    rng = np.random.default_rng(11)
    fm, _ = _random_map(rng, sizes=(3, 5, 3))  # D=3, M=4
    E, B = _demos(rng, 8), _demos(rng, 8)
    g = embed.nll_gradient(fm, E, B, 0.5, 2.0, unhalved_residual=literal)
    fd = central_fd(lambda p: embed.nll_loss(fm.with_params(p), E, B, 0.5, 2.0, literal), fm.params)
    assert rel_err(g, fd) <= 1e-4


def test_nll_gradient_zero_signal():
    # zero weights: every feature is (0, ..., 0, 1); all targets equal
    fm = embed.init_feature_map(2, 3, hidden=(4,))
    E = DemoSet(np.random.default_rng(0).normal(size=(5, 2)), np.full((5, 1), 0.7))
    B = DemoSet(np.random.default_rng(1).normal(size=(4, 2)), np.full((4, 1), 0.7))
    grad = embed.nll_gradient(fm, E, B, 1.0, 1.0)
    first_layer = fm.net.unpack(grad)[0][0]
    np.testing.assert_allclose(first_layer, 0.0, atol=1e-15)


def test_nll_gradient_deterministic():
    rng = np.random.default_rng(12)
    fm, _ = _random_map(rng)
    E, B = _demos(rng, 8), _demos(rng, 5)
    assert embed.nll_gradient(fm, E, B, 0.1, 2.0).tobytes() == embed.nll_gradient(fm, E, B, 0.1, 2.0).tobytes()


def test_train_zero_epochs_returns_initialization():
    demos = _demos(np.random.default_rng(13), 50)
    cfg = EmbedTrainConfig(max_epochs=0, seed=4, latent_dim=3, hidden=(5,))
    fm = embed.train_embedding(demos, cfg)
    ref = embed.init_feature_map(3, 3, (5,), np.random.default_rng(4))
    np.testing.assert_array_equal(fm.params, ref.params)


def test_train_is_bitwise_reproducible():
    demos = _demos(np.random.default_rng(14), 120)
    cfg = EmbedTrainConfig(max_epochs=3, seed=1, latent_dim=4, hidden=(8,))
    trace_a, trace_b = [], []
    a = embed.train_embedding(demos, cfg, callback=lambda e, l: trace_a.append(l))
    b = embed.train_embedding(demos, cfg, callback=lambda e, l: trace_b.append(l))
    assert a.params.tobytes() == b.params.tobytes() and trace_a == trace_b


def test_train_linear_demos_reach_ols_optimum():
    rng = np.random.default_rng(0)
    A = np.array([[0.7, -0.4]])

    def sample(n):
        X = rng.uniform(-1, 1, (n, 2))
        return DemoSet(X, X @ A.T + 0.1 * rng.normal(size=(n, 1)))

    train, test = sample(1000), sample(500)
    fm = embed.train_embedding(train, EmbedTrainConfig(max_epochs=20, seed=0))
    nll = embed.nll_loss(fm, train, test, 1e-4, 1e2)
    # optimal Gaussian NLL from the least-squares residual variance
    Xa = np.hstack([train.X, np.ones((1000, 1))])
    w = np.linalg.lstsq(Xa, train.T, rcond=None)[0]
    s2 = np.mean((np.hstack([test.X, np.ones((500, 1))]) @ w - test.T) ** 2)
    optimum = 0.5 * math.log(2 * math.pi * s2) + 0.5
    assert abs(nll - optimum) <= 0.1 * abs(optimum)


def test_train_config_validation():
    with pytest.raises(InvalidArgument):
        EmbedTrainConfig(subset_fraction=0.0)
    with pytest.raises(InvalidArgument):
        EmbedTrainConfig(alpha=-1.0)
    with pytest.raises(InvalidArgument):
        embed.train_embedding(_demos(np.random.default_rng(0), 1), EmbedTrainConfig())


def test_generate_demos_mountaincar():
    demos = embed.generate_demos("mountaincar", 2000, 0.1, seed=3)
    spec = get_spec("mountaincar")
    assert len(demos) == 2000 and demos.T.shape == (2000, 1)
    assert np.all(demos.T >= spec.action_low) and np.all(demos.T <= spec.action_high)
    again = embed.generate_demos("mountaincar", 2000, 0.1, seed=3)
    assert again.X.tobytes() == demos.X.tobytes() and again.T.tobytes() == demos.T.tobytes()


@pytest.mark.parametrize("env_id", ["mountaincar", "pendulum", "cartpole_swingup", "acrobot"])
def test_noise_free_demos_record_expert_actions(env_id):
    demos = embed.generate_demos(env_id, 300, 0.0, seed=0)
    expert = get_expert(env_id)
    spec = get_spec(env_id)
    for x, t in zip(demos.X, demos.T):
        np.testing.assert_array_equal(t, spec.clip_action(expert(x)))


def test_demoset_csv_round_trip(tmp_path):
    demos = _demos(np.random.default_rng(15), 20)
    demos.to_csv(tmp_path / "d.csv")
    back = DemoSet.from_csv(tmp_path / "d.csv")
    assert back.X.tobytes() == demos.X.tobytes() and back.T.tobytes() == demos.T.tobytes()
