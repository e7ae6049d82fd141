import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from sklearn.linear_model import LogisticRegression

import oracles
from gnnfair.model import (
    MlpClassifier,
    TrainConfig,
    accuracy,
    empirical_margin_loss,
    expected_margin_loss_exact,
    forward,
    init_model,
    margin_loss_from_logits,
    predict,
    spectral_norm,
    train,
    weight_norms,
)
from gnnfair.synth import sample_labels


def random_model(rng, dims):
    return init_model(dims, rng)


def test_forward_examples():
    m = MlpClassifier((2 * np.eye(2),))
    assert forward(m, [[1.0, 0.0]]).tolist() == [[2.0, 0.0]]
    rng = np.random.default_rng(0)
    m2 = random_model(rng, [4, 8, 3])
    assert np.array_equal(forward(m2, np.zeros((2, 4))), np.zeros((2, 3)))
    Z = rng.standard_normal((10, 4))
    assert np.abs(forward(m2, Z) - oracles.dense_forward(m2.layers, Z)).max() <= 1e-10
    with pytest.raises(ValueError):
        forward(m2, np.zeros((1, 5)))


def test_predict_ties_and_shift():
    m = MlpClassifier((np.eye(3),))
    assert predict(m, [[2.0, 0.5, 0.1]]).tolist() == [0]
    assert predict(MlpClassifier((np.eye(2),)), [[1.0, 1.0]]).tolist() == [0]
    rng = np.random.default_rng(1)
    L = rng.standard_normal((20, 4))
    assert np.array_equal(np.argmax(L, 1), np.argmax(L + 7.5, 1))


def test_margin_loss_examples():
    logits = np.array([[2.0, 0.5, 0.1]])
    assert margin_loss_from_logits(logits, [0], 1.0) == 0.0
    assert margin_loss_from_logits(logits, [0], 2.0) == 1.0
    m = MlpClassifier((np.eye(2),))
    assert empirical_margin_loss(m, [[0.0, 1.0], [0.0, 3.0]], [0, 0], 0.0) == 1.0
    with pytest.raises(ValueError):
        margin_loss_from_logits(np.zeros((0, 2)), [], 0.0)


@settings(max_examples=100, deadline=None)
@given(st.integers(1, 30), st.integers(2, 5), st.floats(0, 3), st.floats(0, 3), st.integers(0, 2**31))
def test_margin_loss_matches_loop_and_is_monotone(n, k, g1, g2, seed):
    rng = np.random.default_rng(seed)
    logits = rng.standard_normal((n, k))
    y = rng.integers(0, k, n)
    g1, g2 = min(g1, g2), max(g1, g2)
    l1 = margin_loss_from_logits(logits, y, g1)
    assert l1 == pytest.approx(oracles.margin_loss_loop(logits, y, g1), abs=1e-15)
    assert l1 <= margin_loss_from_logits(logits, y, g2)
    # same error count: compare as mistakes / n, the rational 1 - accuracy
    m = MlpClassifier((np.eye(k),))
    mistakes = int((predict(m, logits) != y).sum())
    assert margin_loss_from_logits(logits, y, 0.0) == mistakes / n
    assert margin_loss_from_logits(logits, y, 0.0) == pytest.approx(1.0 - accuracy(m, logits, y), abs=1e-15)


def test_expected_loss_one_hot_and_saturation():
    rng = np.random.default_rng(0)
    m = random_model(rng, [3, 4, 3])
    Z = rng.standard_normal((15, 3))
    y = rng.integers(0, 3, 15)
    assert expected_margin_loss_exact(m, Z, np.eye(3)[y], 0.5) == empirical_margin_loss(m, Z, y, 0.5)
    eta = rng.dirichlet(np.ones(3), 15)
    assert expected_margin_loss_exact(m, Z, eta, 1e9) == pytest.approx(1.0)
    with pytest.raises(ValueError):
        expected_margin_loss_exact(m, Z, eta * 2, 0.0)


def test_expected_loss_matches_label_sampling():
    rng = np.random.default_rng(3)
    m = random_model(rng, [3, 5, 3])
    Z = rng.standard_normal((8, 3))
    eta = np.full((8, 3), 1 / 3)
    exact = expected_margin_loss_exact(m, Z, eta, 0.2)
    draws = np.array([empirical_margin_loss(m, Z, sample_labels(eta, s), 0.2) for s in range(20_000)])
    se = draws.std(ddof=1) / np.sqrt(draws.size)
    assert abs(draws.mean() - exact) <= 3 * se


def test_weight_norm_examples():
    n = weight_norms(MlpClassifier((np.diag([3.0, 1.0]),)))
    assert n.spectral[0] == pytest.approx(3.0, abs=1e-9)
    assert n.frobenius[0] == pytest.approx(np.sqrt(10.0))
    assert spectral_norm(np.eye(4)) == pytest.approx(1.0, abs=1e-9)
    rng = np.random.default_rng(0)
    for _ in range(20):
        W = rng.standard_normal((5, 7))
        assert abs(spectral_norm(W) - oracles.jacobi_svd_max(W)) <= 1e-7


def test_training_separable_matches_logistic_regression():
    rng = np.random.default_rng(5)
    X = np.concatenate([rng.normal(2, 0.5, (60, 2)), rng.normal(-2, 0.5, (60, 2))])
    y = np.repeat([0, 1], 60)
    tr = np.arange(0, 120, 2)
    val = np.arange(1, 120, 2)
    m = train(X, y, tr, val, TrainConfig(depth=1, max_epochs=300), 2)
    ref = LogisticRegression().fit(X[tr], y[tr])
    assert (ref.predict(X[tr]) == y[tr]).all()
    assert empirical_margin_loss(m, X[tr], y[tr], 0.0) == 0.0
    assert (predict(m, X) == ref.predict(X)).mean() >= 0.98


def test_training_deterministic_and_checks():
    rng = np.random.default_rng(0)
    X = rng.standard_normal((50, 4))
    y = rng.integers(0, 3, 50)
    cfg = TrainConfig(max_epochs=50, seed=7)
    a = train(X, y, np.arange(20), np.arange(20, 40), cfg, 3)
    b = train(X, y, np.arange(20), np.arange(20, 40), cfg, 3)
    assert a == b
    with pytest.raises(ValueError, match="overlap"):
        train(X, y, np.arange(20), np.arange(10, 30), cfg, 3)


def test_checkpoint_roundtrip(tmp_path):
    m = random_model(np.random.default_rng(0), [3, 4, 2])
    m.save(tmp_path / "m.json")
    assert MlpClassifier.load(tmp_path / "m.json") == m


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**31), st.integers(1, 3))
def test_lipschitz_forward_bound(seed, depth):
    rng = np.random.default_rng(seed)
    dims = [3] + [int(rng.integers(1, 6)) for _ in range(depth - 1)] + [int(rng.integers(2, 4))]
    m = MlpClassifier(tuple(rng.standard_normal((a, b)) * rng.uniform(0.1, 3) for a, b in zip(dims[:-1], dims[1:])))
    z1, z2 = rng.standard_normal((2, 3)) * rng.uniform(0.01, 10)
    lhs = np.abs(forward(m, [z1]) - forward(m, [z2])).max()
    rhs = np.linalg.norm(z1 - z2) * np.prod([np.linalg.norm(w, 2) for w in m.layers])
    assert lhs <= rhs + 1e-9
