import numpy as np
import pytest
from sklearn.exceptions import NotFittedError

from snapseg.encoder import (PointSetEncoder, TrainConfig, TrainingDiverged,
                             gradient_check, load_encoder, save_encoder)
from snapseg.pairs import ContrastPair


def tiny_encoder(head_mode="pair", n_outputs=2, seed=0, **cfg):
    return PointSetEncoder(
        hidden_sizes=(8, 16), feature_dim=16, head_mode=head_mode,
        n_outputs=n_outputs, seed=seed,
        train_config=TrainConfig(epochs=cfg.pop("epochs", 5), batch_size=8,
                                 **cfg),
    ).initialize()


def pair_batch(rng, n=12, pts=10):
    a = rng.standard_normal((n, pts, 3))
    b = rng.standard_normal((n, pts, 3))
    y = rng.integers(0, 2, n)
    return a, b, y


def test_initial_pair_loss_is_log2(rng):
    enc = tiny_encoder()
    a, b, _ = pair_batch(rng)
    y = np.array([0, 1] * 6)
    loss = enc.batch_loss((a, b, y))
    assert loss == pytest.approx(np.log(2.0), abs=1e-15)


def test_head_starts_at_zero():
    enc = tiny_encoder()
    assert not enc.head_W_.any()
    assert not enc.head_b_.any()


def test_gradient_check_pair_mode(rng):
    enc = tiny_encoder(seed=3)
    a, b, y = pair_batch(rng, n=6, pts=8)
    # perturb the head away from zero so its gradient is generic
    enc.head_W_ += 0.01 * np.arange(enc.head_W_.size).reshape(enc.head_W_.shape)
    max_err, _ = gradient_check(enc, (a, b, y))
    assert max_err < 1e-5


def test_gradient_check_direct_mode(rng):
    enc = tiny_encoder(head_mode="direct", n_outputs=4, seed=4)
    x = rng.standard_normal((8, 10, 3))
    y = rng.integers(0, 4, 8)
    enc.head_W_ += 0.01
    max_err, _ = gradient_check(enc, (x, y))
    assert max_err < 1e-5


def test_gradient_check_epsilon_range(rng):
    enc = tiny_encoder()
    a, b, y = pair_batch(rng, 4, 6)
    with pytest.raises(ValueError):
        gradient_check(enc, (a, b, y), epsilon=1e-8)
    with pytest.raises(ValueError):
        gradient_check(enc, (a, b, y), epsilon=1e-2)


def test_feature_permutation_invariance(rng):
    enc = tiny_encoder()
    pts = rng.standard_normal((30, 3))
    f1 = enc.forward_features(pts)
    f2 = enc.forward_features(pts[rng.permutation(30)])
    assert np.array_equal(f1, f2)


def test_transform_matches_forward(rng):
    enc = tiny_encoder()
    x = rng.standard_normal((5, 12, 3))
    batch = enc.transform(x)
    for i in range(5):
        assert np.allclose(batch[i], enc.forward_features(x[i]))


def test_fit_deterministic(rng):
    a, b, y = pair_batch(rng, 16, 8)
    e1 = tiny_encoder(seed=7).fit((a, b, y))
    e2 = tiny_encoder(seed=7).fit((a, b, y))
    assert np.array_equal(e1.get_flat_params(), e2.get_flat_params())


def test_zero_learning_rate_freezes_params(rng):
    a, b, y = pair_batch(rng, 8, 6)
    enc = PointSetEncoder(
        hidden_sizes=(8,), feature_dim=8, seed=1,
        train_config=TrainConfig(learning_rate=0.0, epochs=2, batch_size=4),
    ).initialize()
    before = enc.get_flat_params()
    enc.fit((a, b, y))
    assert np.array_equal(before, enc.get_flat_params())


def test_training_reduces_separable_pair_loss(rng):
    # same-origin pairs share a tight blob; different-origin pairs do not
    def make(n):
        out = []
        for i in range(n):
            base = rng.standard_normal((12, 3)) * 0.1 + i
            out.append(ContrastPair(base, base + 0.01, 1, "part", i, i))
            other = rng.standard_normal((12, 3)) * 0.1 + i + 50
            out.append(ContrastPair(base, other, 0, "part", i, i + 1))
        return out
    pairs = make(16)
    enc = PointSetEncoder(
        hidden_sizes=(8, 16), feature_dim=16, seed=2,
        train_config=TrainConfig(epochs=30, batch_size=8),
    )
    enc.fit(pairs)
    assert enc.history_[-1]["loss"] < enc.history_[0]["loss"]
    assert len(enc.history_) == 30


@pytest.mark.filterwarnings("ignore:invalid value")
def test_divergence_reports_location(rng):
    a, b, y = pair_batch(rng, 8, 6)
    enc = tiny_encoder()
    enc.head_W_[:] = np.inf
    with pytest.raises(TrainingDiverged, match="epoch 0 batch 0"):
        enc.fit((a, b, y))


def test_direct_fit_and_predict(rng):
    # two classes of sets distinguished by their z spread
    x = np.concatenate([
        rng.standard_normal((20, 16, 3)) * [1, 1, 0.05],
        rng.standard_normal((20, 16, 3)) * [0.05, 1, 1],
    ])
    y = np.array([0] * 20 + [1] * 20)
    enc = PointSetEncoder(
        hidden_sizes=(8, 16), feature_dim=16, head_mode="direct", n_outputs=2,
        seed=5, train_config=TrainConfig(epochs=40, batch_size=8),
    )
    enc.fit(x, y)
    assert (enc.predict(x) == y).mean() > 0.9


def test_from_trunk_copies_weights(rng):
    src = tiny_encoder(seed=8)
    clone = PointSetEncoder.from_trunk(src, n_outputs=7)
    for (w1, b1), (w2, b2) in zip(src.weights_, clone.weights_):
        assert np.array_equal(w1, w2)
    assert clone.head_W_.shape == (7, 16)
    assert not clone.head_W_.any()
    # mutating the copy must not touch the source
    clone.weights_[0][0][0, 0] += 1
    assert src.weights_[0][0][0, 0] != clone.weights_[0][0][0, 0]


def test_trunk_copy_shape_mismatch():
    a = tiny_encoder()
    b = PointSetEncoder(hidden_sizes=(4,), feature_dim=8).initialize()
    with pytest.raises(ValueError, match="trunk shape"):
        b.copy_trunk_from(a)


def test_save_load_round_trip(tmp_path, rng):
    enc = tiny_encoder(seed=9)
    a, b, y = pair_batch(rng, 8, 6)
    enc.fit((a, b, y))
    path = tmp_path / "enc.model"
    save_encoder(enc, path)
    back = load_encoder(path)
    assert np.array_equal(back.get_flat_params(), enc.get_flat_params())
    pts = rng.standard_normal((10, 3))
    assert np.array_equal(back.forward_features(pts), enc.forward_features(pts))


def test_unfitted_errors(rng):
    enc = PointSetEncoder()
    with pytest.raises(NotFittedError):
        enc.forward_features(rng.standard_normal((5, 3)))


def test_rejects_non_finite_input():
    enc = tiny_encoder()
    bad = np.zeros((4, 3))
    bad[1, 1] = np.nan
    with pytest.raises(ValueError):
        enc.forward_features(bad)


def test_get_params_sklearn_contract():
    enc = PointSetEncoder(feature_dim=32, seed=3)
    params = enc.get_params()
    assert params["feature_dim"] == 32
    assert params["seed"] == 3
    enc.set_params(seed=4)
    assert enc.seed == 4
