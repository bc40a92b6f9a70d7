"""Tests for the miniature class-dependent trainer."""

import numpy as np
import pytest
from PIL import Image

from viewsynth.geomloss import LossConfig, softmax
from viewsynth.toytrainer import (
    ToyModel,
    TrainConfig,
    forward,
    image_features,
    load_model,
    model_loss_and_grads,
    predict,
    save_model,
    train,
    train_on_arrays,
)
from viewsynth.synthpipe import DatasetManifest
from viewsynth.viewgeom import BinLayout, discretize

SMALL_LAYOUT = BinLayout(8, 4, 4)


def tiny_model(seed=0, categories=("chair", "car"), input_size=6, hidden=5):
    return ToyModel.create(
        SMALL_LAYOUT, list(categories), input_size=input_size, hidden=hidden, seed=seed
    )


def random_batch(rng, model, n=3):
    features = rng.uniform(0.0, 1.0, size=(n, model.input_dim))
    class_ids = rng.integers(0, model.n_classes, size=n)
    gt_bins = [
        (
            int(rng.integers(SMALL_LAYOUT.azimuth_bins)),
            int(rng.integers(SMALL_LAYOUT.elevation_bins)),
            int(rng.integers(SMALL_LAYOUT.inplane_bins)),
        )
        for _ in range(n)
    ]
    return features, class_ids, gt_bins


def flatten_params(model):
    return np.concatenate(
        [
            model.trunk_weights.ravel(),
            model.trunk_bias.ravel(),
            model.head_weights.ravel(),
            model.head_bias.ravel(),
        ]
    )


def set_params(model, flat):
    sizes = [
        model.trunk_weights.size,
        model.trunk_bias.size,
        model.head_weights.size,
        model.head_bias.size,
    ]
    pieces = np.split(flat, np.cumsum(sizes)[:-1])
    model.trunk_weights = pieces[0].reshape(model.trunk_weights.shape)
    model.trunk_bias = pieces[1].reshape(model.trunk_bias.shape)
    model.head_weights = pieces[2].reshape(model.head_weights.shape)
    model.head_bias = pieces[3].reshape(model.head_bias.shape)


class TestForward:
    def test_zero_model_uniform(self):
        model = tiny_model()
        model.trunk_weights[:] = 0.0
        groups = forward(model, np.zeros(model.input_dim), 0)
        for logits in groups:
            np.testing.assert_array_equal(logits, 0.0)
            np.testing.assert_allclose(softmax(logits), 1.0 / logits.size)

    def test_output_lengths_match_layout(self):
        model = tiny_model()
        groups = forward(model, np.ones(model.input_dim), 1)
        assert tuple(len(g) for g in groups) == (8, 4, 4)

    def test_heads_independent(self):
        model = tiny_model()
        rng = np.random.default_rng(1)
        model.head_weights[:] = rng.normal(size=model.head_weights.shape)
        x = rng.uniform(size=model.input_dim)
        a = np.concatenate(forward(model, x, 0))
        b = np.concatenate(forward(model, x, 1))
        assert not np.allclose(a, b)

    def test_unknown_class_rejected(self):
        model = tiny_model()
        with pytest.raises(ValueError):
            forward(model, np.zeros(model.input_dim), 2)

    def test_feature_length_checked(self):
        model = tiny_model()
        with pytest.raises(ValueError):
            forward(model, np.zeros(7), 0)


class TestGradients:
    def test_full_model_finite_differences(self):
        rng = np.random.default_rng(3)
        model = tiny_model(seed=4)
        model.head_weights[:] = rng.normal(0.0, 0.1, size=model.head_weights.shape)
        model.trunk_bias[:] = rng.normal(0.0, 0.1, size=model.trunk_bias.shape)
        features, class_ids, gt_bins = random_batch(rng, model, n=3)
        config = LossConfig(sigma=0.8, layout=SMALL_LAYOUT)
        _, grads = model_loss_and_grads(model, features, class_ids, gt_bins, config)
        analytic = np.concatenate(
            [
                grads["trunk_weights"].ravel(),
                grads["trunk_bias"].ravel(),
                grads["head_weights"].ravel(),
                grads["head_bias"].ravel(),
            ]
        )
        base = flatten_params(model)
        step = 1e-4
        numeric = np.zeros_like(base)
        probe = model.copy()
        for k in range(base.size):
            for sign in (1.0, -1.0):
                perturbed = base.copy()
                perturbed[k] += sign * step
                set_params(probe, perturbed)
                loss, _ = model_loss_and_grads(
                    probe, features, class_ids, gt_bins, config
                )
                numeric[k] += sign * loss
        numeric /= 2.0 * step
        denom = np.maximum(1.0, np.abs(analytic))
        assert np.max(np.abs(analytic - numeric) / denom) < 1e-4

    def test_class_isolation(self):
        rng = np.random.default_rng(5)
        model = tiny_model(seed=6)
        features, _, gt_bins = random_batch(rng, model, n=4)
        class_ids = np.zeros(4, dtype=int)  # only class 0
        config = LossConfig(layout=SMALL_LAYOUT)
        _, grads = model_loss_and_grads(model, features, class_ids, gt_bins, config)
        np.testing.assert_array_equal(grads["head_weights"][1], 0.0)
        np.testing.assert_array_equal(grads["head_bias"][1], 0.0)
        assert np.any(grads["head_weights"][0] != 0.0)


class TestTraining:
    def test_overfits_small_dataset(self):
        rng = np.random.default_rng(7)
        model = tiny_model(seed=8, categories=("chair",), input_size=6, hidden=16)
        features, _, gt_bins = random_batch(rng, model, n=10)
        class_ids = np.zeros(10, dtype=int)
        config = TrainConfig(
            learning_rate=0.5, epochs=300, batch_size=10, seed=1,
            sigma=1e-6, layout=SMALL_LAYOUT,
        )
        history = train_on_arrays(model, features, class_ids, gt_bins, config)
        assert history[-1] < 0.05 * history[0]

    def test_loss_decreases(self):
        rng = np.random.default_rng(9)
        model = tiny_model(seed=10)
        features, class_ids, gt_bins = random_batch(rng, model, n=20)
        config = TrainConfig(
            learning_rate=0.1, epochs=20, batch_size=8, seed=2, layout=SMALL_LAYOUT
        )
        history = train_on_arrays(model, features, class_ids, gt_bins, config)
        assert history[-1] < history[0]

    def test_deterministic_given_seed(self):
        rng = np.random.default_rng(11)
        features, class_ids, gt_bins = random_batch(rng, tiny_model(), n=12)
        config = TrainConfig(epochs=5, batch_size=4, seed=3, layout=SMALL_LAYOUT)
        model_a = tiny_model(seed=12)
        model_b = tiny_model(seed=12)
        train_on_arrays(model_a, features, class_ids, gt_bins, config)
        train_on_arrays(model_b, features, class_ids, gt_bins, config)
        assert np.array_equal(model_a.trunk_weights, model_b.trunk_weights)
        assert np.array_equal(model_a.head_weights, model_b.head_weights)

    def test_class_b_head_untouched_by_class_a_batch(self):
        rng = np.random.default_rng(13)
        model = tiny_model(seed=14)
        before = model.head_weights[1].copy()
        before_bias = model.head_bias[1].copy()
        features, _, gt_bins = random_batch(rng, model, n=8)
        class_ids = np.zeros(8, dtype=int)
        config = TrainConfig(epochs=4, batch_size=4, seed=4, layout=SMALL_LAYOUT)
        train_on_arrays(model, features, class_ids, gt_bins, config)
        assert model.head_weights[1].tobytes() == before.tobytes()
        assert model.head_bias[1].tobytes() == before_bias.tobytes()

    def test_sigma_limit_matches_cross_entropy_trajectory(self):
        rng = np.random.default_rng(15)
        model_geo = tiny_model(seed=16, categories=("chair",))
        model_ce = model_geo.copy()
        features, _, gt_bins = random_batch(rng, model_geo, n=12)
        class_ids = np.zeros(12, dtype=int)
        config = TrainConfig(
            learning_rate=0.2, epochs=8, batch_size=4, seed=5,
            sigma=1e-6, layout=SMALL_LAYOUT,
        )
        train_on_arrays(model_geo, features, class_ids, gt_bins, config)
        ce_history = self.reference_cross_entropy_sgd(
            model_ce, features, class_ids, gt_bins, config
        )
        assert np.max(np.abs(model_geo.trunk_weights - model_ce.trunk_weights)) < 1e-6
        assert np.max(np.abs(model_geo.head_weights - model_ce.head_weights)) < 1e-6

    @staticmethod
    def reference_cross_entropy_sgd(model, features, class_ids, gt_bins, config):
        """Plain softmax cross-entropy SGD, written independently."""
        slices = (
            slice(0, 8),
            slice(8, 12),
            slice(12, 16),
        )
        rng = np.random.default_rng(config.seed)
        n = features.shape[0]
        history = []
        for _ in range(config.epochs):
            order = rng.permutation(n)
            epoch_loss = 0.0
            for start in range(0, n, config.batch_size):
                batch = order[start : start + config.batch_size]
                g_tw = np.zeros_like(model.trunk_weights)
                g_tb = np.zeros_like(model.trunk_bias)
                g_hw = np.zeros_like(model.head_weights)
                g_hb = np.zeros_like(model.head_bias)
                batch_loss = 0.0
                for i in batch:
                    x = features[i]
                    c = class_ids[i]
                    pre = model.trunk_weights @ x + model.trunk_bias
                    hidden = np.maximum(0.0, pre)
                    logits = model.head_weights[c] @ hidden + model.head_bias[c]
                    grad_logits = np.zeros_like(logits)
                    for s, gt_bin in zip(slices, gt_bins[i]):
                        probs = softmax(logits[s])
                        batch_loss += -np.log(probs[gt_bin])
                        onehot = np.zeros_like(probs)
                        onehot[gt_bin] = 1.0
                        grad_logits[s] = probs - onehot
                    g_hw[c] += np.outer(grad_logits, hidden)
                    g_hb[c] += grad_logits
                    grad_pre = (model.head_weights[c].T @ grad_logits) * (pre > 0.0)
                    g_tw += np.outer(grad_pre, x)
                    g_tb += grad_pre
                k = batch.size
                model.trunk_weights -= config.learning_rate * g_tw / k
                model.trunk_bias -= config.learning_rate * g_tb / k
                model.head_weights -= config.learning_rate * g_hw / k
                model.head_bias -= config.learning_rate * g_hb / k
                epoch_loss += batch_loss
            history.append(epoch_loss / n)
        return history

    def test_source_weights_scale_gradient(self):
        rng = np.random.default_rng(17)
        model_a = tiny_model(seed=18, categories=("chair",))
        model_b = model_a.copy()
        features, _, gt_bins = random_batch(rng, model_a, n=6)
        class_ids = np.zeros(6, dtype=int)
        config = TrainConfig(epochs=1, batch_size=6, seed=6, layout=SMALL_LAYOUT)
        train_on_arrays(model_a, features, class_ids, gt_bins, config,
                        sample_weights=np.full(6, 2.0))
        double_lr = TrainConfig(
            learning_rate=config.learning_rate * 2.0, epochs=1, batch_size=6,
            seed=6, layout=SMALL_LAYOUT,
        )
        train_on_arrays(model_b, features, class_ids, gt_bins, double_lr)
        np.testing.assert_allclose(
            model_a.trunk_weights, model_b.trunk_weights, atol=1e-12
        )


class TestPredict:
    def test_zero_model_uniform_argmax_bin_zero(self):
        model = tiny_model()
        model.trunk_weights[:] = 0.0
        viewpoint, probs = predict(model, np.zeros(model.input_dim), 0)
        assert viewpoint.azimuth_deg == pytest.approx(22.5)  # center of bin 0 of 8
        for p in probs:
            np.testing.assert_allclose(p, 1.0 / p.size)
            assert abs(p.sum() - 1.0) < 1e-9

    def test_overfit_single_sample_prediction(self):
        model = tiny_model(seed=20, categories=("chair",), hidden=16)
        rng = np.random.default_rng(21)
        features = rng.uniform(size=(1, model.input_dim))
        gt_bins = [(5, 2, 1)]
        config = TrainConfig(
            learning_rate=0.5, epochs=200, batch_size=1, seed=7,
            sigma=1e-6, layout=SMALL_LAYOUT,
        )
        train_on_arrays(model, features, [0], gt_bins, config)
        viewpoint, _ = predict(model, features[0], 0)
        assert discretize(viewpoint, SMALL_LAYOUT) == gt_bins[0]


class TestSerializationAndImages:
    def test_model_roundtrip(self, tmp_path):
        model = tiny_model(seed=22)
        model.head_bias[:] = np.random.default_rng(23).normal(
            size=model.head_bias.shape
        )
        path = tmp_path / "model.json"
        save_model(model, path)
        loaded = load_model(path)
        assert loaded.categories == model.categories
        assert loaded.layout == model.layout
        np.testing.assert_allclose(loaded.trunk_weights, model.trunk_weights)
        np.testing.assert_allclose(loaded.head_bias, model.head_bias)

    def test_image_features_range_and_shape(self, tmp_path):
        rng = np.random.default_rng(25)
        pixels = rng.integers(0, 256, size=(40, 40, 3), dtype=np.uint8)
        path = tmp_path / "img.png"
        Image.fromarray(pixels).save(path)
        feats = image_features(path, 8)
        assert feats.shape == (64,)
        assert feats.min() >= 0.0 and feats.max() <= 1.0

    def test_image_decode_failure_names_file(self, tmp_path):
        path = tmp_path / "broken.png"
        path.write_bytes(b"junk")
        with pytest.raises(ValueError, match="broken.png"):
            image_features(path, 8)

    def test_train_on_manifest(self, tmp_path):
        rng = np.random.default_rng(27)
        records = []
        for k in range(6):
            pixels = rng.integers(0, 256, size=(20, 20), dtype=np.uint8)
            name = f"s{k}.png"
            Image.fromarray(pixels, mode="L").save(tmp_path / name)
            records.append(
                {
                    "image": name,
                    "category": "chair",
                    "azimuth_bin": int(rng.integers(8)),
                    "elevation_bin": int(rng.integers(4)),
                    "inplane_bin": int(rng.integers(4)),
                    "source": "synthetic",
                }
            )
        manifest = DatasetManifest(master_seed=0, layout=SMALL_LAYOUT, records=records)
        model = ToyModel.create(SMALL_LAYOUT, ["chair"], input_size=6, hidden=8, seed=28)
        config = TrainConfig(epochs=10, batch_size=3, seed=8, layout=SMALL_LAYOUT)
        history = train(model, manifest, config, tmp_path)
        assert len(history) == 10
        assert history[-1] < history[0]
