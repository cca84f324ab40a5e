import csv
from dataclasses import replace

import numpy as np
import pytest

from duplexaec.res import DfsmnConfig, DfsmnModel, init_model
from duplexaec.res.dfsmn import res_forward_features, stack_masks
from duplexaec.train import (TOY_MODEL_CONFIG, TrainConfig, TrainingDivergedError, TrainingExample,
                             backward, compute_loss, forward, params64, stage_weights, toy_corpus,
                             toy_model, train)

TINY = DfsmnConfig(input_dim=12, hidden_dim=4, proj_dim=3, stages=2, layers_per_stage=2,
                   lookback_frames=2, bins=8)


def random_example(config, rng, frames=6):
    b = config.bins
    return TrainingExample(rng.standard_normal((frames, config.input_dim)),
                           [rng.uniform(0, 1, (frames, b)) for _ in range(config.stages - 1)],
                           rng.uniform(0, 1, (frames, b)), rng.uniform(0, 1, (frames, b)))


def const_example(config, value, frames=5):
    b = config.bins
    full = np.full((frames, b), value)
    return TrainingExample(np.zeros((frames, config.input_dim)),
                           [full] * (config.stages - 1), full, full)


def tiny_model(rng):
    m = init_model(TINY, rng, dtype=np.float64)
    # push the memory taps away from zero so their gradients are exercised
    params = {k: (v * 20 if k.endswith("memory") else v) for k, v in m.params.items()}
    return DfsmnModel(TINY, params, m.feat_mean, m.feat_std)


class TestLoss:
    def test_zero_model_half_targets(self):
        model = init_model(TINY, zero=True, dtype=np.float64)
        assert compute_loss(model, const_example(TINY, 0.5)) == 0.0

    def test_zero_model_unit_targets(self):
        model = init_model(TINY, zero=True, dtype=np.float64)
        assert compute_loss(model, const_example(TINY, 1.0)) == pytest.approx(0.25, abs=1e-15)

    def test_uniform_default_weights(self):
        assert np.allclose(stage_weights(TINY), [0.5, 0.5])
        with pytest.raises(ValueError):
            stage_weights(TINY, [1.0])

    def test_batched_forward_matches_streaming(self, rng):
        model = tiny_model(rng)
        feats = rng.standard_normal((7, TINY.input_dim))
        heads = forward(TINY, params64(model), feats)
        stream = stack_masks(res_forward_features_seq(model, feats))
        np.testing.assert_allclose(heads[0], stream.stage_masks[0], atol=1e-12)
        np.testing.assert_allclose(heads[1], np.concatenate([stream.m_x, stream.m_r], axis=1), atol=1e-12)


def res_forward_features_seq(model, feats):
    state = model.new_state()
    return [res_forward_features(model, state, f) for f in feats]


class TestGradient:
    def test_zero_at_optimum(self):
        model = init_model(TINY, zero=True, dtype=np.float64)
        grads, loss = backward(model, [const_example(TINY, 0.5)])
        assert loss == 0.0
        assert all(np.all(g == 0) for g in grads.values())

    def test_finite_differences(self, rng):
        model = tiny_model(rng)
        ex = random_example(TINY, rng)
        params = params64(model)
        grads, _ = backward(model, [ex], params=params)
        eps = 1e-6
        worst = 0.0
        for name, arr in params.items():
            for idx in np.ndindex(arr.shape):
                orig = arr[idx]
                arr[idx] = orig + eps
                up = compute_loss(model, ex, params=params)
                arr[idx] = orig - eps
                down = compute_loss(model, ex, params=params)
                arr[idx] = orig
                fd = (up - down) / (2 * eps)
                worst = max(worst, abs(fd - grads[name][idx]) / max(abs(fd), abs(grads[name][idx]), 1e-6))
        assert worst <= 1e-3

    def test_duplicate_doubles(self, rng):
        model = tiny_model(rng)
        ex = random_example(TINY, rng)
        g1, l1 = backward(model, [ex])
        g2, l2 = backward(model, [ex, ex])
        assert l2 == pytest.approx(2 * l1)
        for k in g1:
            np.testing.assert_allclose(g2[k], 2 * g1[k], rtol=1e-12, atol=1e-15)


class TestTrain:
    def test_zero_lr_identity(self, rng):
        model = tiny_model(rng)
        data = [random_example(TINY, rng) for _ in range(3)]
        res = train(model, data, TrainConfig(learning_rate=0.0, epochs=3))
        for k in model.params:
            assert np.array_equal(res.model.params[k], model.params[k])
        assert len(res.losses) == 4 and len(set(res.losses)) == 1

    def test_deterministic(self, rng):
        model = tiny_model(rng)
        data = [random_example(TINY, rng) for _ in range(4)]
        cfg = TrainConfig(learning_rate=0.1, epochs=3, batch_size=2, rng_seed=5)
        a, b = train(model, data, cfg), train(model, data, cfg)
        assert a.losses == b.losses
        assert all(np.array_equal(a.model.params[k], b.model.params[k]) for k in a.model.params)

    def test_loss_decreases(self, rng):
        model = tiny_model(rng)
        data = [random_example(TINY, rng) for _ in range(4)]
        res = train(model, data, TrainConfig(learning_rate=0.5, epochs=20, batch_size=4))
        assert res.losses[-1] < res.losses[0]

    def test_divergence(self, rng):
        model = tiny_model(rng)
        data = [random_example(TINY, rng)]
        with pytest.raises(TrainingDivergedError, match="epoch"):
            with np.errstate(all="ignore"):
                train(model, data, TrainConfig(learning_rate=1e300, epochs=2))

    def test_empty(self, rng):
        with pytest.raises(ValueError, match="empty"):
            train(tiny_model(rng), [], TrainConfig())

    def test_curve_csv(self, rng, tmp_path):
        model = tiny_model(rng)
        res = train(model, [random_example(TINY, rng)], TrainConfig(learning_rate=0.1, epochs=2))
        path = tmp_path / "curve.csv"
        res.write_curve(path)
        rows = list(csv.reader(path.open()))
        assert rows[0] == ["epoch", "loss"] and len(rows) == 4
        assert float(rows[-1][1]) == pytest.approx(res.losses[-1])

    @pytest.mark.parametrize("kw", [dict(learning_rate=-1), dict(momentum=1.0), dict(batch_size=0)])
    def test_config_validation(self, kw):
        with pytest.raises(ValueError):
            TrainConfig(**kw)


def test_toy_corpus_shapes():
    items = toy_corpus(2, seed=1)
    ex = items[0].example
    assert ex.features.shape[1] == 963 and len(ex.stage_targets) == 2
    assert ex.speech_mask.shape == ex.echo_mask.shape == ex.stage_targets[0].shape
    model = toy_model(TOY_MODEL_CONFIG, items)
    assert model.dtype == np.float64 and np.all(model.feat_std > 0)
