"""Loss, optimizer, schedule, early stopping, and cross-validation."""

import io
import json
import math

import numpy as np
import pytest

from stackvet.datagen import SceneConfig, generate_dataset, make_sample
from stackvet.models import ModelSpec, build_model
from stackvet.tensor import Parameter, Tensor
from stackvet.training import (
    AdamState,
    TrainConfig,
    adam_step,
    bce_loss,
    bce_value,
    cross_validate,
    lr_at,
    train,
    _batch_bounds,
)


QUIET = SceneConfig(noise_sigma=0.3, n_field_stars=(0, 0))


def _fast_cfg(**kw):
    base = dict(epochs=2, batch_size=8, seed=0)
    base.update(kw)
    return TrainConfig(**base)


def test_lr_schedule_steps_down_every_five_epochs():
    cfg = TrainConfig()
    assert lr_at(0, cfg) == pytest.approx(1e-3)
    assert lr_at(4, cfg) == pytest.approx(1e-3)
    assert lr_at(5, cfg) == pytest.approx(1e-4)
    assert lr_at(9, cfg) == pytest.approx(1e-4)
    assert lr_at(10, cfg) == pytest.approx(1e-5)
    assert lr_at(19, cfg) == pytest.approx(1e-6)
    with pytest.raises(ValueError):
        lr_at(-1, cfg)


def test_bce_known_values():
    probs = Tensor(np.array([0.5], dtype=np.float64))
    loss = bce_loss(probs, np.array([1.0]))
    assert abs(loss.item() - math.log(2.0)) < 1e-12
    # Clamping caps the penalty for a confidently wrong score.
    probs = Tensor(np.array([1e-9], dtype=np.float64))
    loss = bce_loss(probs, np.array([1.0]))
    assert abs(loss.item() - (-math.log(1e-7))) < 1e-9
    assert bce_value(np.array([0.5, 0.5]), np.array([1, 0])) == pytest.approx(math.log(2.0))


def test_bce_matches_formula(rng):
    p = rng.uniform(0.01, 0.99, size=12)
    y = rng.integers(0, 2, size=12).astype(np.float64)
    got = bce_loss(Tensor(p, dtype=np.float64), y).item()
    want = -np.mean(y * np.log(p) + (1 - y) * np.log(1 - p))
    assert abs(got - want) < 1e-12
    assert abs(bce_value(p, y) - want) < 1e-12


def test_bce_shape_mismatch():
    with pytest.raises(ValueError, match="mismatch"):
        bce_loss(Tensor(np.array([0.5, 0.5])), np.array([1.0]))


def test_adam_step_matches_hand_computation():
    cfg = TrainConfig(weight_decay=0.0)
    p = Parameter(np.array([2.0], dtype=np.float64))
    p.grad = np.array([0.5])
    state = AdamState.for_params([p])
    adam_step([p], state, lr=0.1, cfg=cfg)
    # t=1: mhat = g, vhat = g^2, update = lr * g / (|g| + eps).
    expected = 2.0 - 0.1 * 0.5 / (math.sqrt(0.25) + 1e-8)
    assert p.data[0] == pytest.approx(expected, rel=1e-12)
    assert state.t == 1


def test_adam_weight_decay_pulls_toward_zero():
    cfg = TrainConfig(weight_decay=1e-4)
    p = Parameter(np.array([3.0], dtype=np.float64))
    p.grad = np.zeros(1)
    state = AdamState.for_params([p])
    adam_step([p], state, lr=0.1, cfg=cfg)
    # Gradient is exactly wd*theta > 0, so the step is -lr (up to epsilon).
    assert p.data[0] < 3.0
    assert p.data[0] == pytest.approx(3.0 - 0.1 * (3e-4 / (3e-4 + 1e-8)), rel=1e-9)


def test_adam_state_length_check():
    p = Parameter(np.zeros(2))
    state = AdamState.for_params([p])
    with pytest.raises(ValueError, match="optimizer state"):
        adam_step([p, p], state, lr=0.1, cfg=TrainConfig())


def test_batch_bounds_merges_trailing_singleton():
    assert _batch_bounds(10, 4) == [(0, 4), (4, 8), (8, 10)]
    assert _batch_bounds(9, 4) == [(0, 4), (4, 9)]
    assert _batch_bounds(4, 4) == [(0, 4)]
    assert _batch_bounds(1, 4) == [(0, 1)]
    assert _batch_bounds(32, 32) == [(0, 32)]
    assert _batch_bounds(33, 32) == [(0, 33)]


def test_config_validation_and_roundtrip():
    cfg = TrainConfig()
    assert TrainConfig.from_dict(cfg.to_dict()) == cfg
    with pytest.raises(ValueError, match="unknown train keys"):
        TrainConfig.from_dict({**cfg.to_dict(), "momentum": 0.9})
    with pytest.raises(ValueError, match="batch_size"):
        TrainConfig(batch_size=1)


def _toy_data(n=24, seed=7):
    return generate_dataset(n, 0.5, [32], QUIET, seed=seed)


def test_train_logs_one_record_per_epoch():
    data = _toy_data()
    spec = ModelSpec(model_id="cnn1", input_channels=1)
    model = build_model(spec, np.random.default_rng(0))
    log = io.StringIO()
    hist = train(model, data[:16], data[16:], _fast_cfg(), log_stream=log)
    lines = [json.loads(l) for l in log.getvalue().splitlines()]
    assert len(lines) == len(hist.epochs)
    assert [l["epoch"] for l in lines] == list(range(len(lines)))
    for l in lines:
        assert set(l) == {"epoch", "lr", "train_loss", "val_loss", "val_auc"}
        assert l["train_loss"] > 0.0
    assert 0 <= hist.best_epoch < len(lines)


def test_train_restores_best_epoch_weights():
    data = _toy_data()
    spec = ModelSpec(model_id="cnn1", input_channels=1)

    # Run A: stop exactly at the best epoch by truncating the budget.
    probe = build_model(spec, np.random.default_rng(1))
    hist = train(probe, data[:16], data[16:], _fast_cfg(epochs=4, seed=5))
    best = hist.best_epoch

    short = build_model(spec, np.random.default_rng(1))
    train(short, data[:16], data[16:], _fast_cfg(epochs=best + 1, seed=5))
    for a, b in zip(probe.named_tensors(), short.named_tensors()):
        assert np.array_equal(np.asarray(a[1].data), np.asarray(b[1].data)), a[0]


def test_train_early_stops_on_plateau():
    data = _toy_data()
    spec = ModelSpec(model_id="cnn1", input_channels=1)
    model = build_model(spec, np.random.default_rng(2))
    # Zero LR freezes weights, so validation loss never improves after epoch 0.
    cfg = TrainConfig(epochs=20, batch_size=8, learning_rate=0.0, patience=3, seed=0)
    hist = train(model, data[:16], data[16:], cfg)
    assert hist.stopped_early
    assert hist.best_epoch == 0
    assert len(hist.epochs) == 4  # best epoch + patience more


def test_train_is_deterministic():
    data = _toy_data()
    spec = ModelSpec(model_id="cnn1", input_channels=1)
    runs = []
    for _ in range(2):
        model = build_model(spec, np.random.default_rng(3))
        train(model, data[:16], data[16:], _fast_cfg(seed=9))
        runs.append([np.asarray(t.data).copy() for _, t in model.named_tensors()])
    for a, b in zip(*runs):
        assert np.array_equal(a, b)


def test_train_input_validation():
    data = _toy_data(n=4)
    spec = ModelSpec(model_id="cnn1", input_channels=1)
    model = build_model(spec, np.random.default_rng(0))
    with pytest.raises(ValueError, match="at least 2"):
        train(model, data[:1], data[1:], _fast_cfg())
    with pytest.raises(ValueError, match="validation"):
        train(model, data[:3], [], _fast_cfg())


def test_cross_validation_grouping_and_aggregate():
    data = _toy_data(n=20, seed=11)
    spec = ModelSpec(model_id="cnn1", input_channels=1)
    cfg = _fast_cfg(epochs=1, k_folds=4)
    result = cross_validate(data, spec, cfg)
    assert len(result.folds) == 4
    seen: list[str] = []
    for f in result.folds:
        assert f.fold == len([x for x in result.folds[: f.fold]])
        seen.extend(f.val_base_ids)
    # Every source group appears in exactly one validation fold.
    assert sorted(seen) == sorted({s.base_id for s in data})
    sizes = [len(f.val_base_ids) for f in result.folds]
    assert max(sizes) - min(sizes) <= 1
    assert set(result.aggregate) == {
        "accuracy",
        "recall",
        "precision",
        "f1",
        "inverse_precision",
        "auc",
    }
    for value in result.aggregate.values():
        assert value is None or set(value) == {"mean", "std"}
    assert len(result.models) == 4


def test_cross_validation_rejects_thin_data():
    data = _toy_data(n=3)
    spec = ModelSpec(model_id="cnn1", input_channels=1)
    with pytest.raises(ValueError, match="cannot fill"):
        cross_validate(data, spec, _fast_cfg(k_folds=5))
    with pytest.raises(ValueError, match="k must be"):
        cross_validate(data, spec, _fast_cfg(k_folds=5), k=1)


def test_fold_assignment_is_deterministic():
    data = _toy_data(n=12, seed=13)
    spec = ModelSpec(model_id="cnn1", input_channels=1)
    cfg = _fast_cfg(epochs=1, k_folds=3)
    a = cross_validate(data, spec, cfg)
    b = cross_validate(data, spec, cfg)
    for fa, fb in zip(a.folds, b.folds):
        assert fa.val_base_ids == fb.val_base_ids
        for ta, tb in zip(fa.model.named_tensors(), fb.model.named_tensors()):
            assert np.array_equal(np.asarray(ta[1].data), np.asarray(tb[1].data))
