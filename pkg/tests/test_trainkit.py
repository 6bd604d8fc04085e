import math

import numpy as np
import pytest

from rulebench.datagen import DatasetSpec, Setting, build_splits
from rulebench.tasks import TaskClass, TaskKind
from rulebench.tinyformer import ModelConfig, Tokenizer, TransformerModel
from rulebench.trainkit import (
    Adam,
    Checkpoint,
    Metrics,
    TrainConfig,
    TrainingError,
    adam_step,
    clip_by_global_norm,
    dataset_loss_and_hits,
    evaluate,
    metrics_from_flags,
    predict,
    read_history,
    run_training,
    write_history,
)

TINY = ModelConfig(d_model=16, n_heads=2, d_ff=32, dropout_rate=0.1)


def scalar_adam(x, grads, lr, b1=0.9, b2=0.999, eps=1e-8):
    m = v = 0.0
    trace = []
    for t, g in enumerate(grads, 1):
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        mhat = m / (1 - b1 ** t)
        vhat = v / (1 - b2 ** t)
        x = x - lr * mhat / (math.sqrt(vhat) + eps)
        trace.append(x)
    return trace


def test_adam_matches_scalar_oracle():
    grads = [0.3, -1.2, 0.05, 2.0, -0.7]
    expected = scalar_adam(1.5, grads, lr=0.01)
    p = {"x": np.array([1.5])}
    opt = Adam(lr=0.01)
    for g, want in zip(grads, expected):
        opt.step(p, {"x": np.array([g])})
        assert abs(p["x"][0] - want) < 1e-12


def test_adam_zero_gradient_and_first_step():
    p = {"w": np.array([1.0, -2.0, 3.0])}
    opt = Adam(lr=0.1)
    opt.step(p, {"w": np.zeros(3)})
    assert np.array_equal(p["w"], [1.0, -2.0, 3.0])

    p = {"w": np.array([1.0, -2.0, 3.0])}
    g = np.array([0.5, -4.0, 1e-3])
    Adam(lr=0.1).step(p, {"w": g})
    assert np.allclose(p["w"], np.array([1.0, -2.0, 3.0]) - 0.1 * np.sign(g), atol=1e-5)


def test_adam_rejects_non_finite():
    with pytest.raises(TrainingError, match="non-finite gradient in 'w'"):
        Adam().step({"w": np.zeros(2)}, {"w": np.array([np.nan, 0.0])})


def test_adam_step_uses_schedule():
    model = TransformerModel(TINY, seed=0)
    cfg = TrainConfig(learning_rate=1e-2, warmup_steps=10)
    before = model.state_dict()
    grads = {k: np.ones_like(v) for k, v in before.items()}
    opt = adam_step(model, grads, cfg, step=1)
    moved = model["embed"].data - before["embed"]
    assert np.allclose(moved, -1e-3, atol=1e-9)
    with pytest.raises(TrainingError):
        adam_step(model, grads, cfg, step=5, optimizer=opt)


def test_clip_by_global_norm():
    g = {"a": np.array([3.0]), "b": np.array([4.0])}
    assert clip_by_global_norm(g, 1.0) == pytest.approx(5.0)
    assert np.allclose([g["a"][0], g["b"][0]], [0.6, 0.8])


@pytest.fixture(scope="module")
def small_splits():
    return build_splits(DatasetSpec(TaskKind.PALINDROME_DETECTION, pool_size=200, test_size=100, seed=1))


def test_run_training_selection_and_determinism(small_splits, tmp_path):
    cfg = TrainConfig(epochs=3, learning_rate=3e-3, warmup_steps=5, seed=2)
    results = []
    for _ in range(2):
        model = TransformerModel(TINY, seed=3)
        best, hist = run_training(model, small_splits["train"], small_splits["eval"], cfg)
        results.append((best, hist))
    (best, hist), (best2, hist2) = results
    assert len(hist) == 3
    assert best.eval_loss == min(r.eval_loss for r in hist)
    assert hist[best.epoch - 1].eval_loss == best.eval_loss
    assert [r.to_row() for r in hist] == [r.to_row() for r in hist2]
    for k in best.state:
        assert np.array_equal(best.state[k], best2.state[k])
    assert best.step == best.epoch * math.ceil(160 / 16)

    write_history(hist, tmp_path / "history.tsv")
    assert [r.to_row() for r in read_history(tmp_path / "history.tsv")] == [r.to_row() for r in hist]
    best.save(tmp_path / "best.npz")
    back = Checkpoint.load(tmp_path / "best.npz")
    assert back.epoch == best.epoch and back.eval_loss == best.eval_loss
    assert all(np.array_equal(back.state[k], best.state[k]) for k in best.state)


def test_teacher_forced_hits_equal_greedy(small_splits):
    model = TransformerModel(TINY, seed=4)
    samples = small_splits["eval"].samples
    _, hits = dataset_loss_and_hits(model, samples, Tokenizer())
    preds = predict(model, [s.input_tokens for s in samples])
    assert list(hits) == [p == s.target_tokens for p, s in zip(preds, samples)]


def test_evaluate_metrics(small_splits):
    model = TransformerModel(TINY, seed=5)
    m = evaluate(model, small_splits["test"])
    assert set(m.accuracy) == {"C1", "C2"}
    assert m.counts == {"C1": 50, "C2": 50}
    assert all(0.0 <= a <= 1.0 for a in m.accuracy.values())
    assert math.isfinite(m.loss)


def test_metrics_degenerate_predictors(small_splits):
    test = small_splits["test"].samples
    perfect = metrics_from_flags(test, [True] * len(test))
    assert perfect.accuracy == {"C1": 1.0, "C2": 1.0}
    all_one = metrics_from_flags(test, [s.target_tokens == ("1",) for s in test])
    assert all_one.accuracy == {"C1": 1.0, "C2": 0.0}
    assert all_one.overall == 0.5
    assert Metrics.from_dict(all_one.to_dict()).to_dict() == all_one.to_dict()


def test_training_rejects_divergence(small_splits):
    model = TransformerModel(TINY, seed=6)
    model["embed"].data[:] = np.nan
    with pytest.raises(TrainingError):
        run_training(model, small_splits["train"], small_splits["eval"], TrainConfig(epochs=1))


def test_train_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(batch_size=0)
    with pytest.raises(ValueError):
        TrainConfig(epochs=0)
    cfg = TrainConfig(learning_rate=1.0, warmup_steps=4)
    assert [cfg.lr_at(s) for s in (1, 2, 4, 9)] == [0.25, 0.5, 1.0, 1.0]
