from __future__ import annotations

import math
import time

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from antiphishstack.errors import NonFiniteActivation, SchemaMismatch, ShapeMismatch, SingleClassError
from antiphishstack.lstm import (NetConfig, TrainSchedule, backward, bce_loss, cell_forward, forward, gate,
                                 init_params, load_model, premier_prediction, save_model, sigmoid, train_phase2)
from antiphishstack.metrics import pairwise_auc
from antiphishstack.optim import OptimizerConfig


def zeros_cell(H=1, I=1):
    return np.zeros((4 * H, H + I)), np.zeros(4 * H)


def test_cell_all_zero():
    W, b = zeros_cell(3, 2)
    h, c, cache = cell_forward(np.ones(2), np.zeros(3), np.zeros(3), W, b)
    assert np.all(cache["f"] == 0.5) and np.all(cache["i"] == 0.5) and np.all(cache["o"] == 0.5)
    assert np.all(cache["c_hat"] == 0) and np.all(c == 0) and np.all(h == 0)


def test_cell_zero_params_carry():
    W, b = zeros_cell(2, 1)
    c_prev = np.array([0.8, -2.0])
    h, c, _ = cell_forward(np.ones(1), np.zeros(2), c_prev, W, b)
    assert np.allclose(c, 0.5 * c_prev, atol=1e-15)
    assert np.allclose(h, 0.5 * np.tanh(0.5 * c_prev), atol=1e-15)


def test_cell_forget_bias_example():
    W, b = zeros_cell()
    b[0] = 2.0
    h, c, cache = cell_forward(np.zeros(1), np.zeros(1), np.ones(1), W, b)
    assert cache["f"][0, 0] == pytest.approx(0.880797, abs=1e-6)
    assert c[0, 0] == pytest.approx(0.880797, abs=1e-6)
    assert c[0, 0] == pytest.approx(1 / (1 + math.exp(-2)), abs=1e-15)
    # h = o * tanh(C) with o = 0.5; evaluates to 0.353409
    assert h[0, 0] == pytest.approx(0.5 * math.tanh(1 / (1 + math.exp(-2))), abs=1e-15)
    assert h[0, 0] == pytest.approx(0.353409, abs=1e-6)


def test_cell_shape_and_finiteness_errors():
    W, b = zeros_cell(2, 1)
    with pytest.raises(ShapeMismatch):
        cell_forward(np.ones(3), np.zeros(2), np.zeros(2), W, b)
    with pytest.raises(NonFiniteActivation):
        cell_forward(np.array([np.nan]), np.zeros(2), np.zeros(2), W, b)


@given(st.integers(0, 2 ** 31), st.floats(-5, 5), st.floats(0.1, 20))
def test_gate_ranges(seed, c_scale, w_scale):
    rng = np.random.default_rng(seed)
    H, I = 3, 2
    W = rng.normal(scale=w_scale, size=(4 * H, H + I))
    b = rng.normal(scale=w_scale, size=4 * H)
    c_prev = rng.normal(scale=abs(c_scale) + 0.1, size=H)
    _, c, cache = cell_forward(rng.normal(size=I), np.tanh(rng.normal(size=H)), c_prev, W, b)
    for name in ("f", "i", "o"):
        assert np.all((cache[name] >= 0) & (cache[name] <= 1))
    assert np.all(np.abs(cache["c_hat"]) <= 1)
    assert np.all(np.abs(c) <= np.abs(c_prev) + 1 + 1e-12)


def test_sigmoid_stable():
    assert sigmoid(np.float32(-1e4)) == 0.0 and sigmoid(np.float32(1e4)) == 1.0
    assert sigmoid(0.0) == 0.5


def test_gate_view_and_layout():
    cfg = NetConfig(hidden=4, embed_dim=3, dense=(5,))
    p = init_params(cfg, 0)
    assert p["l1.W"].shape == (16, 7) and p["l2.W"].shape == (16, 8)
    assert np.all(gate(p, 1, "f", "b") == 1.0) and np.all(gate(p, 1, "c", "b") == 0.0)
    assert p["embed"].shape == (97, 3) and p["d1.W"].shape == (5, 4) and p["out.W"].shape == (1, 5)


# --- gradients ------------------------------------------------------------------

def _loss(cfg, params, seqs, y, seed):
    _, cache = forward(cfg, params, seqs, train_mode=True, dropout_seed=seed)
    return bce_loss(cache.logit, y)


def _jittered(cfg, seed):
    rng = np.random.default_rng(seed + 1000)
    params = init_params(cfg, seed)
    # move biases off the ReLU kink so central differences are well defined
    return {k: v + rng.normal(scale=0.1, size=v.shape) for k, v in params.items()}


GRAD_CASES = [(mode, layers, seed) for mode in ("chars", "values") for layers in (1, 2) for seed in range(5)]


@pytest.mark.parametrize("mode,layers,seed", GRAD_CASES)
def test_gradients_match_central_differences(mode, layers, seed):
    cfg = NetConfig(input_mode=mode, vocab_size=7, embed_dim=3, hidden=4, num_layers=layers,
                    dense=(5, 3), dropout=0.3)
    rng = np.random.default_rng(seed)
    if mode == "chars":
        seqs = rng.integers(1, 7, size=(4, 3))
        seqs[1, 2:] = 0          # padded row
    else:
        seqs = rng.normal(size=(4, 3))
    y = np.array([0, 1, 1, 0])
    params = _jittered(cfg, seed)
    _, cache = forward(cfg, params, seqs, train_mode=True, dropout_seed=seed)
    grads = backward(cfg, params, cache, y)
    step = 1e-5
    for name, theta in params.items():
        fd = np.zeros_like(theta)
        for idx in np.ndindex(theta.shape):
            orig = theta[idx]
            theta[idx] = orig + step
            up = _loss(cfg, params, seqs, y, seed)
            theta[idx] = orig - step
            down = _loss(cfg, params, seqs, y, seed)
            theta[idx] = orig
            fd[idx] = (up - down) / (2 * step)
        g = grads[name]
        scale = max(np.linalg.norm(fd), np.linalg.norm(g))
        if scale == 0:
            continue
        assert np.linalg.norm(g - fd) / scale <= 1e-4, name
        assert np.all(np.abs(g - fd) <= 1e-4 * np.maximum(np.abs(g), np.abs(fd)) + 1e-9), name


def test_gradient_check_runtime():
    cfg = NetConfig(input_mode="chars", vocab_size=7, embed_dim=3, hidden=4, num_layers=1, dense=(5,), dropout=0.0)
    seqs = np.random.default_rng(0).integers(1, 7, size=(2, 3))
    y = np.array([0, 1])
    params = _jittered(cfg, 0)
    start = time.perf_counter()
    for seed in range(5):
        _, cache = forward(cfg, params, seqs, train_mode=True, dropout_seed=seed)
        backward(cfg, params, cache, y)
        for name, theta in params.items():
            for idx in np.ndindex(theta.shape):
                orig = theta[idx]
                theta[idx] = orig + 1e-5
                _loss(cfg, params, seqs, y, seed)
                theta[idx] = orig
    assert time.perf_counter() - start < 10.0


def test_unused_parameters_have_zero_gradient():
    cfg = NetConfig(vocab_size=7, embed_dim=3, hidden=4, num_layers=2, dense=(5,), dropout=0.0)
    params = _jittered(cfg, 3)
    seqs = np.array([[2, 3, 0], [2, 2, 0]])
    _, cache = forward(cfg, params, seqs)
    grads = backward(cfg, params, cache, np.array([1, 0]))
    unused = [r for r in range(7) if r not in (2, 3)]
    assert np.all(grads["embed"][unused] == 0)
    empty = np.zeros((2, 4), dtype=np.int64)
    _, cache = forward(cfg, params, empty)
    grads = backward(cfg, params, cache, np.array([1, 0]))
    for name in ("embed", "l1.W", "l1.b", "l2.W", "l2.b"):
        assert np.all(grads[name] == 0)


def test_zero_loss_point_has_zero_head_gradient():
    cfg = NetConfig(vocab_size=7, embed_dim=3, hidden=4, num_layers=1, dense=(), dropout=0.0)
    params = init_params(cfg, 0)
    params["out.b"][:] = 80.0
    _, cache = forward(cfg, params, np.array([[2, 3]]))
    assert cache.prob[0] == 1.0
    grads = backward(cfg, params, cache, np.array([1]))
    assert np.all(grads["out.W"] == 0) and np.all(grads["out.b"] == 0)


# --- forward semantics ----------------------------------------------------------------

def small_cfg(**kw):
    base = dict(vocab_size=97, embed_dim=4, hidden=6, num_layers=2, dense=(5, 3), dropout=0.5)
    base.update(kw)
    return NetConfig(**base)


def test_inference_is_deterministic_and_in_range():
    cfg = small_cfg()
    params = init_params(cfg, 1)
    seqs = np.random.default_rng(0).integers(2, 97, size=(5, 9))
    a, _ = forward(cfg, params, seqs)
    b, _ = forward(cfg, params, seqs)
    assert a.tobytes() == b.tobytes()
    assert np.all((a > 0) & (a < 1))


def test_all_padding_gives_head_bias_probability():
    cfg = small_cfg()
    params = _jittered(cfg, 2)
    prob, _ = forward(cfg, params, np.zeros((1, 10), dtype=np.int64))
    a = np.zeros(cfg.hidden)
    for k in (1, 2):
        a = np.maximum(params[f"d{k}.W"] @ a + params[f"d{k}.b"], 0)
    expected = sigmoid(params["out.W"] @ a + params["out.b"])[0]
    assert prob[0] == pytest.approx(expected, abs=1e-15)


def test_trailing_padding_does_not_change_output():
    cfg = small_cfg()
    params = init_params(cfg, 4)
    seq = np.array([[5, 9, 33, 40]])
    padded = np.array([[5, 9, 33, 40, 0, 0, 0]])
    assert forward(cfg, params, seq)[0][0] == pytest.approx(forward(cfg, params, padded)[0][0], abs=1e-15)
    mixed = np.array([[5, 9, 33, 40, 0, 0, 0], [7, 7, 7, 7, 7, 7, 7]])
    assert forward(cfg, params, mixed)[0][0] == pytest.approx(forward(cfg, params, seq)[0][0], abs=1e-15)


def test_zero_dropout_train_mode_equals_inference():
    cfg = small_cfg(dropout=0.0)
    params = init_params(cfg, 5)
    seqs = np.random.default_rng(1).integers(2, 97, size=(4, 6))
    a, _ = forward(cfg, params, seqs, train_mode=True, dropout_seed=9)
    b, _ = forward(cfg, params, seqs)
    assert a.tobytes() == b.tobytes()


def test_dropout_changes_train_forward_only():
    cfg = small_cfg(dropout=0.5)
    params = init_params(cfg, 5)
    seqs = np.random.default_rng(1).integers(2, 97, size=(4, 6))
    a, _ = forward(cfg, params, seqs, train_mode=True, dropout_seed=9)
    b, _ = forward(cfg, params, seqs, train_mode=True, dropout_seed=9)
    c, _ = forward(cfg, params, seqs)
    assert a.tobytes() == b.tobytes() and not np.allclose(a, c)


def test_out_of_vocabulary_index_rejected():
    cfg = small_cfg()
    with pytest.raises(ShapeMismatch):
        forward(cfg, init_params(cfg, 0), np.array([[200]]))
    with pytest.raises(ShapeMismatch):
        forward(cfg, init_params(cfg, 0), np.array([1, 2, 3]))


def test_premier_prediction_matches_forward_and_permutes():
    cfg = small_cfg()
    params = init_params(cfg, 6)
    rng = np.random.default_rng(3)
    seqs = rng.integers(2, 97, size=(30, 12))
    for i, n in enumerate(rng.integers(1, 12, size=30)):
        seqs[i, n:] = 0
    p = premier_prediction(cfg, params, seqs, batch_size=7)
    single = np.array([forward(cfg, params, seqs[i:i + 1])[0][0] for i in range(30)])
    assert np.allclose(p, single, atol=1e-12)
    perm = rng.permutation(30)
    assert np.allclose(premier_prediction(cfg, params, seqs[perm], batch_size=7), p[perm], atol=1e-12)
    assert len(premier_prediction(cfg, params, np.zeros((0, 12), dtype=np.int64))) == 0


# --- training --------------------------------------------------------------------------

def parity_task(seed=0):
    rng = np.random.default_rng(seed)
    bits = rng.integers(0, 2, size=(200, 6))
    return bits + 2, bits[:, 1] ^ bits[:, 4]


def test_parity_toy_task():
    seqs, y = parity_task()
    cfg = NetConfig(vocab_size=4, embed_dim=4, hidden=8, num_layers=2, dense=(8,), dropout=0.0)
    opt = OptimizerConfig("adam", learning_rate=0.01, epochs=300)
    model = train_phase2(seqs, y, cfg, opt, TrainSchedule(batch_size=16, patience=300, seed=1, dtype="float64"))
    assert len(model.log.records) <= 300
    assert any(r.train_acc == 1.0 for r in model.log.records)
    prob = model.predict_proba(seqs)
    assert np.mean((prob >= 0.5) == (y == 1)) == 1.0
    assert pairwise_auc(y, prob) == 1.0


def test_training_is_deterministic_and_logged(tmp_path):
    seqs, y = parity_task(1)
    cfg = NetConfig(vocab_size=4, embed_dim=3, hidden=4, num_layers=2, dense=(4,), dropout=0.2)
    opt = OptimizerConfig("rmsprop", learning_rate=0.01, epochs=6)
    a = train_phase2(seqs, y, cfg, opt, TrainSchedule(seed=3))
    b = train_phase2(seqs, y, cfg, opt, TrainSchedule(seed=3))
    for k in a.params:
        assert a.params[k].tobytes() == b.params[k].tobytes()
        assert a.params[k].dtype == np.float32
    assert [r.epoch for r in a.log.records] == list(range(1, 7))
    a.log.save(tmp_path / "log.tsv")
    lines = (tmp_path / "log.tsv").read_text().splitlines()
    assert lines[0] == "epoch\ttrain_loss\tval_loss\ttrain_acc\tval_acc" and len(lines) == 7


def test_early_stopping_restores_best_epoch():
    seqs, y = parity_task(2)
    cfg = NetConfig(vocab_size=4, embed_dim=3, hidden=4, num_layers=1, dense=(), dropout=0.0)
    opt = OptimizerConfig("sgd", learning_rate=1e-6, epochs=50)
    model = train_phase2(seqs, y, cfg, opt, TrainSchedule(seed=0, patience=2, min_delta=1.0))
    assert model.log.stopped_early and len(model.log.records) == 3 and model.log.best_epoch == 1


def test_single_class_training_rejected():
    with pytest.raises(SingleClassError):
        train_phase2(np.full((10, 3), 2), np.ones(10), small_cfg(), OptimizerConfig())


def test_model_roundtrip(tmp_path):
    cfg = small_cfg()
    seqs = np.random.default_rng(0).integers(2, 97, size=(6, 8))
    model = train_phase2(seqs, np.array([0, 1] * 3), cfg, OptimizerConfig(epochs=1))
    save_model(model, tmp_path / "m", "abc:1")
    back, stamp = load_model(tmp_path / "m")
    assert stamp == "abc:1" and back.cfg == cfg
    assert back.predict_proba(seqs).tobytes() == model.predict_proba(seqs).tobytes()


def test_load_rejects_foreign_container(tmp_path):
    from antiphishstack.container import save_arrays
    save_arrays(tmp_path / "x", {"a": np.zeros(2)}, {"format": "other"})
    with pytest.raises(SchemaMismatch):
        load_model(tmp_path / "x")
