import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import SMALL_CONV, linear_1p, smooth_grad_fixture
from oracles import dense_forward
from locunlearn.errors import ConfigError, DimensionError, NumericOverflowError, ParseError
from locunlearn.nn import (
    LayerSpec,
    Model,
    OptimizerState,
    Schedule,
    TrainRecipe,
    build_model,
    checkpoint_bytes,
    finite_diff_grad,
    fit,
    forward,
    load_checkpoint,
    loss_and_grads,
    loss_value,
    masked_sgd_step,
    model_digest,
    parse_checkpoint,
    predict,
    reinit_params,
    save_checkpoint,
    schedule_lr,
)


def rel_err(a, b):
    return abs(a - b) / max(abs(a), abs(b), 1e-7)


def max_grad_rel_err(model, x, y, loss_kind="cross_entropy", l1_lambda=0.0):
    _, g = loss_and_grads(model, x, y, loss_kind, l1_lambda, dtype=np.float64)
    return max(rel_err(g[j], finite_diff_grad(model, x, y, j, 1e-4, loss_kind, l1_lambda))
               for j in range(model.p))


# ---------------------------------------------------------------- layout


def test_neuron_groups_partition_each_layer(conv_model):
    m = conv_model
    assert m.p == sum(layer.param_count for layer in m.layers)
    covered = np.zeros(m.p, dtype=int)
    for lid, (a, b) in enumerate(m.layer_offsets):
        groups = m.neuron_table[lid]
        for s, e in groups:
            assert a <= s < e <= b
            covered[s:e] += 1
        if groups:
            assert groups[0][0] == a and groups[-1][1] == b
    assert np.all(covered == 1)


def test_conv_group_is_kernel_plus_bias(conv_model):
    conv = conv_model.layers[0]
    assert conv.group_size == 1 * 3 * 3 + 1
    assert conv.num_groups == 3
    assert conv_model.layer_ids().tolist()[:30] == [0] * 30


def test_layer_block_is_a_view(conv_model):
    m = conv_model.copy()
    m.layer_block(3)[2, 0] = 42.0
    a, _ = m.layer_offsets[3]
    assert m.params[a + 2 * m.layers[3].group_size] == 42.0


def test_kaiming_uniform_bounds_and_zero_bias():
    m = build_model([{"kind": "dense", "out_features": 400}], input_shape=(50,), seed=0)
    block = m.layer_block(0)
    w, b = block[:, :-1], block[:, -1]
    bound = math.sqrt(6 / 50)
    assert np.all(np.abs(w) <= bound)
    assert np.all(b == 0)
    # uniform(-a, a) has variance a^2 / 3
    assert abs(w.var() - bound**2 / 3) < 0.05 * bound**2 / 3


# ---------------------------------------------------------------- forward


def test_forward_matches_hand_matrix_arithmetic():
    w1 = [[1.0, -2.0], [0.5, 0.25], [-1.0, 1.0]]
    b1 = [0.1, -0.2, 0.0]
    w2 = [[1.0, 0.0, 2.0], [-1.0, 1.0, 0.5]]
    b2 = [0.0, 0.3]
    m = Model([LayerSpec("dense", 2, 3), LayerSpec("relu"), LayerSpec("dense", 3, 2)], (2,))
    m.layer_block(0)[:] = np.c_[w1, b1]
    m.layer_block(2)[:] = np.c_[w2, b2]
    x = np.array([[1.0, 2.0], [-0.5, 0.75], [3.0, -1.0]], dtype=np.float32)
    np.testing.assert_allclose(forward(m, x), dense_forward([w1, w2], [b1, b2], x), rtol=1e-6)


def test_identity_dense_layer_passes_input_through():
    m = Model([LayerSpec("dense", 3, 3, has_bias=False)], (3,))
    m.params[:] = np.eye(3, dtype=np.float32).ravel()
    x = np.arange(6, dtype=np.float32).reshape(2, 3)
    np.testing.assert_array_equal(forward(m, x), x)


def test_zero_network_gives_zero_logits(conv_model, rng):
    m = conv_model.copy()
    m.params[:] = 0
    out = forward(m, rng.normal(size=(4, 1, 5, 5)))
    assert np.all(out == 0)


def test_shape_mismatch_is_dimension_error(conv_model):
    with pytest.raises(DimensionError):
        forward(conv_model, np.zeros((2, 1, 4, 4)))


def test_conv_matches_direct_loop(rng):
    m = build_model([{"kind": "conv2d", "out_channels": 2, "kernel_size": 3, "padding": 1},
                     {"kind": "flatten"}], input_shape=(2, 4, 4), seed=1)
    m.params[:] = rng.normal(size=m.p)
    x = rng.normal(size=(1, 2, 4, 4)).astype(np.float32)
    xp = np.pad(x[0], ((0, 0), (1, 1), (1, 1)))
    block = m.layer_block(0)
    expect = np.zeros((2, 4, 4))
    for o in range(2):
        w = block[o, :-1].reshape(2, 3, 3)
        for i in range(4):
            for j in range(4):
                expect[o, i, j] = np.sum(w * xp[:, i : i + 3, j : j + 3]) + block[o, -1]
    np.testing.assert_allclose(forward(m, x)[0], expect.ravel(), rtol=1e-5, atol=1e-5)


def test_predict_ties_go_to_lowest_class():
    m = Model([LayerSpec("dense", 2, 3)], (2,))
    assert predict(m, np.ones((5, 2))).tolist() == [0] * 5


# ---------------------------------------------------------------- losses and gradients


def test_squared_loss_closed_form():
    m = linear_1p(2.0)
    x, y = np.array([[1.0]]), np.array([[0.0]])
    loss, g = loss_and_grads(m, x, y, "squared")
    assert loss == pytest.approx(4.0)
    assert g[0] == pytest.approx(4.0)
    _, gn = loss_and_grads(m, x, y, "squared", negate=True)
    assert gn[0] == pytest.approx(-4.0)
    _, gl = loss_and_grads(m, x, y, "squared", l1_lambda=0.1)
    assert gl[0] == pytest.approx(4.1)


def test_finite_difference_of_linear_model():
    m = linear_1p(2.0)
    fd = finite_diff_grad(m, np.array([[1.0]]), np.array([[0.0]]), 0, 1e-4, "squared")
    assert abs(fd - 4.0) < 1e-6


def test_finite_difference_is_zero_on_flat_loss():
    m = Model([LayerSpec("dense", 2, 2, has_bias=False)], (2,))
    assert finite_diff_grad(m, np.zeros((3, 2)), np.array([0, 1, 0]), 1) == 0.0


def test_l1_subgradient_is_zero_at_zero():
    m = linear_1p(0.0)
    _, g = loss_and_grads(m, np.array([[0.0]]), np.array([[0.0]]), "squared", l1_lambda=0.5)
    assert g[0] == 0.0


@pytest.mark.parametrize("c", [2, 3, 10])
def test_cross_entropy_uniform_logits_is_log_c(c):
    m = Model([LayerSpec("dense", 4, c)], (4,))
    y = np.arange(6) % c
    assert loss_value(m, np.ones((6, 4)), y) == pytest.approx(math.log(c), rel=1e-12)


def test_cross_entropy_is_nonnegative(conv_model, rng):
    x = rng.normal(size=(8, 1, 5, 5))
    assert loss_value(conv_model, x, rng.integers(0, 4, 8)) >= 0


def test_empty_batch_raises(conv_model):
    with pytest.raises(ConfigError):
        loss_and_grads(conv_model, np.zeros((0, 1, 5, 5)), np.zeros(0, dtype=int))


def test_non_finite_values_raise():
    m = linear_1p(2.0)
    with pytest.raises(NumericOverflowError):
        loss_and_grads(m, np.array([[np.inf]]), np.array([[0.0]]), "squared")


def test_gradients_match_finite_differences_on_conv_net(conv_model, rng):
    x = rng.normal(size=(6, 1, 5, 5))
    y = rng.integers(0, 4, 6)
    assert max_grad_rel_err(conv_model, x, y) < 1e-4


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_gradients_match_finite_differences_property(seed):
    m, x, y = smooth_grad_fixture(np.random.default_rng(seed), 200, 3)
    assert max_grad_rel_err(m, x, y) < 1e-4


def test_gradient_with_l1_term_away_from_zero(rng):
    m = build_model([{"kind": "dense", "out_features": 3}], input_shape=(4,), seed=2)
    m.params[:] = rng.choice([-1, 1], m.p) * rng.uniform(0.2, 1.0, m.p)
    x = rng.normal(size=(5, 4))
    y = rng.integers(0, 3, 5)
    assert max_grad_rel_err(m, x, y, l1_lambda=0.05) < 1e-4


# ---------------------------------------------------------------- optimizer


def test_single_masked_step_by_hand():
    m = Model([LayerSpec("dense", 2, 1, has_bias=False)], (2,))
    m.params[:] = [1.0, 1.0]
    state = OptimizerState.zeros(2, momentum=0.0)
    masked_sgd_step(m, state, np.array([1.0, 1.0]), np.array([True, False]), 0.5)
    assert m.params.tolist() == [0.5, 1.0]


def test_all_ones_mask_is_plain_sgd(conv_model, rng):
    m = conv_model.copy()
    g = rng.normal(size=m.p)
    expect = m.params - np.float32(0.1) * g.astype(np.float32)
    masked_sgd_step(m, OptimizerState.zeros(m.p, momentum=0.0), g, None, 0.1)
    np.testing.assert_array_equal(m.params, expect)


def test_all_zeros_mask_freezes_model(conv_model, rng):
    m = conv_model.copy()
    masked_sgd_step(m, OptimizerState.zeros(m.p), rng.normal(size=m.p),
                    np.zeros(m.p, dtype=bool), 0.1)
    assert m.params.tobytes() == conv_model.params.tobytes()


def test_frozen_entries_survive_many_momentum_steps(conv_model, rng):
    m = conv_model.copy()
    mask = rng.random(m.p) < 0.3
    state = OptimizerState.zeros(m.p, momentum=0.9, weight_decay=1e-3)
    for _ in range(20):
        masked_sgd_step(m, state, rng.normal(size=m.p), mask, 0.05)
    assert m.params[~mask].tobytes() == conv_model.params[~mask].tobytes()
    assert np.any(m.params[mask] != conv_model.params[mask])


@pytest.mark.parametrize("lr", [0.0, -1.0])
def test_nonpositive_lr_is_config_error(conv_model, lr):
    with pytest.raises(ConfigError):
        masked_sgd_step(conv_model.copy(), OptimizerState.zeros(conv_model.p),
                        np.zeros(conv_model.p), None, lr)


def test_cosine_schedule_endpoints():
    s = Schedule("cosine", 0.2, 0.01, 100)
    assert schedule_lr(s, 0) == pytest.approx(0.2)
    assert schedule_lr(s, 100) == pytest.approx(0.01 * 0.2)
    assert schedule_lr(s, 500) == pytest.approx(0.01 * 0.2)
    assert schedule_lr(Schedule("cosine", 1.0, 0.0, 10), 5) == pytest.approx(0.5)
    assert schedule_lr(Schedule("constant", 0.3, 0.0, 10), 7) == 0.3


def test_reinit_is_mask_restricted_and_deterministic(conv_model):
    mask = np.zeros(conv_model.p, dtype=bool)
    mask[5:40] = True
    a = reinit_params(conv_model, mask, 9)
    b = reinit_params(conv_model, mask, 9)
    assert a.params.tobytes() == b.params.tobytes()
    assert a.params[~mask].tobytes() == conv_model.params[~mask].tobytes()
    assert reinit_params(conv_model, np.zeros(conv_model.p, bool), 9).params.tobytes() == \
        conv_model.params.tobytes()


def test_full_reinit_matches_first_training_init(conv_model):
    fresh = build_model(SMALL_CONV, seed=77)
    full = reinit_params(conv_model, np.ones(conv_model.p, bool), 77)
    assert full.params.tobytes() == fresh.params.tobytes()


# ---------------------------------------------------------------- training and checkpoints


def test_training_is_deterministic(toy_view):
    r = TrainRecipe(epochs=2, lr=0.05, batch_size=16)
    a, b = build_model(SMALL_CONV, seed=1), build_model(SMALL_CONV, seed=1)
    fit(a, toy_view, r, seed=4)
    fit(b, toy_view, r, seed=4)
    assert model_digest(a) == model_digest(b)


def test_zero_epochs_leaves_init(toy_view):
    m = build_model(SMALL_CONV, seed=1)
    init = m.params.copy()
    fit(m, toy_view, TrainRecipe(epochs=0), seed=0)
    assert m.params.tobytes() == init.tobytes()


def test_checkpoint_round_trip_is_bit_exact(tmp_path, conv_model, rng):
    m = conv_model.copy()
    m.params[:] = rng.normal(size=m.p).astype(np.float32)
    path = save_checkpoint(tmp_path / "m.ckpt", m, seed=5)
    loaded, header = load_checkpoint(path)
    assert loaded.params.tobytes() == m.params.tobytes()
    assert header["seed"] == 5 and header["p"] == m.p
    assert loaded.architecture() == m.architecture()
    raw = path.read_bytes()
    assert raw.endswith(m.params.astype("<f4").tobytes())


def test_truncated_checkpoint_is_parse_error(conv_model):
    raw = checkpoint_bytes(conv_model)
    with pytest.raises(ParseError):
        parse_checkpoint(raw[:-3])
    with pytest.raises(ParseError):
        parse_checkpoint(b"not a header")
