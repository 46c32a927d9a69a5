from __future__ import annotations

import math

import numpy as np
import pytest

from goskill.compute import (
    Adam,
    AdamState,
    AttentionParams,
    CausalTransformer,
    Linear,
    MLP,
    Tensor,
    adam_update,
    causal_self_attention,
    clip_grad_norm,
    concat,
    layer_norm,
    linear_forward,
    load_checkpoint,
    load_into,
    mse_loss,
    no_grad,
    save_checkpoint,
    softmax_cross_entropy,
    stack,
    straight_through,
)
from goskill.compute.nn import initialize
from goskill.errors import ConfigError, DatasetFormatError, NumericError, ShapeError, TargetIndexError

from .helpers import assert_grad_close, numeric_grad


def _attention_params(rng: np.random.Generator, width: int) -> AttentionParams:
    return AttentionParams(
        qkv_weight=Tensor(rng.normal(0, 0.5, (width, 3 * width)), requires_grad=True),
        qkv_bias=Tensor(rng.normal(0, 0.1, 3 * width), requires_grad=True),
        out_weight=Tensor(rng.normal(0, 0.5, (width, width)), requires_grad=True),
        out_bias=Tensor(rng.normal(0, 0.1, width), requires_grad=True),
    )


def _check_op(op, *arrays: np.ndarray, seed: int = 0) -> None:
    """Gradient of ``sum(op(*inputs) * w)`` against central differences for every input."""
    rng = np.random.default_rng(seed)
    tensors = [Tensor(a, requires_grad=True) for a in arrays]
    out = op(*tensors)
    weights = rng.normal(size=out.shape)
    (out * weights).sum().backward()
    for tensor, array in zip(tensors, arrays):
        numeric = numeric_grad(lambda: float((op(*[Tensor(a) for a in arrays]).data * weights).sum()), array)
        assert_grad_close(tensor.grad, numeric)


# -- primitives -----------------------------------------------------------
def test_finite_differences_use_a_1e_5_central_step():
    # the central difference of x**3 at 0 is exactly h**2
    x = np.zeros(1)
    grad = numeric_grad(lambda: float(x[0] ** 3), x)
    assert grad[0] == pytest.approx(1e-10, rel=1e-6)


def test_elementwise_gradients_match_finite_differences():
    rng = np.random.default_rng(1)
    a = rng.normal(size=(3, 4))
    b = rng.uniform(0.5, 2.0, size=(3, 4))
    _check_op(lambda x, y: x * y + x / y - y, a, b)
    _check_op(lambda x: x.exp(), a)
    _check_op(lambda y: y.log() + y.sqrt(), b)
    _check_op(lambda x: x.tanh() ** 2, a)


def test_broadcast_and_reduction_gradients():
    rng = np.random.default_rng(2)
    a = rng.normal(size=(2, 3, 4))
    b = rng.normal(size=(4,))
    _check_op(lambda x, y: (x + y).sum(axis=1), a, b)
    _check_op(lambda x: x.mean(axis=-1, keepdims=True) * x, a)


def test_matmul_gradient_batched():
    rng = np.random.default_rng(3)
    _check_op(lambda x, y: x @ y, rng.normal(size=(2, 3, 4)), rng.normal(size=(2, 4, 5)))


def test_indexing_concat_stack_gradients():
    rng = np.random.default_rng(4)
    a = rng.normal(size=(4, 3))
    b = rng.normal(size=(2, 3))
    _check_op(lambda x: x[np.array([0, 2, 2])], a)
    _check_op(lambda x, y: concat([x, y], axis=0), a, b)
    _check_op(lambda x, y: stack([x[:2], y], axis=1), a, b)


def test_softmax_and_log_softmax_gradients():
    rng = np.random.default_rng(5)
    a = rng.normal(size=(3, 5))
    _check_op(lambda x: x.softmax(axis=-1), a)
    _check_op(lambda x: x.log_softmax(axis=-1), a)


def test_softmax_rows_sum_to_one_and_masked_entries_are_zero():
    logits = Tensor(np.random.default_rng(6).normal(size=(4, 6)) * 10)
    probs = logits.softmax(axis=-1).data
    assert np.all(np.abs(probs.sum(axis=-1) - 1.0) < 1e-12)
    mask = np.array([True, True, False, True, False, False])
    masked = logits.softmax(axis=-1, mask=mask).data
    assert np.all(masked[:, ~mask] == 0.0)
    assert np.allclose(masked.sum(axis=-1), 1.0)


def test_straight_through_forwards_e_and_routes_gradient_to_z():
    z = Tensor(np.array([0.9, 0.8]), requires_grad=True)
    e = Tensor(np.array([1.0, 1.0]))
    out = straight_through(z, e)
    np.testing.assert_array_equal(out.data, e.data)
    (out * np.array([2.0, -3.0])).sum().backward()
    np.testing.assert_array_equal(z.grad, [2.0, -3.0])
    with pytest.raises(ShapeError):
        straight_through(z, Tensor(np.zeros(3)))


def test_leaf_gradients_accumulate_across_backward_calls():
    x = Tensor(np.array([1.0, 2.0]), requires_grad=True)
    (x * 3.0).sum().backward()
    (x * 3.0).sum().backward()
    np.testing.assert_array_equal(x.grad, [6.0, 6.0])


def test_no_grad_builds_no_graph():
    x = Tensor(np.ones(3), requires_grad=True)
    with no_grad():
        y = (x * 2.0).sum()
    assert not y.requires_grad
    with pytest.raises(ShapeError):
        y.backward()


def test_non_finite_forward_value_raises():
    with pytest.raises(NumericError):
        Tensor(np.array([0.0])).log()


def test_matmul_inner_mismatch_raises():
    with pytest.raises(ShapeError):
        Tensor(np.ones((2, 3))) @ Tensor(np.ones((4, 2)))


# -- linear / norm / attention --------------------------------------------
def test_linear_forward_examples():
    x = Tensor(np.array([1.0, 2.0]))
    np.testing.assert_array_equal(linear_forward(x, Tensor(np.eye(2)), Tensor(np.zeros(2))).data, [1.0, 2.0])
    out = linear_forward(x, Tensor(np.zeros((2, 3))), Tensor(np.array([1.0, -1.0, 0.5])))
    np.testing.assert_array_equal(out.data, [1.0, -1.0, 0.5])
    with pytest.raises(ShapeError):
        linear_forward(x, Tensor(np.ones((3, 2))))


def test_linear_gradients():
    rng = np.random.default_rng(7)
    _check_op(
        lambda x, w, b: linear_forward(x, w, b),
        rng.normal(size=(3, 4)),
        rng.normal(size=(4, 2)),
        rng.normal(size=2),
    )


def test_layer_norm_gradients():
    rng = np.random.default_rng(8)
    _check_op(
        lambda x, g, o: layer_norm(x, g, o),
        rng.normal(size=(3, 5)),
        rng.uniform(0.5, 1.5, size=5),
        rng.normal(size=5),
    )


def test_single_position_attention_reads_itself():
    rng = np.random.default_rng(9)
    params = _attention_params(rng, 4)
    x = rng.normal(size=(1, 4))
    out = causal_self_attention(Tensor(x), params, n_heads=2).data
    value = x @ params.qkv_weight.data[:, 8:] + params.qkv_bias.data[8:]
    expected = value @ params.out_weight.data + params.out_bias.data
    np.testing.assert_allclose(out, expected, rtol=1e-12, atol=1e-12)


def test_attention_is_causal():
    rng = np.random.default_rng(10)
    params = _attention_params(rng, 4)
    x = rng.normal(size=(4, 4))
    before = causal_self_attention(Tensor(x), params, n_heads=2).data
    changed = x.copy()
    changed[2] += 5.0
    after = causal_self_attention(Tensor(changed), params, n_heads=2).data
    np.testing.assert_array_equal(before[:2], after[:2])
    assert not np.allclose(before[2], after[2])


def test_attention_gradients_wrt_input_and_weights():
    rng = np.random.default_rng(11)
    params = _attention_params(rng, 4)
    x = rng.normal(size=(3, 4))
    weights = rng.normal(size=(3, 4))
    x_t = Tensor(x, requires_grad=True)
    (causal_self_attention(x_t, params, n_heads=2) * weights).sum().backward()

    def loss() -> float:
        plain = AttentionParams(*(Tensor(p.data) for p in (params.qkv_weight, params.qkv_bias, params.out_weight, params.out_bias)))
        return float((causal_self_attention(Tensor(x), plain, n_heads=2).data * weights).sum())

    assert_grad_close(x_t.grad, numeric_grad(loss, x))
    assert_grad_close(params.qkv_weight.grad, numeric_grad(loss, params.qkv_weight.data))
    assert_grad_close(params.out_bias.grad, numeric_grad(loss, params.out_bias.data))


def test_attention_rejects_indivisible_heads():
    params = _attention_params(np.random.default_rng(12), 4)
    with pytest.raises(ConfigError):
        causal_self_attention(Tensor(np.ones((2, 4))), params, n_heads=3)


def test_transformer_output_at_t_ignores_later_tokens():
    model = CausalTransformer(width=8, n_layers=2, n_heads=2)
    initialize(model, seed=3)
    model.eval()
    x = np.random.default_rng(13).normal(size=(1, 5, 8))
    before = model(Tensor(x)).data
    x[0, 4] = 100.0
    after = model(Tensor(x)).data
    np.testing.assert_array_equal(before[0, :4], after[0, :4])


# -- losses ---------------------------------------------------------------
def test_cross_entropy_examples():
    assert softmax_cross_entropy(Tensor(np.array([0.0, 0.0])), 0).item() == pytest.approx(math.log(2), abs=1e-12)
    assert softmax_cross_entropy(Tensor(np.array([1000.0, 0.0])), 0).item() == pytest.approx(0.0, abs=1e-12)
    value = softmax_cross_entropy(Tensor(np.array([1.0, 2.0, 3.0])), 2).item()
    assert value == pytest.approx(0.407606, abs=1e-6)


def test_cross_entropy_rejects_out_of_range_target():
    with pytest.raises(TargetIndexError):
        softmax_cross_entropy(Tensor(np.array([1.0, 2.0])), 2)
    with pytest.raises(IndexError):
        softmax_cross_entropy(Tensor(np.array([1.0, 2.0])), -1)


def test_cross_entropy_gradient():
    rng = np.random.default_rng(14)
    logits = rng.normal(size=(4, 3))
    targets = np.array([0, 2, 1, 2])
    _check_op(lambda x: softmax_cross_entropy(x, targets), logits)


def test_masked_mse_ignores_masked_steps():
    pred = Tensor(np.array([[[1.0, 1.0], [5.0, 5.0]]]))
    target = np.zeros((1, 2, 2))
    assert mse_loss(pred, target, np.array([[1.0, 0.0]])).item() == pytest.approx(2.0)
    assert mse_loss(pred, target, np.array([[0.0, 0.0]])).item() == 0.0


# -- layers ---------------------------------------------------------------
def test_mlp_parameter_gradients():
    mlp = MLP((3, 5, 2))
    initialize(mlp, seed=0, std=0.5)
    x = np.random.default_rng(15).normal(size=(4, 3))
    weights = np.random.default_rng(16).normal(size=(4, 2))
    (mlp(Tensor(x)) * weights).sum().backward()
    last = mlp.parameters()["layers.1.weight"]
    numeric = numeric_grad(lambda: float((mlp(Tensor(x)).data * weights).sum()), last.data)
    assert_grad_close(last.grad, numeric)


def test_mlp_needs_two_dims():
    with pytest.raises(ConfigError):
        MLP((3,))


def test_initialize_is_deterministic_per_seed():
    a, b, c = Linear(3, 4), Linear(3, 4), Linear(3, 4)
    initialize(a, seed=5)
    initialize(b, seed=5)
    initialize(c, seed=6)
    assert a.checksum() == b.checksum()
    assert a.checksum() != c.checksum()
    assert np.all(a.bias.data == 0.0)


def test_state_dict_rejects_wrong_shapes():
    layer = Linear(2, 3)
    state = layer.state_dict()
    state["weight"] = np.zeros((3, 3))
    with pytest.raises(ShapeError):
        layer.load_state_dict(state)


# -- optimiser ------------------------------------------------------------
def test_adam_zero_gradient_leaves_parameters():
    params = {"w": np.array([1.0, -2.0])}
    updated, state = adam_update(params, {"w": np.zeros(2)}, AdamState(lr=0.1))
    np.testing.assert_array_equal(updated["w"], params["w"])
    assert state.step == 1


def test_adam_first_step_moves_by_learning_rate():
    updated, _ = adam_update({"w": np.array([1.0])}, {"w": np.array([1.0])}, AdamState(lr=0.1))
    assert updated["w"][0] == pytest.approx(0.9, abs=1e-6)


def test_adam_is_deterministic():
    params = {"w": np.array([0.5, 0.25])}
    grads = {"w": np.array([0.3, -0.7])}
    first, _ = adam_update(params, grads, AdamState(lr=0.01))
    second, _ = adam_update(params, grads, AdamState(lr=0.01))
    np.testing.assert_array_equal(first["w"], second["w"])


def test_adam_names_parameter_with_non_finite_gradient():
    with pytest.raises(NumericError, match="decoder.head.weight"):
        adam_update({"decoder.head.weight": np.zeros(2)}, {"decoder.head.weight": np.array([np.nan, 0.0])}, AdamState(lr=0.1))


def test_adam_rejects_non_positive_learning_rate():
    with pytest.raises(ConfigError):
        adam_update({"w": np.zeros(1)}, {"w": np.zeros(1)}, AdamState(lr=0.0))


def test_clip_grad_norm_scales_to_max_norm():
    grads = {"a": np.array([3.0, 4.0])}
    total = clip_grad_norm(grads, 1.0)
    assert total == pytest.approx(5.0)
    assert np.linalg.norm(grads["a"]) == pytest.approx(1.0, abs=1e-6)


def test_adam_wrapper_treats_missing_gradient_as_zero():
    layer = Linear(2, 1)
    initialize(layer, seed=0)
    before = layer.weight.data.copy()
    optimizer = Adam({"weight": layer.weight}, lr=0.1)
    optimizer.zero_grad()
    optimizer.step()
    np.testing.assert_array_equal(layer.weight.data, before)


# -- checkpoints ----------------------------------------------------------
def test_checkpoint_restores_identical_parameters(tmp_path):
    source, target = MLP((3, 4, 2)), MLP((3, 4, 2))
    initialize(source, seed=1)
    initialize(target, seed=2)
    digest = save_checkpoint(tmp_path / "mlp.npz", source)
    assert load_into(target, tmp_path / "mlp.npz") == digest == source.checksum()


def test_checkpoint_errors(tmp_path):
    with pytest.raises(ConfigError):
        load_checkpoint(tmp_path / "missing.npz")
    np.savez(tmp_path / "old.npz", weight=np.zeros(2))
    with pytest.raises(DatasetFormatError):
        load_checkpoint(tmp_path / "old.npz")
    (tmp_path / "junk.npz").write_bytes(b"not a zip")
    with pytest.raises(DatasetFormatError):
        load_checkpoint(tmp_path / "junk.npz")
