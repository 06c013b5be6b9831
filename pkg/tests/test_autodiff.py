"""Tensor engine tests: forward semantics, stability, gradient correctness.

Expected values come from independent oracles: mpmath softmax at 50 digits,
hand-derived calculus for the scalar cases, and central finite differences
for everything composite.
"""

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings as hyp_settings, strategies as st

from amanet.autodiff import (Graph, OperatorError, ShapeError, Tensor, add,
                             broadcast_to, concat, div, finite_difference_check,
                             forward_op, layer_norm, matmul, mul, reduce_mean,
                             reduce_sum, relu, sigmoid, softmax,
                             softmax_stable, sub, take, transpose)
from amanet.nn import Linear, MultiHeadAttention, TransformerBlock


def softmax_oracle(values, temperature=1.0):
    """Direct exp-normalization at 50 decimal digits."""
    with mpmath.workdps(50):
        exps = [mpmath.exp(mpmath.mpf(temperature) * mpmath.mpf(float(v)))
                for v in values]
        total = mpmath.fsum(exps)
        return np.array([float(e / total) for e in exps])


# -- forward semantics ----------------------------------------------------------


def test_relu_definition():
    assert np.array_equal(relu(Tensor([-1.0, 0.0, 2.0])).data, [0.0, 0.0, 2.0])


def test_sigmoid_at_zero():
    assert sigmoid(Tensor(0.0)).item() == 0.5


def test_softmax_reference_values():
    out = softmax_stable(Tensor([1.0, 2.0, 3.0]))
    assert np.allclose(out.data, [0.09003, 0.24473, 0.66524], atol=1e-5)
    assert np.allclose(out.data, softmax_oracle([1.0, 2.0, 3.0]), atol=1e-12)


def test_softmax_uniform_on_zero_logits():
    for n in (2, 3, 7):
        out = softmax_stable(Tensor(np.zeros(n)), temperature=17.3)
        assert np.allclose(out.data, 1.0 / n, atol=1e-15)


def test_softmax_extreme_logits_do_not_overflow():
    out = softmax_stable(Tensor([1000.0, 0.0]))
    assert np.all(np.isfinite(out.data))
    assert abs(out.data[0] - 1.0) < 1e-12 and out.data[1] < 1e-12


def test_softmax_temperature_five_matches_oracle():
    logits = [0.2, -0.1, 0.5]
    out = softmax_stable(Tensor(logits), temperature=5.0)
    assert np.allclose(out.data, softmax_oracle(logits, 5.0), atol=1e-12)


def test_softmax_rejects_nonpositive_temperature():
    with pytest.raises(ValueError):
        softmax_stable(Tensor([1.0, 2.0]), temperature=0.0)
    with pytest.raises(ValueError):
        softmax_stable(Tensor([1.0, 2.0]), temperature=-3.0)


def test_softmax_sums_to_one_along_axis():
    rng = np.random.default_rng(0)
    for _ in range(200):  # 10^4 rows across iterations
        x = Tensor(rng.uniform(-30, 30, size=(50, 7)))
        out = softmax_stable(x, temperature=rng.uniform(0.1, 500.0), axis=-1)
        assert np.abs(out.data.sum(axis=-1) - 1.0).max() < 1e-12


def test_softmax_shift_invariance():
    rng = np.random.default_rng(1)
    x = rng.uniform(-5, 5, size=(40, 6))
    for shift in (1.0, -7.5, 123.0):
        a = softmax_stable(Tensor(x), temperature=3.0, axis=1).data
        b = softmax_stable(Tensor(x + shift), temperature=3.0, axis=1).data
        assert np.abs(a - b).max() < 1e-12


@given(st.lists(st.floats(-50, 50), min_size=2, max_size=9),
       st.floats(0.01, 100.0))
@hyp_settings(max_examples=60, deadline=None)
def test_softmax_matches_oracle_property(values, temperature):
    out = softmax_stable(Tensor(values), temperature=temperature)
    assert np.allclose(out.data, softmax_oracle(values, temperature), atol=1e-10)


def test_forward_determinism():
    rng = np.random.default_rng(2)
    x = rng.uniform(-3, 3, (5, 4))
    w = rng.uniform(-1, 1, (4, 3))
    first = relu(matmul(Tensor(x), Tensor(w))).data
    second = relu(matmul(Tensor(x), Tensor(w))).data
    assert np.array_equal(first, second)


def test_shape_errors_report_offenders():
    with pytest.raises(ShapeError) as err:
        matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((4, 2))))
    assert "(2, 3)" in str(err.value) and "(4, 2)" in str(err.value)
    with pytest.raises(ShapeError):
        add(Tensor(np.ones((2, 3))), Tensor(np.ones((4,))))


def test_forward_op_dispatch_and_unknown_tag():
    out = forward_op("relu", [Tensor([-2.0, 5.0])])
    assert np.array_equal(out.data, [0.0, 5.0])
    out = forward_op("softmax", [Tensor([0.0, 0.0])], {"temperature": 2.0})
    assert np.allclose(out.data, [0.5, 0.5])
    out = forward_op("attention", [Tensor(np.ones((1, 2, 4)))] * 3,
                     {"n_heads": 2})
    assert out.shape == (1, 2, 4)
    with pytest.raises(OperatorError):
        forward_op("convolve3d", [Tensor([1.0])])


# -- backward: hand-derived cases --------------------------------------------------


def test_backward_sum_of_squares():
    w = Tensor([1.0, 2.0], requires_grad=True)
    (w * w).sum().backward()
    assert np.allclose(w.grad, [2.0, 4.0], atol=1e-15)


def test_backward_sigmoid_at_zero():
    x = Tensor(0.0, requires_grad=True)
    sigmoid(x).backward()
    assert abs(x.grad - 0.25) < 1e-15


def test_backward_requires_scalar():
    x = Tensor([1.0, 2.0], requires_grad=True)
    with pytest.raises(ShapeError):
        (x * x).backward()


def test_detached_leaf_gets_zero_gradient():
    used = Tensor([1.0, 2.0], requires_grad=True)
    unused = Tensor([3.0], requires_grad=True)
    graph = Graph({"used": used, "unused": unused},
                  lambda: (used * used).sum())
    grads = graph.backward()
    assert np.allclose(grads["used"], [2.0, 4.0])
    assert np.array_equal(grads["unused"], [0.0])


def test_repeated_backward_accumulates():
    w = Tensor([3.0], requires_grad=True)
    loss = (w * w).sum()
    loss.backward()
    first = w.grad.copy()
    loss.backward()
    assert np.allclose(w.grad, 2.0 * first)


def test_graph_rejects_untrainable_parameter():
    with pytest.raises(ValueError):
        Graph({"w": Tensor([1.0])}, lambda: Tensor(0.0))


# -- backward: finite-difference oracles ---------------------------------------------


def test_linear_map_gradient_is_exact():
    rng = np.random.default_rng(3)
    w = Tensor(rng.uniform(-1, 1, (4, 3)), requires_grad=True)
    x = Tensor(rng.uniform(-1, 1, (6, 4)))
    graph = Graph({"w": w}, lambda: matmul(x, w).sum())
    assert finite_difference_check(graph, epsilon=1e-5) < 1e-8


def test_random_composite_matches_finite_differences():
    rng = np.random.default_rng(4)
    w1 = Tensor(rng.uniform(-1, 1, (3, 4)), requires_grad=True)
    w2 = Tensor(rng.uniform(-1, 1, (4, 2)), requires_grad=True)
    b = Tensor(rng.uniform(-1, 1, (2,)), requires_grad=True)
    x = Tensor(rng.uniform(-3, 3, (5, 3)))
    target = Tensor(rng.uniform(0, 1, (5, 2)))

    def loss():
        h = relu(matmul(x, w1))
        y = sigmoid(matmul(h, w2) + b)
        diff = y - target
        return (diff * diff).mean()

    graph = Graph({"w1": w1, "w2": w2, "b": b}, loss)
    assert finite_difference_check(graph, epsilon=1e-5) < 1e-4


@pytest.mark.parametrize("op_name", [
    "relu", "sigmoid", "softmax", "mul", "div", "sub", "matmul", "mean",
    "layer_norm", "concat", "take", "transpose", "broadcast",
])
def test_operator_gradients_match_finite_differences(op_name):
    rng = np.random.default_rng(hash(op_name) % 2**32)
    w = Tensor(rng.uniform(-3, 3, (4, 3)), requires_grad=True)
    other = Tensor(rng.uniform(0.5, 3, (4, 3)))
    target = Tensor(rng.uniform(-1, 1, (4, 3)))

    builders = {
        "relu": lambda: (relu(w) * target).sum(),
        "sigmoid": lambda: (sigmoid(w) * target).sum(),
        "softmax": lambda: (softmax(w, temperature=2.5, axis=1) * target).sum(),
        "mul": lambda: (mul(w, other) * target).sum(),
        "div": lambda: (div(w, other) * target).sum(),
        "sub": lambda: (sub(w, other) * target).sum(),
        "matmul": lambda: (matmul(w, transpose(other, (1, 0))) ).sum(),
        "mean": lambda: (reduce_mean(w, axis=0, keepdims=True) * Tensor(
            np.ones((1, 3)))).sum(),
        "layer_norm": lambda: (layer_norm(
            w, Tensor(np.ones(3), requires_grad=False),
            Tensor(np.zeros(3))) * target).sum(),
        "concat": lambda: (concat([w, w * 2.0], axis=1)
                           * Tensor(np.ones((4, 6)))).sum(),
        "take": lambda: (take(w, (slice(1, 3), slice(None))) * Tensor(
            np.ones((2, 3)))).sum(),
        "transpose": lambda: (transpose(w, (1, 0)) * Tensor(np.ones((3, 4)))).sum(),
        "broadcast": lambda: (broadcast_to(reduce_sum(w, axis=0, keepdims=True),
                                           (4, 3)) * target).sum(),
    }
    graph = Graph({"w": w}, builders[op_name])
    assert finite_difference_check(graph, epsilon=1e-5) < 1e-4


def test_attention_block_gradient():
    rng = np.random.default_rng(5)
    block = MultiHeadAttention(4, 4, 2, rng)
    x = Tensor(rng.uniform(-1, 1, (2, 3, 4)))
    target = Tensor(rng.uniform(0, 1, (2, 3, 4)))
    graph = Graph(block.named_parameters(), lambda: (block(x) * target).sum())
    assert finite_difference_check(graph, epsilon=1e-5) < 1e-5


def test_transformer_block_gradient():
    rng = np.random.default_rng(6)
    block = TransformerBlock(4, 4, 2, rng, std=0.3)
    x = Tensor(rng.uniform(-1, 1, (2, 3, 4)))
    target = Tensor(rng.uniform(0, 1, (2, 3, 4)))
    graph = Graph(block.named_parameters(), lambda: (block(x) * target).sum())
    assert finite_difference_check(graph, epsilon=1e-4) < 1e-4


def test_linear_layer_flattens_leading_dims():
    rng = np.random.default_rng(7)
    layer = Linear(5, 2, rng, std=0.5)
    x = rng.uniform(-1, 1, (3, 4, 2, 5))
    out = layer(Tensor(x))
    assert out.shape == (3, 4, 2, 2)
    expected = x.reshape(-1, 5) @ layer.weight.data + layer.bias.data
    assert np.allclose(out.data, expected.reshape(3, 4, 2, 2), atol=1e-14)
