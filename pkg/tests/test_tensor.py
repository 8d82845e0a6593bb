import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from flora.core.gradcheck import check_gradients
from flora.core.tensor import (
    ComputationTape,
    Parameter,
    Tensor,
    backward,
    broadcast_to,
    clip,
    concat,
    index,
    layer_norm,
    log_softmax,
    repeat_rows,
    reshape,
    softmax,
    square,
    transpose,
)
from flora.errors import NonFiniteError, ShapeError, TapeError

seeds = st.integers(min_value=0, max_value=2**32 - 1)


def _param(gen, *shape, scale=1.0):
    return Parameter(scale * gen.standard_normal(shape))


def test_square_gradient():
    x = Parameter(3.0)
    with ComputationTape() as tape:
        loss = x * x
    backward(tape, loss)
    assert x.grad == pytest.approx(6.0)


def test_sum_gradient_is_all_ones():
    x = Parameter(np.arange(12.0).reshape(3, 4))
    with ComputationTape() as tape:
        loss = x.sum()
    backward(tape, loss)
    np.testing.assert_array_equal(x.grad, np.ones((3, 4)))


def test_reused_tensor_accumulates():
    x = Parameter(2.0)
    with ComputationTape() as tape:
        loss = x * x + x * 3.0
    backward(tape, loss)
    assert x.grad == pytest.approx(7.0)


@settings(max_examples=100, deadline=None)
@given(seed=seeds)
def test_layer_norm_linear_softplus_matches_finite_differences(seed):
    gen = np.random.default_rng(seed)
    x = _param(gen, 4, 5)
    w = _param(gen, 5, 3)
    b = _param(gen, 3)

    def loss():
        return (layer_norm(x) @ w + b).softplus().mean()

    errors = check_gradients(loss, [x, w, b])
    assert max(errors.values()) < 1e-4


@settings(max_examples=100, deadline=None)
@given(seed=seeds)
def test_elementwise_primitives_match_finite_differences(seed):
    gen = np.random.default_rng(seed)
    a = _param(gen, 3, 4)
    b = Parameter(gen.uniform(0.5, 2.0, (3, 4)))

    def loss():
        h = a.silu() * b + a.tanh() - a.sigmoid() / b + a.exp() * 0.1 + b.log() + square(a - b)
        return (h.relu() + clip(a, -0.5, 0.5) + b ** 1.5).sum()

    # relu/clip kinks are measure-zero for continuous draws
    errors = check_gradients(loss, [a, b])
    assert max(errors.values()) < 1e-4


@settings(max_examples=100, deadline=None)
@given(seed=seeds)
def test_structural_primitives_match_finite_differences(seed):
    gen = np.random.default_rng(seed)
    a = _param(gen, 2, 3)
    b = _param(gen, 2, 2)
    c = _param(gen, 1, 3)

    def loss():
        joined = concat([a, b], axis=1)
        moved = transpose(reshape(joined, (5, 2)))
        rows = repeat_rows(index(a, (slice(None), slice(0, 2))), 3)
        wide = broadcast_to(c, (4, 3))
        probs = softmax(a, axis=1)
        return (
            square(moved).mean() + rows.sum() * 0.3 + (wide * wide).sum()
            + (probs * a).sum() + log_softmax(b, axis=0).sum()
        )

    errors = check_gradients(loss, [a, b, c])
    assert max(errors.values()) < 1e-4


def test_batched_matmul_gradients():
    gen = np.random.default_rng(5)
    x = _param(gen, 2, 3, 4)
    w = _param(gen, 4, 5)

    def loss():
        h = x @ w
        return (h @ transpose(h, (0, 2, 1))).mean()

    errors = check_gradients(loss, [x, w])
    assert max(errors.values()) < 1e-4


def test_non_scalar_loss_is_rejected():
    x = Parameter(np.ones(3))
    with ComputationTape() as tape:
        y = x * 2.0
    with pytest.raises(TapeError):
        backward(tape, y)


def test_tape_replays_once():
    x = Parameter(1.0)
    with ComputationTape() as tape:
        loss = x * 2.0
    backward(tape, loss)
    with pytest.raises(TapeError):
        backward(tape, loss)


def test_mutation_after_recording_is_detected():
    x = Parameter(np.ones(2))
    with ComputationTape() as tape:
        loss = (x * x).sum()
    x.assign_(np.zeros(2))
    with pytest.raises(TapeError):
        backward(tape, loss)


def test_loss_from_another_tape_is_rejected():
    x = Parameter(1.0)
    with ComputationTape() as other:
        loss = x * 2.0
    with pytest.raises(TapeError):
        backward(ComputationTape(), loss)
    assert len(other) == 1


def test_inference_mode_records_nothing():
    x = Parameter(np.ones(2))
    y = (x * 3.0).sum()
    assert y.item() == 6.0
    with ComputationTape() as tape:
        Tensor(np.ones(2)) * 3.0
    assert len(tape) == 0


def test_non_finite_results_raise():
    with pytest.raises(NonFiniteError):
        Tensor(np.array([0.0])).log()


def test_shapes_are_checked():
    with pytest.raises(ShapeError):
        Tensor(np.ones((2, 3))) @ Tensor(np.ones((2, 3)))
    with pytest.raises(ShapeError):
        Tensor(np.ones(2)).assign_(np.ones(3))


def test_float32_export():
    t = Tensor([1.0, 2.5])
    assert t.as_float32().dtype == np.float32
    assert t.data.dtype == np.float64
