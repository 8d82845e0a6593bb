import numpy as np
import pytest

from flora.core.optim import AdamW, AdamWState, adamw_step, cosine_lr
from flora.core.tensor import Parameter
from flora.errors import ShapeError


def test_first_step_matches_hand_evaluation():
    p = Parameter(1.0)
    state = AdamWState.create([p], lr=0.1, weight_decay=0.0)
    adamw_step([p], [np.array(0.5)], state)
    assert p.item() == pytest.approx(1.0 - 0.1 * 0.5 / (0.5 + 1e-8), abs=1e-12)
    assert p.item() == pytest.approx(0.9, abs=1e-7)
    assert state.step == 1


def test_decay_only_step_is_multiplicative():
    p = Parameter(np.array([2.0, -3.0]))
    state = AdamWState.create([p], lr=1e-4, weight_decay=0.01)
    adamw_step([p], [np.zeros(2)], state)
    np.testing.assert_allclose(p.data, np.array([2.0, -3.0]) * (1 - 1e-6), rtol=0, atol=1e-15)


def test_zero_gradient_without_decay_is_identity():
    p = Parameter(np.array([[0.3, -1.2], [4.0, 0.0]]))
    before = p.data.copy()
    optimizer = AdamW([p], lr=0.5, weight_decay=0.0)
    for step in range(1, 6):
        p.grad = np.zeros_like(before)
        optimizer.step()
        assert optimizer.state.step == step
    np.testing.assert_array_equal(p.data, before)


def test_missing_gradient_counts_as_zero():
    p = Parameter(np.ones(3))
    optimizer = AdamW([p], lr=0.1, weight_decay=0.0)
    optimizer.step()
    np.testing.assert_array_equal(p.data, np.ones(3))


def test_shape_mismatch_raises():
    p = Parameter(np.ones(3))
    state = AdamWState.create([p])
    with pytest.raises(ShapeError):
        adamw_step([p], [np.ones(2)], state)
    with pytest.raises(ShapeError):
        adamw_step([p], [], state)


def test_update_bumps_version():
    p = Parameter(1.0)
    version = p._version
    AdamW([p], lr=0.1).step()
    assert p._version == version + 1


def test_cosine_schedule_endpoints():
    assert cosine_lr(1e-2, 0, 200) == pytest.approx(1e-2)
    assert cosine_lr(1e-2, 100, 200) == pytest.approx(5e-3)
    assert cosine_lr(1e-2, 200, 200) == pytest.approx(0.0, abs=1e-18)
    assert cosine_lr(1e-2, 5, 0) == 1e-2
    rates = [cosine_lr(1.0, s, 50) for s in range(51)]
    assert all(a >= b for a, b in zip(rates, rates[1:]))


def test_set_lr_changes_step_size():
    p = Parameter(np.array([1.0]))
    optimizer = AdamW([p], lr=0.1, weight_decay=0.0)
    optimizer.set_lr(0.0)
    p.grad = np.array([1.0])
    optimizer.step()
    assert p.item() == 1.0
