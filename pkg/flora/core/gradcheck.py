"""Central finite-difference oracle for the autodiff engine"""

from typing import Callable, Dict, Sequence

import numpy as np

from flora.core.tensor import ComputationTape, Tensor, backward


def numerical_gradient(fn: Callable[[], Tensor], tensor: Tensor, h: float = 1e-5) -> np.ndarray:
    """d fn() / d tensor by central differences; `tensor.data` is restored afterwards"""
    original = tensor.data.copy()
    grad = np.zeros_like(original)
    for idx in np.ndindex(original.shape):
        plus = original.copy()
        plus[idx] += h
        tensor.data = plus
        f_plus = fn().item()
        minus = original.copy()
        minus[idx] -= h
        tensor.data = minus
        f_minus = fn().item()
        grad[idx] = (f_plus - f_minus) / (2.0 * h)
    tensor.data = original
    return grad


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """‖a − n‖ / max(‖a‖ + ‖n‖, 1e-12)"""
    diff = np.linalg.norm(analytic - numeric)
    scale = max(np.linalg.norm(analytic) + np.linalg.norm(numeric), 1e-12)
    return float(diff / scale)


def check_gradients(fn: Callable[[], Tensor], tensors: Sequence[Tensor], h: float = 1e-5) -> Dict[int, float]:
    """
    Compare reverse-mode gradients against central differences

    Args:
        fn: builds the scalar loss from the current values of `tensors`
        tensors: leaves to differentiate (requires_grad=True)
        h: finite-difference step

    Returns:
        relative error per tensor position in `tensors`
    """
    with ComputationTape() as tape:
        loss = fn()
    backward(tape, loss)
    analytic = [np.zeros_like(t.data) if t.grad is None else t.grad.copy() for t in tensors]

    errors = {}
    for i, tensor in enumerate(tensors):
        errors[i] = relative_error(analytic[i], numerical_gradient(fn, tensor, h))
    return errors
