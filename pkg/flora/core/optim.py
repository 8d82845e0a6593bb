"""
AdamW with decoupled weight decay
=================================

    m ← β1·m + (1−β1)·g
    v ← β2·v + (1−β2)·g²
    p ← p·(1 − lr·wd) − lr·m̂ / (√v̂ + ε),   m̂ = m/(1−β1^k), v̂ = v/(1−β2^k)
"""

import logging
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from flora.core.tensor import Parameter, Tensor
from flora.errors import ShapeError

logger = logging.getLogger("flora.core")


@dataclass
class AdamWState:
    """Moments, step counter and hyperparameters for one parameter list"""
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.01
    step: int = 0
    m: List[np.ndarray] = field(default_factory=list)
    v: List[np.ndarray] = field(default_factory=list)

    @classmethod
    def create(cls, params: Sequence[Tensor], **hyper) -> "AdamWState":
        return cls(
            m=[np.zeros_like(p.data) for p in params],
            v=[np.zeros_like(p.data) for p in params],
            **hyper,
        )


def adamw_step(
    params: Sequence[Tensor],
    grads: Optional[Sequence[Optional[np.ndarray]]],
    state: AdamWState,
) -> Tuple[Sequence[Tensor], AdamWState]:
    """
    One bias-corrected AdamW update, in place

    Args:
        params: tensors to update
        grads: one gradient per parameter (None → use `p.grad`; a missing
            gradient counts as zero)
        state: moments, initialized with zeros via `AdamWState.create`

    Returns:
        (params, state) after the update
    """
    if grads is None:
        grads = [p.grad for p in params]
    if not (len(params) == len(grads) == len(state.m) == len(state.v)):
        raise ShapeError(
            f"adamw_step: {len(params)} params, {len(grads)} grads, {len(state.m)} moment slots"
        )

    state.step += 1
    bias1 = 1.0 - state.beta1 ** state.step
    bias2 = 1.0 - state.beta2 ** state.step

    for i, (param, grad) in enumerate(zip(params, grads)):
        g = np.zeros_like(param.data) if grad is None else np.asarray(grad, dtype=np.float64)
        if g.shape != param.shape or state.m[i].shape != param.shape:
            raise ShapeError(f"adamw_step: param {param.shape} vs grad {g.shape} vs moment {state.m[i].shape}")

        state.m[i] = state.beta1 * state.m[i] + (1.0 - state.beta1) * g
        state.v[i] = state.beta2 * state.v[i] + (1.0 - state.beta2) * g * g
        m_hat = state.m[i] / bias1
        v_hat = state.v[i] / bias2

        updated = param.data * (1.0 - state.lr * state.weight_decay)
        updated = updated - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
        param.assign_(updated)

    return params, state


class AdamW:
    """Stateful wrapper used by the training loops"""

    def __init__(self, params: Sequence[Parameter], lr: float = 1e-4, weight_decay: float = 0.01,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = list(params)
        self.state = AdamWState.create(
            self.params, lr=lr, weight_decay=weight_decay, beta1=beta1, beta2=beta2, eps=eps
        )

    def step(self) -> None:
        adamw_step(self.params, None, self.state)

    def set_lr(self, lr: float) -> None:
        self.state.lr = float(lr)

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None


def cosine_lr(base_lr: float, step: int, total: int) -> float:
    """Half-cosine decay: base_lr at step 0, reaching 0 at step `total`"""
    if total <= 0:
        return base_lr
    return 0.5 * base_lr * (1.0 + float(np.cos(np.pi * min(step, total) / total)))
