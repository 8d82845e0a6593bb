"""Module/parameter bookkeeping and the Linear layer"""

from collections import OrderedDict
from typing import Dict, Iterator, Tuple

import numpy as np

from flora.core.rng import Rng
from flora.core.tensor import Parameter, Tensor, as_tensor
from flora.errors import CheckpointError


class Module:
    """
    Base for anything holding parameters

    Parameters and sub-modules are discovered from instance attributes in
    definition order, so parameter names are stable across runs.
    """

    def named_parameters(self, prefix: str = "") -> Iterator[Tuple[str, Parameter]]:
        for attr, value in vars(self).items():
            name = f"{prefix}{attr}"
            if isinstance(value, Parameter):
                yield name, value
            elif isinstance(value, Module):
                yield from value.named_parameters(prefix=f"{name}.")

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def state_dict(self) -> "OrderedDict[str, np.ndarray]":
        return OrderedDict((name, p.data.copy()) for name, p in self.named_parameters())

    def load_state_dict(self, state: Dict[str, np.ndarray]) -> None:
        own = dict(self.named_parameters())
        missing = set(own) - set(state)
        unexpected = set(state) - set(own)
        if missing or unexpected:
            raise CheckpointError(
                f"parameter names differ (missing={sorted(missing)}, unexpected={sorted(unexpected)})"
            )
        for name, param in own.items():
            value = np.asarray(state[name], dtype=np.float64)
            if value.shape != param.shape:
                raise CheckpointError(f"{name}: checkpoint shape {value.shape} != model shape {param.shape}")
            param.assign_(value)

    def set_requires_grad(self, flag: bool) -> None:
        for p in self.parameters():
            p.requires_grad = flag

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def num_parameters(self) -> int:
        return int(sum(p.size for p in self.parameters()))


class Linear(Module):
    """y = x @ W + b, fan-in uniform init U(-1/sqrt(in), 1/sqrt(in))"""

    def __init__(self, in_features: int, out_features: int, rng: Rng, zero_init: bool = False):
        self.in_features = in_features
        self.out_features = out_features
        if zero_init:
            self.weight = Parameter(np.zeros((in_features, out_features)))
            self.bias = Parameter(np.zeros(out_features))
        else:
            bound = 1.0 / np.sqrt(in_features)
            self.weight = Parameter(rng.uniform((in_features, out_features), -bound, bound, purpose="init"))
            self.bias = Parameter(rng.uniform((out_features,), -bound, bound, purpose="init"))

    def __call__(self, x) -> Tensor:
        return as_tensor(x) @ self.weight + self.bias
