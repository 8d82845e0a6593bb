"""Numerics engine: tensors with reverse-mode gradients, layers, AdamW, seeded streams"""

from flora.core.nn import Linear, Module
from flora.core.optim import AdamW, AdamWState, adamw_step, cosine_lr
from flora.core.rng import Rng, logit_normal_timestep, sample_standard_normal, sample_timesteps
from flora.core.tensor import ComputationTape, Parameter, Tensor, backward

__all__ = [
    "AdamW",
    "AdamWState",
    "ComputationTape",
    "Linear",
    "Module",
    "Parameter",
    "Rng",
    "Tensor",
    "adamw_step",
    "backward",
    "cosine_lr",
    "logit_normal_timestep",
    "sample_standard_normal",
    "sample_timesteps",
]
