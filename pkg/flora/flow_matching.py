"""
Noise-free flow matching (deciding phase)
=========================================

By default the flow source is the semantic latent z_a itself and the
target is the skeleton latent z_s; no Gaussian noise is drawn for the
source and the velocity network receives no class condition:

    z_t = [1 − (1 − σ_min)·t]·z0 + t·z1
    v*  = z1 − (1 − σ_min)·z0
    L   = ‖v̂ − v*‖² − λ_Flow·‖v̂ − v̂*‖²

v̂* is the ground-truth velocity of the batch neighbour j = (i + 1) mod B,
dropped when both items share a class.

For ablations `flow.source` can inject Gaussian noise into the source
('noisy_latent') or replace it by pure noise ('noise'), and
`flow.conditioned` feeds the token-mean semantic latent of the item's class
into the time embedding. Inference always uses the noise mean, so
classification stays deterministic.
"""

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from flora.config import FlowTrainConfig
from flora.core.nn import Linear, Module
from flora.core.optim import AdamW, cosine_lr
from flora.core.rng import Rng, sample_timesteps
from flora.core.tensor import (
    ComputationTape,
    Tensor,
    backward,
    broadcast_to,
    concat,
    layer_norm,
    matmul,
    reshape,
    silu,
    softmax,
    square,
    transpose,
)
from flora.cross_modal_vae import VaePair, sample_batch, seen_training_items, semantic_latents, skeleton_latents
from flora.errors import ConfigError, EmptyBatchError, FrozenModelError, NumericError, ShapeError
from flora.feature_pack import FeaturePack
from flora.splits import SplitSpec

logger = logging.getLogger("flora.flow")

TIME_SCALE = 1000.0


def _check_pair(z0: np.ndarray, z1: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    z0 = np.asarray(z0, dtype=np.float64)
    z1 = np.asarray(z1, dtype=np.float64)
    if z0.shape != z1.shape:
        raise ShapeError(f"z0 {z0.shape} and z1 {z1.shape} differ")
    return z0, z1


def interpolate(z0, z1, t, sigma_min: float = 1e-5) -> np.ndarray:
    """
    z_t = [1 − (1 − σ_min)t]·z0 + t·z1

    `t` is a scalar or one value per leading item (broadcast over the
    remaining axes).
    """
    z0, z1 = _check_pair(z0, z1)
    t = np.asarray(t, dtype=np.float64)
    if np.any(t < 0.0) or np.any(t > 1.0):
        raise NumericError(f"t must lie in [0, 1], got {t}")
    if t.ndim == 1 and z0.ndim > 1:
        t = t.reshape((-1,) + (1,) * (z0.ndim - 1))
    return (1.0 - (1.0 - sigma_min) * t) * z0 + t * z1


def gt_velocity(z0, z1, sigma_min: float = 1e-5) -> np.ndarray:
    """v* = z1 − (1 − σ_min)·z0, constant along the path"""
    z0, z1 = _check_pair(z0, z1)
    return z1 - (1.0 - sigma_min) * z0


# ============= VELOCITY NETWORK =============

class TimestepEmbedder(Module):
    """Sinusoidal features of 1000·t (geometric frequencies) → Linear → SiLU → Linear"""

    def __init__(self, frequencies: int, embed_width: int, rng: Rng):
        self.frequencies = frequencies
        self.fc1 = Linear(2 * frequencies, embed_width, rng)
        self.fc2 = Linear(embed_width, embed_width, rng)

    def sinusoids(self, t: np.ndarray) -> np.ndarray:
        t = np.asarray(t, dtype=np.float64).reshape(-1)
        freqs = np.exp(-np.log(10000.0) * np.arange(self.frequencies) / self.frequencies)
        args = TIME_SCALE * t[:, None] * freqs[None, :]
        return np.concatenate([np.cos(args), np.sin(args)], axis=1)

    def __call__(self, t) -> Tensor:
        return self.fc2(silu(self.fc1(self.sinusoids(t))))


class TokenAttention(Module):
    """Single-head self-attention across the token axis of each item"""

    def __init__(self, width: int, rng: Rng):
        self.width = width
        self.query = Linear(width, width, rng)
        self.key = Linear(width, width, rng)
        self.value = Linear(width, width, rng)
        self.proj = Linear(width, width, rng, zero_init=True)

    def __call__(self, x: Tensor) -> Tensor:
        h = layer_norm(x)
        q, k, v = self.query(h), self.key(h), self.value(h)
        scores = matmul(q, transpose(k, (0, 2, 1))) * (1.0 / np.sqrt(self.width))
        return x + self.proj(matmul(softmax(scores, axis=-1), v))


class ModulatedBlock(Module):
    """LN(x)·(1 + scale) + shift → MLP(SiLU) → x + gate·h; shift/scale/gate from the time embedding"""

    def __init__(self, width: int, embed_width: int, rng: Rng):
        self.width = width
        self.modulation = Linear(embed_width, 3 * width, rng)
        self.mlp_in = Linear(width, width, rng)
        self.mlp_out = Linear(width, width, rng)

    def __call__(self, x: Tensor, emb: Tensor) -> Tensor:
        w = self.width
        mod = reshape(self.modulation(silu(emb)), (emb.shape[0], 1, 3 * w))
        shift, scale, gate = mod[:, :, :w], mod[:, :, w:2 * w], mod[:, :, 2 * w:]
        h = layer_norm(x) * (scale + 1.0) + shift
        h = self.mlp_out(silu(self.mlp_in(h)))
        return x + gate * h


class FlowNet(Module):
    """
    Velocity field v_θ(z_t, t) on latent tokens

    Tokens share weights; t enters only through the embedding. The output
    projection starts at zero, so a fresh net is the zero field.
    """

    def __init__(self, latent_dim: int, cfg: FlowTrainConfig, rng: Rng):
        self.latent_dim = latent_dim
        self.backbone = cfg.backbone
        self.embedder = TimestepEmbedder(cfg.frequencies, cfg.embed_width, rng.child("embedder"))
        self.conditioned = cfg.conditioned
        if cfg.conditioned:
            self.condition_proj = Linear(latent_dim, cfg.embed_width, rng.child("condition"))
        if cfg.backbone == "modulated":
            self.in_proj = Linear(latent_dim, cfg.width, rng.child("in_proj"))
            self.attention = TokenAttention(cfg.width, rng.child("attention")) if cfg.token_attention else None
            self.block = ModulatedBlock(cfg.width, cfg.embed_width, rng.child("block"))
            self.out_proj = Linear(cfg.width, latent_dim, rng.child("out_proj"), zero_init=True)
        elif cfg.backbone == "plain_mlp":
            self.hidden = Linear(latent_dim + cfg.embed_width, cfg.width, rng.child("hidden"))
            self.out_proj = Linear(cfg.width, latent_dim, rng.child("out_proj"), zero_init=True)
        else:
            raise ConfigError(f"unknown backbone: {cfg.backbone}")

    def velocity(self, z_t, t, condition=None) -> Tensor:
        """
        Args:
            z_t: (B, M, latent_dim)
            t: (B,) timesteps, one per item
            condition: (B, latent_dim) class latents; required iff the net is conditioned
        Returns:
            v̂: (B, M, latent_dim)
        """
        z_t = z_t if isinstance(z_t, Tensor) else Tensor(z_t)
        if z_t.ndim != 3 or z_t.shape[2] != self.latent_dim:
            raise ShapeError(f"velocity expects (B, M, {self.latent_dim}), got {z_t.shape}")
        t = np.broadcast_to(np.asarray(t, dtype=np.float64).reshape(-1), (z_t.shape[0],))
        B, M, _ = z_t.shape
        emb = self.embedder(t)
        if self.conditioned:
            if condition is None:
                raise ShapeError("conditioned velocity field needs one class latent per item")
            condition = np.asarray(condition, dtype=np.float64)
            if condition.shape != (B, self.latent_dim):
                raise ShapeError(f"condition must be ({B}, {self.latent_dim}), got {condition.shape}")
            emb = emb + self.condition_proj(condition)

        if self.backbone == "plain_mlp":
            emb_tokens = broadcast_to(reshape(emb, (B, 1, emb.shape[1])), (B, M, emb.shape[1]))
            h = silu(self.hidden(concat([z_t, emb_tokens], axis=-1)))
            return self.out_proj(h)

        x = self.in_proj(z_t)
        if self.attention is not None:
            x = self.attention(x)
        x = self.block(x, emb)
        return self.out_proj(x)


def velocity_forward(net: FlowNet, z_t, t: float, condition=None) -> np.ndarray:
    """v̂ for one item (M × latent_dim) at a scalar t"""
    z_t = np.asarray(z_t, dtype=np.float64)
    if z_t.ndim != 2 or z_t.shape[1] != net.latent_dim:
        raise ShapeError(f"velocity_forward expects (M, {net.latent_dim}), got {z_t.shape}")
    condition = None if condition is None else np.asarray(condition, dtype=np.float64)[None]
    return net.velocity(z_t[None], [t], condition).data[0]


# ============= LOSS =============

def negative_partners(labels: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """j = (i + 1) mod B, with a mask that drops same-class pairs"""
    labels = np.asarray(labels)
    partner = (np.arange(labels.shape[0]) + 1) % labels.shape[0]
    return partner, labels[partner] != labels


def conflow_loss(net: FlowNet, z0: np.ndarray, z1: np.ndarray, labels: np.ndarray, rng: Optional[Rng],
                 cfg: FlowTrainConfig, timesteps: Optional[np.ndarray] = None,
                 condition: Optional[np.ndarray] = None) -> Tuple[Tensor, Dict[str, float]]:
    """
    Contrastive flow-matching loss over one batch

    Args:
        net: velocity network
        z0: source latents (B, M, L)
        z1: target latents (B, M, L)
        labels: class id per item, for the negative mask
        rng: stream for the per-item timesteps (unused when `timesteps` is given)
        cfg: flow section (λ_Flow, σ_min, sampler)
        timesteps: optional fixed t per item
        condition: class latent per item, for a conditioned net

    Returns:
        (scalar loss, breakdown)
    """
    z0, z1 = _check_pair(z0, z1)
    B = z0.shape[0]
    if B == 0:
        raise EmptyBatchError("flow batch is empty")
    if B < 2 and cfg.lambda_flow > 0:
        raise EmptyBatchError(f"contrastive term needs a batch of at least 2 items, got {B}")

    t = sample_timesteps(rng, B, cfg.timestep_sampler) if timesteps is None else np.asarray(timesteps, dtype=np.float64)
    z_t = interpolate(z0, z1, t, cfg.sigma_min)
    target = gt_velocity(z0, z1, cfg.sigma_min)
    v_hat = net.velocity(z_t, t, condition)

    positive = square(v_hat - target).sum(axis=(1, 2))
    flow_term = positive.mean()
    breakdown = {"flow": flow_term.item(), "contrastive": 0.0, "negative_pairs": 0}
    if cfg.lambda_flow == 0:
        breakdown["loss"] = breakdown["flow"]
        return flow_term, breakdown

    partner, mask = negative_partners(labels)
    negative = square(v_hat - target[partner]).sum(axis=(1, 2)) * mask.astype(np.float64)
    loss = (positive - negative * cfg.lambda_flow).mean()
    breakdown.update({
        "contrastive": float(negative.data.sum() / B),
        "negative_pairs": int(mask.sum()),
        "loss": loss.item(),
    })
    return loss, breakdown


# ============= TRAINING =============

@dataclass
class FlowTraceRow:
    iteration: int
    loss: float
    flow: float
    contrastive: float


def flow_endpoints(pair: VaePair, skeleton_features: np.ndarray, labels: np.ndarray, semantic: FeaturePack,
                   direction: str = "semantic_to_skeleton") -> Tuple[np.ndarray, np.ndarray]:
    """(z0, z1) per item from mean-mode latents"""
    z_s = skeleton_latents(pair, skeleton_features, semantic.n_tokens)
    z_a = semantic_latents(pair, semantic)[np.asarray(labels, dtype=np.int64)]
    if direction == "semantic_to_skeleton":
        return z_a, z_s
    if direction == "skeleton_to_semantic":
        return z_s, z_a
    raise ConfigError(f"unknown flow direction: {direction}")


def class_conditions(pair: VaePair, semantic: FeaturePack, labels: np.ndarray) -> np.ndarray:
    """Token-mean semantic latent of each item's class, (n, latent_dim)"""
    return semantic_latents(pair, semantic).mean(axis=1)[np.asarray(labels, dtype=np.int64)]


def training_source(z0: np.ndarray, cfg: FlowTrainConfig, rng: Rng) -> np.ndarray:
    """The batch's flow source under cfg.source; 'latent' draws nothing"""
    if cfg.source == "latent":
        return z0
    noise = rng.normal(z0.shape, purpose="source_noise")
    if cfg.source == "noisy_latent":
        return z0 + cfg.source_noise * noise
    if cfg.source == "noise":
        return noise
    raise ConfigError(f"unknown flow source: {cfg.source}")


def train_flow(net: FlowNet, pair: VaePair, skeleton: FeaturePack, semantic: FeaturePack, split: SplitSpec,
               cfg: FlowTrainConfig, rng: Rng, train_indices: Optional[np.ndarray] = None
               ) -> Tuple[FlowNet, List[FlowTraceRow]]:
    """
    Optimize the contrastive flow loss with the VAEs frozen

    Raises:
        FrozenModelError: `pair` was not frozen first
    """
    if not pair.frozen or any(p.requires_grad for p in pair.parameters()):
        raise FrozenModelError("stage-2 training needs a frozen VaePair (call pair.freeze())")
    items = seen_training_items(skeleton, split, train_indices)
    if items.size == 0:
        raise EmptyBatchError("no seen-class training samples")

    labels = skeleton.labels[items].astype(np.int64)
    z0_all, z1_all = flow_endpoints(pair, skeleton.features[items], labels, semantic, cfg.direction)
    conditions = class_conditions(pair, semantic, labels) if net.conditioned else None
    optimizer = AdamW(net.parameters(), lr=cfg.lr, weight_decay=cfg.weight_decay)
    trace: List[FlowTraceRow] = []

    logger.info(
        f"🚀 Flow stage: {cfg.iterations} iterations, batch {cfg.batch}, λ_Flow={cfg.lambda_flow}, "
        f"{cfg.backbone} backbone, {cfg.direction}, source={cfg.source}"
        f"{', conditioned' if net.conditioned else ''}, lr schedule {cfg.lr_schedule}"
    )
    for iteration in range(cfg.iterations):
        batch = sample_batch(rng, items.size, cfg.batch)
        if cfg.lr_schedule == "cosine":
            optimizer.set_lr(cosine_lr(cfg.lr, iteration, cfg.iterations))
        z0 = training_source(z0_all[batch], cfg, rng)
        condition = None if conditions is None else conditions[batch]
        optimizer.zero_grad()
        with ComputationTape() as tape:
            loss, parts = conflow_loss(net, z0, z1_all[batch], labels[batch], rng, cfg, condition=condition)
        backward(tape, loss)
        optimizer.step()

        trace.append(FlowTraceRow(iteration, parts["loss"], parts["flow"], parts["contrastive"]))
        if iteration == 0 or (iteration + 1) % cfg.log_every == 0 or iteration == cfg.iterations - 1:
            logger.info(
                f"   [{iteration + 1}/{cfg.iterations}] loss={parts['loss']:.4f} flow={parts['flow']:.4f} "
                f"neg={parts['contrastive']:.4f} ({parts['negative_pairs']} pairs)"
            )

    if trace:
        logger.info(f"✅ Flow stage done: loss {trace[0].loss:.4f} → {trace[-1].loss:.4f}")
    return net, trace


def write_flow_trace(trace: Sequence[FlowTraceRow], path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = ["iter,loss,flow,contrastive"]
    lines += [f"{r.iteration},{r.loss!r},{r.flow!r},{r.contrastive!r}" for r in trace]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path
