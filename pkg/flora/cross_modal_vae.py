"""
Cross-modal VAE alignment (learning phase)
==========================================

Two VAEs, one per modality, share a latent width. Per batch item the
skeleton feature is replicated along the token axis to M_a rows so both
modalities are encoded token-wise:

    L_Re    = Σ over {s→s, a→a, s→a, a→s} of MSE(decoder(z), x)
    L_Geo   = (‖μ_s − μ_a‖² + ‖σ_s² − σ_a²‖²) / B
    L_Align = L_Re + λ_Align · L_Geo           (reg_mode='geo')
            = L_Re + β · KL(q ‖ N(0, I))       (reg_mode='kl')
            = L_Re                             (reg_mode='none')

Only seen-class samples are ever used for training.
"""

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from flora.config import AlignConfig
from flora.core.nn import Linear, Module
from flora.core.optim import AdamW
from flora.core.rng import Rng, sample_standard_normal
from flora.core.tensor import ComputationTape, Tensor, backward, clip, exp, square
from flora.errors import ConfigError, DataError, EmptyBatchError, ShapeError
from flora.feature_pack import FeaturePack
from flora.splits import SplitSpec

logger = logging.getLogger("flora.align")

LOGVAR_RANGE = (-10.0, 10.0)


class Vae(Module):
    """Two-layer MLP encoder (→ μ, logvar) and two-layer MLP decoder, ReLU hidden"""

    def __init__(self, input_dim: int, hidden: int, latent_dim: int, rng: Rng):
        self.input_dim = input_dim
        self.latent_dim = latent_dim
        self.enc_hidden = Linear(input_dim, hidden, rng)
        self.enc_out = Linear(hidden, 2 * latent_dim, rng)
        self.dec_hidden = Linear(latent_dim, hidden, rng)
        self.dec_out = Linear(hidden, input_dim, rng)


class VaePair(Module):
    """Skeleton VAE (d_s) + semantic VAE (d_a) with a shared latent width"""

    def __init__(self, d_s: int, d_a: int, hidden: int, latent_dim: int, rng: Rng):
        self.skeleton = Vae(d_s, hidden, latent_dim, rng.child("skeleton_vae"))
        self.semantic = Vae(d_a, hidden, latent_dim, rng.child("semantic_vae"))
        self.latent_dim = latent_dim
        self.frozen = False

    @classmethod
    def from_config(cls, d_s: int, d_a: int, cfg: AlignConfig, rng: Rng) -> "VaePair":
        return cls(d_s, d_a, cfg.hidden, cfg.latent_dim, rng)

    def freeze(self) -> "VaePair":
        self.set_requires_grad(False)
        self.frozen = True
        return self


@dataclass
class LatentStats:
    """μ and clamped logvar, one row per token"""
    mu: Tensor
    logvar: Tensor

    @property
    def variance(self) -> Tensor:
        return exp(self.logvar)


def expand_skeleton(features: np.ndarray, M_a: int) -> np.ndarray:
    """(1, d_s) → (M_a, d_s); batched (B, 1, d_s) → (B, M_a, d_s)"""
    features = np.asarray(features)
    if M_a < 1:
        raise ShapeError(f"M_a must be >= 1, got {M_a}")
    return np.repeat(features, M_a, axis=-2)


def encode(vae: Vae, x, rng: Optional[Rng] = None, mode: str = "sample") -> Tuple[LatentStats, Tensor]:
    """
    q(z | x) with the reparameterization trick

    Args:
        vae: modality VAE
        x: (rows, input_dim)
        rng: stream for ε (unused in mean mode)
        mode: 'sample' → z = μ + exp(logvar/2)·ε; 'mean' → z = μ
    """
    x = x if isinstance(x, Tensor) else Tensor(x)
    if x.ndim != 2 or x.shape[1] != vae.input_dim:
        raise ShapeError(f"encoder expects (rows, {vae.input_dim}), got {x.shape}")
    out = vae.enc_out(vae.enc_hidden(x).relu())
    L = vae.latent_dim
    mu = out[:, :L]
    logvar = clip(out[:, L:], *LOGVAR_RANGE)
    stats = LatentStats(mu, logvar)
    if mode == "mean":
        return stats, mu
    if mode != "sample":
        raise ConfigError(f"unknown encode mode: {mode}")
    eps = sample_standard_normal(rng, mu.shape, purpose="reparameterization")
    return stats, mu + exp(logvar * 0.5) * eps


def decode(vae: Vae, z) -> Tensor:
    z = z if isinstance(z, Tensor) else Tensor(z)
    if z.ndim != 2 or z.shape[1] != vae.latent_dim:
        raise ShapeError(f"decoder expects (rows, {vae.latent_dim}), got {z.shape}")
    return vae.dec_out(vae.dec_hidden(z).relu())


def encode_mean(vae: Vae, items: np.ndarray, chunk: int = 4096) -> np.ndarray:
    """Mean-mode latents for (n, M, d) inputs → (n, M, latent_dim), no tape"""
    items = np.asarray(items, dtype=np.float64)
    n, M, d = items.shape
    rows = items.reshape(n * M, d)
    out = np.empty((n * M, vae.latent_dim))
    for start in range(0, n * M, chunk):
        _, z = encode(vae, rows[start:start + chunk], mode="mean")
        out[start:start + chunk] = z.data
    return out.reshape(n, M, vae.latent_dim)


def _mse(a: Tensor, b) -> Tensor:
    return square(a - b).mean()


@dataclass
class AlignLosses:
    l_re: Tensor
    l_reg: Tensor
    l_align: Tensor
    terms: Dict[str, float] = field(default_factory=dict)


def alignment_losses(pair: VaePair, skeleton_batch: np.ndarray, semantic_batch: np.ndarray, rng: Rng,
                     reg: str = "geo", beta: float = 1.0, lambda_align: float = 0.1) -> AlignLosses:
    """
    Reconstruction + regularizer for one batch

    Args:
        pair: the two VAEs
        skeleton_batch: expanded skeleton features F̂_s, (B, M_a, d_s)
        semantic_batch: attuned semantics O_a of each item's class, (B, M_a, d_a)
        rng: stream for the reparameterization noise
        reg: 'geo' | 'kl' | 'none'
        beta: KL weight (kl mode)
        lambda_align: geometric-consistency weight (geo mode)
    """
    skeleton_batch = np.asarray(skeleton_batch, dtype=np.float64)
    semantic_batch = np.asarray(semantic_batch, dtype=np.float64)
    if skeleton_batch.ndim != 3 or skeleton_batch.shape[0] == 0:
        raise EmptyBatchError(f"alignment batch must be a nonempty (B, M, d) array, got {skeleton_batch.shape}")
    if skeleton_batch.shape[:2] != semantic_batch.shape[:2]:
        raise ShapeError(f"skeleton batch {skeleton_batch.shape} vs semantic batch {semantic_batch.shape}")
    B, M, _ = skeleton_batch.shape

    x_s = Tensor(skeleton_batch.reshape(B * M, -1))
    x_a = Tensor(semantic_batch.reshape(B * M, -1))
    stats_s, z_s = encode(pair.skeleton, x_s, rng, mode="sample")
    stats_a, z_a = encode(pair.semantic, x_a, rng, mode="sample")

    recon = {
        "skeleton_to_skeleton": _mse(decode(pair.skeleton, z_s), x_s),
        "semantic_to_semantic": _mse(decode(pair.semantic, z_a), x_a),
        "skeleton_to_semantic": _mse(decode(pair.semantic, z_s), x_a),
        "semantic_to_skeleton": _mse(decode(pair.skeleton, z_a), x_s),
    }
    l_re = recon["skeleton_to_skeleton"] + recon["semantic_to_semantic"] \
        + recon["skeleton_to_semantic"] + recon["semantic_to_skeleton"]
    terms = {name: value.item() for name, value in recon.items()}

    if reg == "geo":
        l_reg = geometric_consistency(stats_s, stats_a, B)
        l_align = l_re + l_reg * lambda_align
    elif reg == "kl":
        l_reg = (kl_standard_normal(stats_s) + kl_standard_normal(stats_a)) * (1.0 / B)
        l_align = l_re + l_reg * beta
    elif reg == "none":
        l_reg = Tensor(0.0)
        l_align = l_re
    else:
        raise ConfigError(f"unknown reg mode: {reg}")

    terms.update({"L_Re": l_re.item(), "L_reg": l_reg.item(), "L_Align": l_align.item()})
    return AlignLosses(l_re, l_reg, l_align, terms)


def geometric_consistency(stats_s: LatentStats, stats_a: LatentStats, batch_size: int) -> Tensor:
    """(‖μ_s − μ_a‖² + ‖σ_s² − σ_a²‖²) summed over tokens and dims, / B"""
    mean_gap = square(stats_s.mu - stats_a.mu).sum()
    var_gap = square(stats_s.variance - stats_a.variance).sum()
    return (mean_gap + var_gap) * (1.0 / batch_size)


def kl_standard_normal(stats: LatentStats) -> Tensor:
    """KL(N(μ, σ²) ‖ N(0, I)) summed over rows and dims"""
    return ((stats.logvar + 1.0 - square(stats.mu) - stats.variance).sum()) * -0.5


# ============= TRAINING =============

@dataclass
class AlignTraceRow:
    iteration: int
    l_re: float
    l_reg: float
    l_align: float


def seen_training_items(skeleton: FeaturePack, split: SplitSpec, indices: Optional[np.ndarray] = None) -> np.ndarray:
    """Indices of skeleton items usable for training; refuses unseen-class items"""
    present = set(np.unique(skeleton.labels).tolist())
    absent = [c for c in split.seen_class_ids if c not in present]
    if absent:
        raise DataError(f"split references seen classes absent from the skeleton pack: {absent}")
    seen_mask = np.isin(skeleton.labels, split.seen_class_ids)
    if indices is None:
        return np.flatnonzero(seen_mask)
    indices = np.asarray(indices, dtype=np.int64)
    if not np.all(seen_mask[indices]):
        leaked = sorted(set(skeleton.labels[indices[~seen_mask[indices]]].tolist()))
        raise DataError(f"training indices include unseen classes {leaked}")
    return indices


def sample_batch(rng: Rng, n_items: int, batch: int) -> np.ndarray:
    """Without replacement when possible, with replacement otherwise"""
    return rng.choice(n_items, size=batch, replace=n_items < batch, purpose="batch")


def train_align(pair: VaePair, skeleton: FeaturePack, semantic: FeaturePack, split: SplitSpec,
                cfg: AlignConfig, rng: Rng, train_indices: Optional[np.ndarray] = None
                ) -> Tuple[VaePair, List[AlignTraceRow]]:
    """
    Optimize L_Align on seen-class pairs

    Args:
        pair: VAEs to train in place
        skeleton: skeleton pack (M=1)
        semantic: attuned semantic pack (M=M_a)
        split: seen/unseen partition; only seen classes are used
        cfg: align section
        rng: stream for batches and reparameterization
        train_indices: optional subset of skeleton items (D_tr^s)

    Returns:
        (pair, per-iteration loss trace)
    """
    missing = [c for c in split.seen_class_ids if c >= semantic.n_items]
    if missing:
        raise DataError(f"split references classes absent from the semantic pack: {missing}")
    items = seen_training_items(skeleton, split, train_indices)
    if items.size == 0:
        raise EmptyBatchError("no seen-class training samples")

    M_a = semantic.n_tokens
    features = skeleton.features[items].astype(np.float64)
    labels = skeleton.labels[items].astype(np.int64)
    semantics = semantic.features.astype(np.float64)
    optimizer = AdamW(pair.parameters(), lr=cfg.lr, weight_decay=cfg.weight_decay)
    trace: List[AlignTraceRow] = []

    logger.info(
        f"🚀 Align stage: {cfg.iterations} iterations, batch {cfg.batch}, reg={cfg.reg_mode}, "
        f"{items.size} seen samples / {len(split.seen_class_ids)} classes"
    )
    for iteration in range(cfg.iterations):
        batch = sample_batch(rng, items.size, cfg.batch)
        skeleton_batch = expand_skeleton(features[batch], M_a)
        semantic_batch = semantics[labels[batch]]

        optimizer.zero_grad()
        with ComputationTape() as tape:
            losses = alignment_losses(pair, skeleton_batch, semantic_batch, rng,
                                      reg=cfg.reg_mode, beta=cfg.beta, lambda_align=cfg.lambda_align)
        backward(tape, losses.l_align)
        optimizer.step()

        trace.append(AlignTraceRow(iteration, losses.terms["L_Re"], losses.terms["L_reg"], losses.terms["L_Align"]))
        if iteration == 0 or (iteration + 1) % cfg.log_every == 0 or iteration == cfg.iterations - 1:
            logger.info(
                f"   [{iteration + 1}/{cfg.iterations}] L_Re={losses.terms['L_Re']:.4f} "
                f"L_reg={losses.terms['L_reg']:.4f} L_Align={losses.terms['L_Align']:.4f}"
            )

    if trace:
        logger.info(f"✅ Align stage done: L_Align {trace[0].l_align:.4f} → {trace[-1].l_align:.4f}")
    return pair, trace


def smooth_trace(values: Sequence[float], window: int = 20) -> np.ndarray:
    """Trailing moving average; the first entries average what is available"""
    values = np.asarray(values, dtype=np.float64)
    if values.size == 0:
        return values
    cumulative = np.cumsum(np.insert(values, 0, 0.0))
    out = np.empty_like(values)
    for i in range(values.size):
        lo = max(0, i + 1 - window)
        out[i] = (cumulative[i + 1] - cumulative[lo]) / (i + 1 - lo)
    return out


def write_align_trace(trace: Sequence[AlignTraceRow], path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = ["iter,L_Re,L_reg,L_Align"]
    lines += [f"{r.iteration},{r.l_re!r},{r.l_reg!r},{r.l_align!r}" for r in trace]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def latent_centroid_gap(pair: VaePair, skeleton: FeaturePack, semantic: FeaturePack, class_ids: Sequence[int]) -> float:
    """Mean L2 distance between per-class mean-mode latent centroids of the two modalities"""
    M_a = semantic.n_tokens
    gaps = []
    for c in class_ids:
        items = skeleton.features[skeleton.labels == c]
        if items.shape[0] == 0:
            continue
        z_s = encode_mean(pair.skeleton, expand_skeleton(items, M_a)).mean(axis=(0, 1))
        z_a = encode_mean(pair.semantic, semantic.features[c:c + 1]).mean(axis=(0, 1))
        gaps.append(np.linalg.norm(z_s - z_a))
    return float(np.mean(gaps))


def skeleton_latents(pair: VaePair, features: np.ndarray, M_a: int) -> np.ndarray:
    """Mean-mode z_s for raw skeleton items (n, 1, d_s) → (n, M_a, latent_dim)"""
    return encode_mean(pair.skeleton, expand_skeleton(features, M_a))


def semantic_latents(pair: VaePair, semantic: FeaturePack) -> np.ndarray:
    """Mean-mode z_a for every class of an (attuned) semantic pack → (n_classes, M_a, latent_dim)"""
    return encode_mean(pair.semantic, semantic.features)
