"""
Neighbor Semantic Attunement
============================

Each class's semantic feature F_y (M_a × d) is refined with its top-k most
similar classes (cosine similarity of token-pooled features, the class
itself excluded):

    O_y = F_y + (τ / k) · Σ_i w_i · F_i

Similarities are computed once on the raw features; the pass is not
iterated. w_i are raw cosine scores and may be negative.
"""

import logging
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from flora.errors import ConfigError, InvalidPackError, NumericError, ShapeError
from flora.feature_pack import FeaturePack, PackKind

logger = logging.getLogger("flora.attune")


@dataclass(frozen=True)
class NeighborSet:
    """Top-k neighbors of one anchor class, by descending similarity"""
    anchor: int
    neighbors: Tuple[Tuple[int, float], ...]

    @property
    def ids(self) -> List[int]:
        return [c for c, _ in self.neighbors]

    @property
    def weights(self) -> List[float]:
        return [w for _, w in self.neighbors]


def pool_tokens(features: np.ndarray, pooling: str = "mean") -> np.ndarray:
    """ρ(F): (M, d) → (d,), or (..., M, d) → (..., d)"""
    features = np.asarray(features, dtype=np.float64)
    if features.ndim < 2 or features.shape[-2] == 0:
        raise ShapeError(f"pool_tokens needs at least one token, got shape {features.shape}")
    if pooling == "mean":
        return features.mean(axis=-2)
    if pooling == "max":
        return features.max(axis=-2)
    raise ConfigError(f"unknown pooling: {pooling}")


def cosine_matrix(pooled: np.ndarray) -> np.ndarray:
    pooled = np.asarray(pooled, dtype=np.float64)
    norms = np.linalg.norm(pooled, axis=1)
    if np.any(norms == 0):
        zero = np.flatnonzero(norms == 0).tolist()
        raise NumericError(f"zero-norm pooled feature for classes {zero}")
    unit = pooled / norms[:, None]
    return unit @ unit.T


def topk_neighbors(anchor: int, pooled: np.ndarray, k: int, similarity: Optional[np.ndarray] = None) -> NeighborSet:
    """
    The k classes most cosine-similar to `anchor`, excluding itself

    Ties are broken by lower class index.

    Args:
        anchor: class id y
        pooled: (n_classes, d) pooled features
        k: 1 ≤ k ≤ n_classes − 1
        similarity: optional precomputed cosine matrix
    """
    n_classes = pooled.shape[0]
    if not 1 <= k <= n_classes - 1:
        raise ConfigError(f"k must lie in [1, {n_classes - 1}], got {k}")
    sims = cosine_matrix(pooled)[anchor] if similarity is None else similarity[anchor]

    candidates = np.array([c for c in range(n_classes) if c != anchor])
    order = np.lexsort((candidates, -sims[candidates]))
    chosen = candidates[order[:k]]
    return NeighborSet(anchor, tuple((int(c), float(sims[c])) for c in chosen))


def attune(features: np.ndarray, neighbors: NeighborSet, all_features: np.ndarray, tau: float, k: int) -> np.ndarray:
    """
    O_y = F_y + (τ/k) · Σ w_i · F_i  (token-wise)

    Args:
        features: F_y, (M_a, d)
        neighbors: top-k set of the anchor
        all_features: raw features of every class, (n_classes, M_a, d)
        tau: smoothing coefficient τ
        k: neighbor count used for the τ/k scale
    """
    features = np.asarray(features, dtype=np.float64)
    all_features = np.asarray(all_features, dtype=np.float64)
    if all_features.shape[1:] != features.shape:
        raise ShapeError(f"class features {all_features.shape[1:]} do not match anchor {features.shape}")
    aggregate = np.zeros_like(features)
    for class_id, weight in neighbors.neighbors:
        aggregate += weight * all_features[class_id]
    return features + (tau / k) * aggregate


def attune_pack(pack: FeaturePack, k: int, tau: float, pooling: str = "mean",
                tokens: Optional[int] = None) -> FeaturePack:
    """
    Attune every class of a semantic pack

    k = 0 (or τ = 0) skips aggregation; `tokens` keeps only the first M
    tokens of every class before attunement. Attuned features are float64;
    they round to float32 only when written to disk.
    """
    if pack.kind is not PackKind.SEMANTIC:
        raise InvalidPackError("attunement applies to semantic packs only")
    kept = pack.features if tokens is None else pack.features[:, :tokens, :]

    if k == 0 or tau == 0:
        logger.info(f"⏭️  Attunement skipped (k={k}, τ={tau})")
        return FeaturePack(PackKind.SEMANTIC, kept, pack.labels, pack.class_names)

    raw = kept.astype(np.float64)

    pooled = pool_tokens(raw, pooling)
    similarity = cosine_matrix(pooled)
    attuned = np.empty_like(raw)
    mean_weight = []
    for y in range(raw.shape[0]):
        neighbors = topk_neighbors(y, pooled, k, similarity)
        attuned[y] = attune(raw[y], neighbors, raw, tau, k)
        mean_weight.append(np.mean(neighbors.weights))

    logger.info(
        f"🧭 Attuned {raw.shape[0]} classes (k={k}, τ={tau}, M={raw.shape[1]}), "
        f"mean neighbor similarity {np.mean(mean_weight):.3f}"
    )
    return FeaturePack(PackKind.SEMANTIC, attuned, pack.labels, pack.class_names)
