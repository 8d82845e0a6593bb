"""
Synthetic cross-modal benchmark
===============================

Stands in for pretrained skeleton/text encoder features. Per class c:

- semantic anchor A_c (M_a × d_a): a low-rank class factor u_c mapped to
  d_a dims, plus per-token jitter of scale `token_spread`
- skeleton centroid: coupling · P(pool(A_c)) + (1 − coupling) · n_c, with P
  a fixed random linear map and n_c independent class noise
- skeleton samples: centroid + cluster_spread · N(0, I)

Everything is drawn from one seeded stream, so the output depends only on
the config (seed included).
"""

import logging
from typing import List, Tuple

import numpy as np

from flora.config import DataConfig, SyntheticConfig
from flora.core.rng import Rng
from flora.feature_pack import FeaturePack, PackKind
from flora.splits import SplitSpec, make_split

logger = logging.getLogger("flora.data")


def generate_synthetic(cfg: SyntheticConfig) -> Tuple[FeaturePack, FeaturePack, SplitSpec]:
    """
    Draw a skeleton pack, a semantic pack and a seen/unseen split

    Returns:
        (skeleton pack with M=1, semantic pack with M=M_a, split)
    """
    cfg = SyntheticConfig.model_validate(cfg.model_dump())
    rng = Rng(cfg.seed).child("synthetic")
    C, r = cfg.n_classes, cfg.intrinsic_dim

    factors = rng.normal((C, r), purpose="class_factors")
    basis = rng.normal((r, cfg.d_a), purpose="semantic_basis") / np.sqrt(r)
    jitter = rng.normal((C, cfg.M_a, cfg.d_a), purpose="token_jitter")
    anchors = (factors @ basis)[:, None, :] + cfg.token_spread * jitter

    modality_map = rng.normal((cfg.d_a, cfg.d_s), purpose="modality_map") / np.sqrt(cfg.d_a)
    pooled = anchors.mean(axis=1)
    image = pooled @ modality_map
    class_noise = rng.normal((C, cfg.d_s), purpose="class_noise")
    coupling = cfg.semantic_skeleton_coupling
    centroids = coupling * image + (1.0 - coupling) * class_noise

    spc = cfg.samples_per_class
    labels = np.repeat(np.arange(C), spc)
    sample_noise = rng.normal((C * spc, cfg.d_s), purpose="sample_noise")
    samples = centroids[labels] + cfg.cluster_spread * sample_noise

    unseen = np.sort(rng.permutation(C, purpose="split")[:cfg.n_unseen])
    split = make_split(unseen.tolist(), C)

    names = [f"class_{c:03d}" for c in range(C)]
    skeleton = FeaturePack(PackKind.SKELETON, samples[:, None, :].astype(np.float32), labels, names).validate()
    semantic = FeaturePack(PackKind.SEMANTIC, anchors.astype(np.float32), np.arange(C), names).validate()

    logger.info(
        f"🧪 Synthetic benchmark: {C} classes ({cfg.n_unseen} unseen), "
        f"{skeleton.n_items} skeleton samples d_s={cfg.d_s}, semantics {cfg.M_a}×{cfg.d_a}"
    )
    return skeleton, semantic, split


def nearest_centroid_accuracy(skeleton: FeaturePack, class_ids) -> float:
    """
    Separability oracle: classify every sample of `class_ids` to the
    nearest empirical class centroid among `class_ids`
    """
    class_ids = np.asarray(sorted(class_ids))
    features = skeleton.features[:, 0, :].astype(np.float64)
    mask = np.isin(skeleton.labels, class_ids)
    x, y = features[mask], skeleton.labels[mask].astype(np.int64)
    if x.shape[0] == 0:
        return 0.0
    centroids = np.stack([x[y == c].mean(axis=0) for c in class_ids])
    distances = ((x[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)
    predicted = class_ids[np.argmin(distances, axis=1)]
    return float(np.mean(predicted == y))


def partition_samples(skeleton: FeaturePack, split: SplitSpec, cfg: DataConfig) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    Deterministic D_tr^s / D_te^s / D_te^u index sets

    For each seen class (pack order) the last `holdout_fraction` of its
    samples are held out for seen-class testing; of the remainder the first
    ⌈train_fraction · n⌉ are used for training. Unseen samples are test-only.

    Returns:
        (train_idx, seen_test_idx, unseen_test_idx)
    """
    train: List[int] = []
    seen_test: List[int] = []
    for c in split.seen_class_ids:
        idx = np.flatnonzero(skeleton.labels == c)
        if idx.size == 0:
            continue
        n_hold = int(np.floor(cfg.holdout_fraction * idx.size))
        if cfg.holdout_fraction > 0 and idx.size > 1:
            n_hold = max(n_hold, 1)
        keep, held = idx[:idx.size - n_hold], idx[idx.size - n_hold:]
        n_train = max(1, int(np.ceil(cfg.train_fraction * keep.size))) if keep.size else 0
        train.extend(keep[:n_train].tolist())
        seen_test.extend(held.tolist())

    unseen_test = np.flatnonzero(np.isin(skeleton.labels, split.unseen_class_ids))
    return np.asarray(train, dtype=np.int64), np.asarray(seen_test, dtype=np.int64), unseen_test.astype(np.int64)
