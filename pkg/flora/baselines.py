"""
Baseline classifiers
====================

- similarity: cosine between token-pooled skeleton and semantic latents
- linear: decode sampled unseen semantic latents through the skeleton
  decoder, then fit a softmax linear classifier on the synthesized features
"""

import logging
from typing import Optional, Sequence, Tuple

import numpy as np

from flora.config import PredictConfig
from flora.core.nn import Linear, Module
from flora.core.optim import AdamW
from flora.core.rng import Rng
from flora.core.tensor import ComputationTape, backward, log_softmax
from flora.cross_modal_vae import VaePair, decode, encode
from flora.errors import EmptyBatchError, EmptyCandidateError, FrozenModelError, NumericError, ShapeError
from flora.feature_pack import FeaturePack

logger = logging.getLogger("flora.predict")


def _unit_rows(pooled: np.ndarray, what: str) -> np.ndarray:
    norms = np.linalg.norm(pooled, axis=1)
    if np.any(norms == 0):
        raise NumericError(f"zero-norm pooled {what} latent")
    return pooled / norms[:, None]


def similarity_scores(z_s: np.ndarray, candidates: np.ndarray) -> np.ndarray:
    """Cosine of token-mean-pooled latents: (N, M, L) × (C, M, L) → (N, C)"""
    z_s = np.asarray(z_s, dtype=np.float64)
    candidates = np.asarray(candidates, dtype=np.float64)
    return _unit_rows(z_s.mean(axis=1), "skeleton") @ _unit_rows(candidates.mean(axis=1), "candidate").T


def baseline_similarity(z_s: np.ndarray, candidates: np.ndarray, candidate_ids: Optional[Sequence[int]] = None) -> int:
    """argmax cosine for one (M, L) skeleton latent; ties → lower class id"""
    candidates = np.asarray(candidates, dtype=np.float64)
    if candidates.shape[0] == 0:
        raise EmptyCandidateError("no candidate classes")
    ids = np.arange(candidates.shape[0]) if candidate_ids is None else np.asarray(candidate_ids, dtype=np.int64)
    return int(similarity_predictions(np.asarray(z_s)[None], candidates, ids)[0])


def similarity_predictions(z_s: np.ndarray, candidates: np.ndarray, candidate_ids: Sequence[int]) -> np.ndarray:
    ids = np.asarray(candidate_ids, dtype=np.int64)
    if ids.size == 0:
        raise EmptyCandidateError("no candidate classes")
    order = np.argsort(ids, kind="stable")
    scores = similarity_scores(z_s, np.asarray(candidates)[order])
    return ids[order][np.argmax(scores, axis=1)]


class LinearClassifier(Module):
    """
    Softmax regression on centred raw skeleton features

    Weights start at zero and features share one pooled scale, so a feature
    direction the training data never varies along keeps a zero weight.
    """

    def __init__(self, in_features: int, class_ids: Sequence[int], rng: Rng):
        self.class_ids = np.asarray(class_ids, dtype=np.int64)
        self.linear = Linear(in_features, len(class_ids), rng, zero_init=True)
        self.mean = np.zeros(in_features)
        self.scale = 1.0

    def _standardize(self, features: np.ndarray) -> np.ndarray:
        return (np.asarray(features, dtype=np.float64) - self.mean) / self.scale

    def scores(self, features: np.ndarray) -> np.ndarray:
        return self.linear(self._standardize(features)).data

    def predict(self, features: np.ndarray) -> np.ndarray:
        return self.class_ids[np.argmax(self.scores(features), axis=1)]

    def fit(self, features: np.ndarray, targets: np.ndarray, iterations: int, lr: float) -> "LinearClassifier":
        """Full-batch cross-entropy with AdamW; `targets` are column indices into class_ids"""
        features = np.asarray(features, dtype=np.float64)
        if features.shape[0] == 0:
            raise EmptyBatchError("no training features for the linear classifier")
        self.mean = features.mean(axis=0)
        self.scale = float(np.sqrt(features.var(axis=0).mean())) + 1e-8
        x = self._standardize(features)
        onehot = np.eye(len(self.class_ids))[np.asarray(targets, dtype=np.int64)]
        optimizer = AdamW(self.parameters(), lr=lr, weight_decay=0.0)
        loss = None
        for _ in range(iterations):
            optimizer.zero_grad()
            with ComputationTape() as tape:
                loss = -(log_softmax(self.linear(x), axis=1) * onehot).sum(axis=1).mean()
            backward(tape, loss)
            optimizer.step()
        if loss is not None:
            logger.debug(f"linear classifier: final cross-entropy {loss.item():.4f}")
        return self


def synthesize_skeletons(pair: VaePair, semantic: FeaturePack, class_ids: Sequence[int], n_synth: int,
                         rng: Rng) -> Tuple[np.ndarray, np.ndarray]:
    """
    n_synth pseudo skeleton features per class: z ~ q(z | O_a) → skeleton
    decoder → token mean

    Returns:
        (features (n_classes·n_synth, d_s), column index per row)
    """
    if n_synth <= 0:
        raise EmptyBatchError(f"n_synth must be positive, got {n_synth}")
    features, targets = [], []
    for column, c in enumerate(class_ids):
        tokens = np.repeat(semantic.features[c].astype(np.float64), n_synth, axis=0)
        _, z = encode(pair.semantic, tokens, rng, mode="sample")
        decoded = decode(pair.skeleton, z).data.reshape(semantic.n_tokens, n_synth, -1)
        features.append(decoded.mean(axis=0))
        targets.append(np.full(n_synth, column))
    return np.concatenate(features), np.concatenate(targets)


def baseline_linear(pair: VaePair, semantic: FeaturePack, class_ids: Sequence[int], rng: Rng,
                    cfg: PredictConfig) -> LinearClassifier:
    """
    Train a linear classifier over `class_ids` (the unseen classes for ZSL)
    from synthesized skeletons

    Raises:
        FrozenModelError: the VAE pair was not frozen after training
    """
    if not pair.frozen:
        raise FrozenModelError("baseline_linear needs a trained, frozen VaePair")
    class_ids = sorted(int(c) for c in class_ids)
    if not class_ids:
        raise EmptyCandidateError("no classes to synthesize")
    features, targets = synthesize_skeletons(pair, semantic, class_ids, cfg.n_synth, rng.child("synthesis"))
    if features.shape[1] != pair.skeleton.input_dim:
        raise ShapeError(f"synthesized width {features.shape[1]} != d_s {pair.skeleton.input_dim}")
    classifier = LinearClassifier(features.shape[1], class_ids, rng.child("linear_init"))
    classifier.fit(features, targets, cfg.linear_iterations, cfg.linear_lr)
    logger.info(
        f"🧩 Linear baseline: {len(class_ids)} classes × {cfg.n_synth} synthesized samples, "
        f"train acc {np.mean(classifier.predict(features) == classifier.class_ids[targets]):.3f}"
    )
    return classifier
