import numpy as np
import pytest

from flora.baselines import (
    LinearClassifier,
    baseline_linear,
    baseline_similarity,
    similarity_predictions,
    synthesize_skeletons,
)
from flora.config import PredictConfig
from flora.core.rng import Rng
from flora.cross_modal_vae import VaePair
from flora.errors import EmptyBatchError, EmptyCandidateError, FrozenModelError, NumericError


def _tok(*rows):
    """(C, 1, L) latents from plain vectors"""
    return np.array(rows, dtype=np.float64)[:, None, :]


def test_identical_candidate_wins():
    z = np.array([[0.3, -0.2, 0.9]])
    candidates = np.concatenate([_tok([1.0, 0.0, 0.0]), z[None]])
    assert baseline_similarity(z, candidates) == 1


def test_orthogonal_candidate_loses():
    assert baseline_similarity(np.array([[0.0, 1.0]]), _tok([1.0, 0.0], [0.0, 1.0])) == 1


def test_closer_angle_wins():
    assert baseline_similarity(np.array([[1.0, 1.0]]), _tok([1.0, 0.0], [1.0, 1.0]), [4, 9]) == 9


def test_tokens_are_mean_pooled():
    z = np.array([[1.0, 0.0], [0.0, 1.0]])
    candidates = np.array([[[1.0, 0.0], [1.0, 0.0]], [[2.0, 2.0], [0.0, 0.0]]])
    assert baseline_similarity(z, candidates) == 1


def test_similarity_ties_go_to_lower_id():
    candidates = _tok([1.0, 0.0], [2.0, 0.0])
    np.testing.assert_array_equal(similarity_predictions(_tok([1.0, 0.5]), candidates, [8, 3]), [3])


def test_similarity_errors():
    with pytest.raises(EmptyCandidateError):
        baseline_similarity(np.ones((1, 2)), np.zeros((0, 1, 2)))
    with pytest.raises(NumericError):
        baseline_similarity(np.zeros((1, 2)), _tok([1.0, 0.0]))


def test_linear_classifier_separates_clusters():
    gen = np.random.default_rng(0)
    centres = np.array([[5.0, 0.0, 0.0], [0.0, 5.0, 0.0], [0.0, 0.0, 5.0]])
    targets = np.repeat(np.arange(3), 20)
    features = centres[targets] + 0.1 * gen.standard_normal((60, 3))
    classifier = LinearClassifier(3, [10, 20, 30], Rng(0)).fit(features, targets, iterations=200, lr=0.05)
    np.testing.assert_array_equal(classifier.predict(features), classifier.class_ids[targets])


def test_linear_classifier_ignores_directions_without_training_variance():
    gen = np.random.default_rng(1)
    targets = np.repeat(np.arange(2), 10)
    features = np.zeros((20, 3))
    features[:, 0] = np.where(targets == 0, -1.0, 1.0) + 0.1 * gen.standard_normal(20)
    features[:, 1] = 2.0
    classifier = LinearClassifier(3, [0, 1], Rng(0)).fit(features, targets, iterations=100, lr=0.05)
    np.testing.assert_array_equal(classifier.linear.weight.data[1:], 0.0)
    shifted = features.copy()
    shifted[:, 1:] = gen.standard_normal((20, 2)) * 1e6
    np.testing.assert_array_equal(classifier.scores(shifted), classifier.scores(features))


def test_linear_classifier_needs_data():
    with pytest.raises(EmptyBatchError):
        LinearClassifier(2, [0, 1], Rng(0)).fit(np.zeros((0, 2)), np.zeros(0), iterations=1, lr=0.1)


@pytest.fixture
def frozen_pair(tiny_data):
    skeleton, semantic, _ = tiny_data
    return VaePair(skeleton.dim, semantic.dim, 8, 3, Rng(2)).freeze()


def test_synthesis_shapes(frozen_pair, tiny_data):
    skeleton, semantic, split = tiny_data
    features, targets = synthesize_skeletons(frozen_pair, semantic, split.unseen_class_ids, 5, Rng(1))
    assert features.shape == (5 * len(split.unseen_class_ids), skeleton.dim)
    np.testing.assert_array_equal(np.bincount(targets), [5] * len(split.unseen_class_ids))
    with pytest.raises(EmptyBatchError):
        synthesize_skeletons(frozen_pair, semantic, split.unseen_class_ids, 0, Rng(1))


def test_linear_baseline_is_deterministic(frozen_pair, tiny_data):
    skeleton, semantic, split = tiny_data
    cfg = PredictConfig(n_synth=6, linear_iterations=20)
    first = baseline_linear(frozen_pair, semantic, split.unseen_class_ids, Rng(5), cfg)
    second = baseline_linear(frozen_pair, semantic, split.unseen_class_ids, Rng(5), cfg)
    x = skeleton.features[:, 0, :]
    np.testing.assert_array_equal(first.scores(x), second.scores(x))
    assert set(first.predict(x)) <= set(split.unseen_class_ids)


def test_linear_baseline_needs_frozen_pair(tiny_data):
    skeleton, semantic, split = tiny_data
    pair = VaePair(skeleton.dim, semantic.dim, 8, 3, Rng(2))
    with pytest.raises(FrozenModelError):
        baseline_linear(pair, semantic, split.unseen_class_ids, Rng(5), PredictConfig())
