import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from flora.config import FlowTrainConfig, PredictConfig
from flora.core.rng import Rng
from flora.errors import ConfigError, EmptyCandidateError, ShapeError
from flora.flow_classifier import (
    argmin_by_id,
    domain_ratio,
    flow_predictions,
    gzsl_decide,
    gzsl_predict,
    velocity_error,
    velocity_errors,
    zsl_predict,
)
from flora.flow_matching import FlowNet


@pytest.fixture
def zero_net():
    """Fresh net: zero output projection, so v̂ ≡ 0"""
    return FlowNet(1, FlowTrainConfig(width=4, embed_width=4, frequencies=2), Rng(0))


def _scalar(x):
    return np.array([[x]])


def test_zero_field_errors_are_gt_speed(zero_net):
    assert velocity_error(zero_net, _scalar(1.0), _scalar(0.5), t=0.1) == pytest.approx(0.500005, abs=1e-12)
    assert velocity_error(zero_net, _scalar(1.0), _scalar(2.0), t=0.1) == pytest.approx(0.99998, abs=1e-12)

    candidates = np.array([[[0.5]], [[2.0]]])
    assert zsl_predict(zero_net, _scalar(1.0), candidates, [3, 4], PredictConfig()) == 3


def test_errors_do_not_depend_on_t_for_zero_field(zero_net):
    z_s = np.array([[[1.0]], [[-0.3]]])
    candidates = np.array([[[0.5]], [[2.0]], [[0.0]]])
    low = velocity_errors(zero_net, z_s, candidates, PredictConfig(), t=0.1)
    high = velocity_errors(zero_net, z_s, candidates, PredictConfig(), t=0.9)
    multi = velocity_errors(zero_net, z_s, candidates, PredictConfig(multi_t=[0.1, 0.5, 0.9]))
    np.testing.assert_allclose(low, high, rtol=1e-15)
    np.testing.assert_allclose(low, multi, rtol=1e-14)
    assert low.shape == (2, 3)


def test_chunking_does_not_change_errors():
    cfg_net = FlowTrainConfig(width=6, embed_width=4, frequencies=2)
    net = FlowNet(2, cfg_net, Rng(1))
    gen = np.random.default_rng(0)
    net.out_proj.weight.assign_(0.5 * gen.standard_normal(net.out_proj.weight.shape))
    z_s = gen.standard_normal((7, 3, 2))
    candidates = gen.standard_normal((4, 3, 2))
    whole = velocity_errors(net, z_s, candidates, PredictConfig(chunk_size=1000))
    pieces = velocity_errors(net, z_s, candidates, PredictConfig(chunk_size=5))
    np.testing.assert_allclose(whole, pieces, rtol=1e-12)


def test_skeleton_to_semantic_direction(zero_net):
    # source is the skeleton latent: v* = z_a − (1 − σ)·z_s
    err = velocity_error(zero_net, _scalar(1.0), _scalar(0.5), t=0.1, direction="skeleton_to_semantic")
    assert err == pytest.approx(abs(0.5 - 0.99999), abs=1e-12)


def test_gzsl_scalar_example(zero_net):
    candidates = np.array([[[0.5]], [[0.9]]])
    errors = velocity_errors(zero_net, np.array([[[1.0]]]), candidates, PredictConfig())
    assert errors[0, 0] == pytest.approx(0.500005, abs=1e-12)
    assert errors[0, 1] == pytest.approx(1.0 - 0.99999 * 0.9, abs=1e-12)
    assert gzsl_predict(zero_net, _scalar(1.0), candidates, [0, 1], [0], PredictConfig(gamma=0.75)) == 1


def test_ties_go_to_lower_id(zero_net):
    candidates = np.array([[[0.5]], [[0.5]]])
    assert zsl_predict(zero_net, _scalar(1.0), candidates, [7, 2], PredictConfig()) == 2
    np.testing.assert_array_equal(argmin_by_id(np.array([[1.0, 1.0, 3.0]]), [5, 1, 0]), [1])


def test_gate_extremes():
    gen = np.random.default_rng(3)
    errors = gen.uniform(0.1, 5.0, (200, 6))
    ids, seen = [0, 1, 2, 3, 4, 5], [0, 2, 4]
    never_seen = gzsl_decide(errors, ids, seen, gamma=0.0, alpha=1e9)
    assert not np.isin(never_seen, seen).any()
    always_seen = gzsl_decide(errors, ids, seen, gamma=1e12, alpha=1e9)
    assert np.isin(always_seen, seen).all()


def test_gate_follows_the_ratio():
    ids, seen = [0, 1], [0]
    # δ_s / δ_u = 0.6 ≤ 0.75: seen class wins
    assert gzsl_decide(np.array([0.6, 1.0]), ids, seen, 0.75, 1e9)[0] == 0
    # the seen class is still chosen even when its raw error is not smaller
    assert gzsl_decide(np.array([1.2, 1.0]), ids, seen, 1.5, 1e9)[0] == 0
    assert gzsl_decide(np.array([0.8, 1.0]), ids, seen, 0.75, 1e9)[0] == 1


def test_gzsl_needs_both_domains():
    with pytest.raises(EmptyCandidateError):
        gzsl_decide(np.ones((1, 2)), [0, 1], [], 0.75, 1e9)
    with pytest.raises(EmptyCandidateError):
        gzsl_decide(np.ones((1, 2)), [0, 1], [0, 1], 0.75, 1e9)


def test_domain_ratio_edges():
    ratio = domain_ratio(np.array([0.0, 1.0, 1.0]), np.array([0.0, 0.0, 4.0]))
    assert ratio[0] == 1.0
    assert np.isinf(ratio[1])
    assert ratio[2] == 0.25


def test_empty_candidates(zero_net):
    with pytest.raises(EmptyCandidateError):
        velocity_errors(zero_net, np.ones((1, 1, 1)), np.zeros((0, 1, 1)), PredictConfig())
    with pytest.raises(EmptyCandidateError):
        zsl_predict(zero_net, _scalar(1.0), np.zeros((0, 1, 1)), [], PredictConfig())
    with pytest.raises(EmptyCandidateError):
        flow_predictions(zero_net, np.ones((1, 1, 1)), np.ones((3, 1, 1)), [], PredictConfig())


def test_shape_mismatch(zero_net):
    with pytest.raises(ShapeError):
        velocity_errors(zero_net, np.ones((1, 2, 1)), np.ones((3, 1, 1)), PredictConfig())
    with pytest.raises(ShapeError):
        velocity_error(zero_net, np.ones((1, 1)), np.ones((2, 1)), t=0.1)


def test_flow_predictions_index_class_latents(zero_net):
    class_latents = np.array([[[5.0]], [[0.5]], [[2.0]], [[1.0]]])
    z_s = np.array([[[1.0]], [[2.0]]])
    np.testing.assert_array_equal(
        flow_predictions(zero_net, z_s, class_latents, [2, 3], PredictConfig()), [3, 2]
    )
    gzsl = flow_predictions(zero_net, z_s, class_latents, [0, 1, 2, 3], PredictConfig(gamma=1e12),
                            protocol="gzsl", seen_ids=[0, 1])
    assert np.isin(gzsl, [0, 1]).all()


positive = st.integers(1, 10**6).map(float)


@settings(max_examples=100, deadline=None)
@given(errors=arrays(np.float64, (4, 5), elements=positive, unique=True))
def test_argmin_is_invariant_under_monotone_maps(errors):
    ids = [4, 0, 3, 1, 2]
    base = argmin_by_id(errors, ids)
    np.testing.assert_array_equal(argmin_by_id(np.log(errors), ids), base)
    np.testing.assert_array_equal(argmin_by_id(3.0 * errors + 7.0, ids), base)


def test_noise_source_scores_against_the_noise_mean(zero_net):
    # z0 = 0, so ε = ‖z_s‖ for every candidate
    assert velocity_error(zero_net, _scalar(1.0), _scalar(0.5), t=0.1, source="noise") == pytest.approx(1.0)
    assert velocity_error(zero_net, _scalar(1.0), _scalar(2.0), t=0.1, source="noise") == pytest.approx(1.0)
    assert velocity_error(zero_net, _scalar(1.0), _scalar(0.5), t=0.1, source="noisy_latent") == pytest.approx(
        velocity_error(zero_net, _scalar(1.0), _scalar(0.5), t=0.1)
    )
    with pytest.raises(ConfigError):
        velocity_error(zero_net, _scalar(1.0), _scalar(0.5), t=0.1, source="uniform")


def test_conditioned_net_scores_each_candidate_with_its_latent():
    net = FlowNet(1, FlowTrainConfig(width=4, embed_width=4, frequencies=2, conditioned=True), Rng(0))
    gen = np.random.default_rng(3)
    for p in (net.out_proj.weight, net.out_proj.bias):
        p.assign_(gen.standard_normal(p.shape))
    z_s = np.ones((1, 1, 1))
    candidates = np.array([[[0.0]], [[2.0]]])
    errors = velocity_errors(net, z_s, candidates, PredictConfig(), source="noise")
    # identical path under a noise source, so only the condition separates the columns
    assert errors[0, 0] != errors[0, 1]
