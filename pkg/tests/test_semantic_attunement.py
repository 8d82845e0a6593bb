import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from flora.errors import ConfigError, InvalidPackError, NumericError, ShapeError
from flora.feature_pack import FeaturePack, PackKind, read_fpack, write_fpack
from flora.semantic_attunement import NeighborSet, attune, attune_pack, cosine_matrix, pool_tokens, topk_neighbors


def test_pool_tokens():
    assert pool_tokens(np.array([[3.0, 4.0]])).tolist() == [3.0, 4.0]
    assert pool_tokens(np.array([[2.0, 2.0]] * 3)).tolist() == [2.0, 2.0]
    assert pool_tokens(np.array([[1.0, 0.0], [0.0, 1.0]])).tolist() == [0.5, 0.5]
    assert pool_tokens(np.array([[1.0, 0.0], [0.0, 1.0]]), "max").tolist() == [1.0, 1.0]
    with pytest.raises(ShapeError):
        pool_tokens(np.zeros((0, 2)))


def test_topk_example():
    pooled = np.array([[1.0, 0.0], [0.99, 0.141], [0.0, 1.0]])
    result = topk_neighbors(0, pooled, 1)
    assert result.ids == [1]
    assert result.weights[0] == pytest.approx(0.990, abs=1e-3)


def test_topk_all_others_sorted_and_ties():
    pooled = np.array([[1.0, 0.0], [0.0, 1.0], [0.0, 1.0], [1.0, 1.0]])
    result = topk_neighbors(0, pooled, 3)
    assert 0 not in result.ids
    assert result.ids == [3, 1, 2]
    assert result.weights == sorted(result.weights, reverse=True)


def test_topk_errors():
    pooled = np.array([[1.0, 0.0], [0.0, 1.0]])
    with pytest.raises(ConfigError):
        topk_neighbors(0, pooled, 2)
    with pytest.raises(ConfigError):
        topk_neighbors(0, pooled, 0)
    with pytest.raises(NumericError):
        cosine_matrix(np.array([[0.0, 0.0], [1.0, 0.0]]))


def test_attune_formula():
    F = np.array([[1.0, 2.0], [3.0, -1.0]])
    same = NeighborSet(0, ((1, 1.0),))
    np.testing.assert_array_equal(attune(F, same, np.stack([F, F]), tau=1.0, k=1), 2 * F)
    np.testing.assert_array_equal(attune(F, same, np.stack([F, F]), tau=0.0, k=1), F)
    with pytest.raises(ShapeError):
        attune(F, same, np.zeros((2, 3, 2)), tau=1.0, k=1)


def _brute_force(features, k, tau):
    pooled = features.mean(axis=1)
    n = len(features)
    out = np.empty_like(features)
    for y in range(n):
        sims = []
        for c in range(n):
            if c != y:
                cos = pooled[y] @ pooled[c] / (np.linalg.norm(pooled[y]) * np.linalg.norm(pooled[c]))
                sims.append((-cos, c))
        chosen = sorted(sims)[:k]
        agg = sum(-neg * features[c] for neg, c in chosen)
        out[y] = features[y] + tau / k * agg
    return out


def _semantic(features):
    return FeaturePack(PackKind.SEMANTIC, features, np.arange(len(features)))


def test_pack_matches_brute_force(rng):
    features = rng.standard_normal((5, 3, 4)).astype(np.float32).astype(np.float64)
    attuned = attune_pack(_semantic(features), k=2, tau=0.5)
    expected = _brute_force(features, 2, 0.5)
    assert attuned.features.dtype == np.float64
    np.testing.assert_allclose(attuned.features, expected, rtol=1e-12, atol=1e-12)

    raw = pool_tokens(features)
    sims = cosine_matrix(raw)
    direct = np.stack([attune(features[y], topk_neighbors(y, raw, 2, sims), features, 0.5, 2) for y in range(5)])
    np.testing.assert_allclose(direct, expected, rtol=0, atol=1e-12)


def test_k_zero_and_tokens(rng):
    features = rng.standard_normal((4, 3, 2)).astype(np.float32)
    pack = _semantic(features)
    assert attune_pack(pack, k=0, tau=0.5).same_content(pack)
    truncated = attune_pack(pack, k=0, tau=0.5, tokens=2)
    assert truncated.n_tokens == 2


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), scale=st.floats(0.01, 100.0))
def test_neighbors_are_scale_invariant(seed, scale):
    pooled = np.random.default_rng(seed).standard_normal((6, 3))
    for y in range(6):
        a, b = topk_neighbors(y, pooled, 3), topk_neighbors(y, scale * pooled, 3)
        assert a.ids == b.ids
        np.testing.assert_allclose(a.weights, b.weights, rtol=1e-9, atol=1e-12)


def test_linear_in_tau(rng):
    features = rng.standard_normal((5, 2, 3))
    raw = pool_tokens(features)
    neighbors = topk_neighbors(2, raw, 3)
    one = attune(features[2], neighbors, features, 1.0, 3)
    for tau in (0.1, 0.5, 2.0):
        np.testing.assert_allclose(attune(features[2], neighbors, features, tau, 3) - features[2],
                                   tau * (one - features[2]), rtol=1e-12, atol=1e-12)


def test_permutation_equivariance(rng):
    features = rng.standard_normal((5, 2, 3))
    perm = np.array([3, 0, 4, 1, 2])
    base = attune_pack(_semantic(features), k=2, tau=0.5).features
    permuted = attune_pack(_semantic(features[perm]), k=2, tau=0.5).features
    np.testing.assert_allclose(permuted, base[perm], rtol=0, atol=1e-6)


def test_attuned_pack_rounds_only_on_disk(tmp_path, rng):
    features = rng.standard_normal((4, 2, 3)).astype(np.float32)
    attuned = attune_pack(_semantic(features), k=2, tau=0.3)
    reread = read_fpack(write_fpack(attuned, tmp_path / "attuned.fpack"))
    assert reread.features.dtype == np.float32
    np.testing.assert_array_equal(reread.features, attuned.features.astype(np.float32))


def test_bad_pooling_and_kind_use_flora_errors(rng):
    features = rng.standard_normal((3, 2, 2))
    with pytest.raises(ConfigError) as info:
        attune_pack(_semantic(features), k=1, tau=0.5, pooling="median")
    assert info.value.exit_code == 1
    skeleton = FeaturePack(PackKind.SKELETON, features[:, :1], np.array([0, 1, 1]))
    with pytest.raises(InvalidPackError) as info:
        attune_pack(skeleton, k=1, tau=0.5)
    assert info.value.exit_code == 2
