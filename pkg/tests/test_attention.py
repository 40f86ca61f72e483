import math

import numpy as np
import pytest

from detcore.attention import (
    AttentionParams,
    FeaturePyramid,
    QuerySet,
    aggregate,
    attention_weights,
    build_pyramid,
    msma_forward,
    multiscale_attention,
    positional_encoding,
    pyramid_encodings,
)
from oracles import naive_attention


def small_pyramid(rng, c, shapes=((3, 4), (2, 2), (1, 1))):
    return FeaturePyramid([rng.normal(size=(h, w, c)) for h, w in shapes])


def test_positional_encoding_origin_and_range():
    pe = positional_encoding(5, 7, 16)
    assert pe.shape == (5, 7, 16)
    np.testing.assert_array_equal(pe[0, 0, 0::2], 0.0)
    np.testing.assert_array_equal(pe[0, 0, 1::2], 1.0)
    assert np.all(np.abs(pe) <= 1.0)
    with pytest.raises(ValueError):
        positional_encoding(4, 4, 6)


def test_positional_encoding_unique_on_64_grid():
    pe = positional_encoding(64, 64, 32).reshape(-1, 32)
    assert len(np.unique(pe.round(12), axis=0)) == 64 * 64


def test_pyramid_encodings_modes():
    rng = np.random.default_rng(0)
    pyr = small_pyramid(rng, 8)
    sine = pyramid_encodings(pyr)
    assert [e.shape for e in sine] == [(3, 4, 8), (2, 2, 8), (1, 1, 8)]
    learned = pyramid_encodings(pyr, "learned", seed=3)
    np.testing.assert_array_equal(learned[1], pyramid_encodings(pyr, "learned", seed=3)[1])
    with pytest.raises(ValueError):
        pyramid_encodings(pyr, "rotary")


def test_build_pyramid_shapes_and_constants():
    pyr = build_pyramid(np.zeros((8, 8, 4)), levels=4)
    assert pyr.shapes == [(8, 8), (4, 4), (2, 2), (1, 1)]
    odd = build_pyramid(np.full((9, 5, 3), 2.5), levels=3)
    assert odd.shapes == [(9, 5), (5, 3), (3, 2)]
    for f in odd.levels:
        np.testing.assert_array_equal(f, 2.5)
    with pytest.raises(ValueError):
        build_pyramid(np.zeros((4, 4, 2)), levels=4)


def test_build_pyramid_conserves_mean():
    base = np.random.default_rng(1).normal(size=(16, 16, 5))
    for f in build_pyramid(base, levels=4).levels:
        np.testing.assert_allclose(f.mean(axis=(0, 1)), base.mean(axis=(0, 1)), atol=1e-10)


def test_attention_weight_fixtures():
    params = AttentionParams.random(8, 2, seed=0)
    q = np.ones(8)
    only = attention_weights(q, [np.ones((1, 8))], params, 0)
    assert only[0].tolist() == [1.0]
    # zero key map makes every logit equal
    flat = AttentionParams(params.out_proj, params.value_proj, params.query_proj,
                           np.zeros_like(params.key_proj))
    w = attention_weights(q, [np.ones((2, 3, 8)), np.ones((1, 1, 8))], flat, 1)
    np.testing.assert_allclose(np.concatenate(w), 1 / 7, atol=1e-15)
    with pytest.raises(ValueError):
        attention_weights(np.ones(4), [np.ones((1, 8))], params, 0)


def test_attention_weights_match_naive_softmax():
    rng = np.random.default_rng(2)
    params = AttentionParams.random(8, 2, seed=4)
    keys = [rng.normal(size=(6, 8)), rng.normal(size=(2, 8))]
    q = rng.normal(size=8)
    for m in range(2):
        uq = params.query_proj[m] @ q
        scores = [math.exp(float(uq @ (params.key_proj[m] @ k)) / 2.0)
                  for f in keys for k in f]
        expected = [s / sum(scores) for s in scores]
        got = np.concatenate(attention_weights(q, keys, params, m))
        np.testing.assert_allclose(got, expected, rtol=0, atol=1e-12)


def test_weights_sum_to_one_random_configurations():
    rng = np.random.default_rng(3)
    worst = 0.0
    for i in range(1000):
        heads = int(rng.choice([1, 2, 4]))
        c = 4 * heads
        params = AttentionParams.random(c, heads, seed=i)
        levels = [rng.normal(0, 3, (int(rng.integers(1, 4)), int(rng.integers(1, 4)), c))
                  for _ in range(int(rng.integers(1, 4)))]
        _, w = multiscale_attention(rng.normal(0, 3, (2, c)), levels, params, return_weights=True)
        assert np.all(w >= 0)
        worst = max(worst, float(np.max(np.abs(w.sum(axis=2) - 1.0))))
    assert worst <= 1e-12


def test_identity_fixture_returns_key_feature():
    f = np.array([0.3, -1.2, 2.0, 0.5])
    pyr = FeaturePyramid([f.reshape(1, 1, 4)])
    out = msma_forward(QuerySet(np.ones((1, 4))), pyr, AttentionParams.identity(4))
    np.testing.assert_array_equal(out[0], f)


def test_msma_matches_naive_quadruple_loop():
    rng = np.random.default_rng(5)
    c, heads = 8, 2
    params = AttentionParams.random(c, heads, seed=6)
    pyr = small_pyramid(rng, c)
    qs = QuerySet(rng.normal(size=(3, c)), rng.normal(size=(3, c)))
    got = msma_forward(qs, pyr, params)
    pos = pyramid_encodings(pyr)
    expected = naive_attention(
        qs.queries.tolist(),
        qs.positions.tolist(),
        [f.reshape(-1, c).tolist() for f in pyr.levels],
        [p.reshape(-1, c).tolist() for p in pos],
        params.out_proj.tolist(),
        params.value_proj.tolist(),
        params.query_proj.tolist(),
        params.key_proj.tolist(),
    )
    np.testing.assert_allclose(got, expected, rtol=0, atol=1e-10)


def test_joint_key_permutation_invariance():
    rng = np.random.default_rng(7)
    c = 8
    params = AttentionParams.random(c, 4, seed=8)
    feats = rng.normal(size=(10, c))
    pos = rng.normal(size=(10, c))
    z = rng.normal(size=(4, c))
    perm = rng.permutation(10)
    a = multiscale_attention(z, [feats], params, key_pos=[pos])
    b = multiscale_attention(z, [feats[perm]], params, key_pos=[pos[perm]])
    np.testing.assert_allclose(a, b, rtol=0, atol=1e-12)


def test_value_path_is_linear_with_fixed_weights():
    rng = np.random.default_rng(9)
    c = 8
    params = AttentionParams.random(c, 2, seed=10)
    levels = [rng.normal(size=(3, 3, c)), rng.normal(size=(2, 1, c))]
    _, w = multiscale_attention(rng.normal(size=(5, c)), levels, params, return_weights=True)
    for s in (-2.0, 0.5, 3.0):
        scaled = aggregate(w, [s * f for f in levels], params)
        np.testing.assert_allclose(scaled, s * aggregate(w, levels, params), rtol=0, atol=1e-10)


def test_shape_errors():
    params = AttentionParams.random(8, 2)
    with pytest.raises(ValueError):
        msma_forward(QuerySet(np.ones((1, 8))), FeaturePyramid([np.ones((2, 2, 4))]), params)
    with pytest.raises(ValueError):
        AttentionParams.random(6, 4)
    with pytest.raises(ValueError):
        QuerySet(np.ones((2, 4)), np.ones((3, 4)))
