"""
Tests for map normalization, size ratios, keypoint pooling and the assembled descriptor
"""
from fractions import Fraction

import numpy as np
import pytest

from selfie_synergy.convnet import NetParams, NetSpec, forward, init_params, toy_alex
from selfie_synergy.descriptor import (build_descriptor, map_coordinates, map_size_ratios, neighborhood_max,
                                       normalize_maps, pool_at_keypoints, round_half_away)
from selfie_synergy.keypoints import Keypoint


def kp(x, y):
    return Keypoint(x=x, y=y, octave=0, scale_index=1, response=0.1)


def center_tap_params(spec):
    """Every conv passes its input through the center tap; biases zero"""
    params = init_params(spec)
    for i in spec.conv_indices:
        w = np.zeros_like(params.weights[i])
        c = w.shape[-1] // 2
        w[:, :, c, c] = 1.0
        params.weights[i] = w
    return params


def test_normalize_maps():
    layer = np.array([[[1.0, -4.0], [2.0, 0.5]]])
    out = normalize_maps([layer, np.zeros((2, 2, 2))])
    np.testing.assert_allclose(out[0], layer / 4.0)
    assert np.max(np.abs(out[0])) == 1.0
    assert np.all(out[1] == 0.0)


def test_normalize_preserves_sign_and_order(rng):
    layer = rng.normal(size=(3, 4, 4))
    out = normalize_maps([layer])[0]
    np.testing.assert_array_equal(np.sign(out), np.sign(layer))
    np.testing.assert_array_equal(np.argsort(np.abs(out), axis=None), np.argsort(np.abs(layer), axis=None))


def test_ratios_follow_strides():
    spec = NetSpec.parse("conv:2:3:4,conv:2:3:1,conv:2:3:2,conv:2:3:1,conv:2:3:2,flatten,fc:2", (1, 64, 64))
    assert [r.ratio for r in map_size_ratios(spec)] == [
        Fraction(1, 4), Fraction(1, 4), Fraction(1, 8), Fraction(1, 8), Fraction(1, 16)]


def test_ratios_include_pooling():
    spec = NetSpec.parse("conv:2:3:2,maxpool:3:2,conv:2:3:1,flatten,fc:2", (1, 32, 32))
    assert [r.ratio for r in map_size_ratios(spec)] == [Fraction(1, 2), Fraction(1, 4)]
    assert [r.layer_index for r in map_size_ratios(spec)] == [0, 2]


def test_ratios_match_coordinate_trace():
    """An impulse lands where the ratio maps its input coordinate"""
    spec = NetSpec.parse("conv:1:3:2,maxpool:3:2,conv:1:3:1,flatten,fc:1", (1, 33, 33))
    params = center_tap_params(spec)
    img = np.zeros((33, 33))
    img[12, 8] = 1.0
    _, cache = forward(spec, params, img[None])
    for maps, layer_ratio in zip(cache.conv_maps(0), map_size_ratios(spec)):
        ys, xs = map_coordinates([kp(8, 12)], layer_ratio.ratio, *maps.shape[1:])
        assert np.unravel_index(np.argmax(maps[0]), maps.shape[1:]) == (ys[0], xs[0])


def test_round_half_away():
    assert round_half_away(Fraction(5, 2)) == 3
    assert round_half_away(Fraction(3, 2)) == 2
    assert round_half_away(Fraction(-5, 2)) == -3
    assert round_half_away(Fraction(7, 4)) == 2
    assert round_half_away(Fraction(1, 4)) == 0


def test_map_coordinates_clamp():
    ys, xs = map_coordinates([kp(200, 3)], Fraction(1, 4), rows=10, cols=10)
    assert (ys[0], xs[0]) == (1, 9)


def test_neighborhood_max_cross():
    maps = np.zeros((1, 3, 3))
    maps[0, 1, 1] = 1.0
    out = neighborhood_max(maps)[0]
    np.testing.assert_array_equal(out, [[0, 1, 0], [1, 1, 1], [0, 1, 0]])


def test_pool_by_hand():
    maps = np.zeros((1, 5, 5))
    maps[0, 2, 2] = 0.1
    maps[0, 1, 2] = 0.9
    maps[0, 3, 2] = 0.2
    maps[0, 2, 3] = 0.3
    maps[0, 2, 1] = 0.0
    assert pool_at_keypoints(maps, [kp(2, 2)], Fraction(1)) == pytest.approx([0.9])


def test_pool_corner_uses_in_bounds_cells():
    maps = -np.ones((1, 3, 3))
    maps[0, 0, 0] = -0.5
    maps[0, 1, 0] = -0.25
    maps[0, 1, 1] = 5.0
    assert pool_at_keypoints(maps, [kp(0, 0)], Fraction(1)) == pytest.approx([-0.25])


def test_pool_repeated_keypoints(rng):
    maps = rng.random((3, 6, 6))
    once = pool_at_keypoints(maps, [kp(4, 2)], Fraction(1, 2))
    np.testing.assert_allclose(pool_at_keypoints(maps, [kp(4, 2)] * 5, Fraction(1, 2)), once)


def test_pool_averages_over_keypoints():
    maps = np.zeros((1, 4, 4))
    maps[0, 0, 0] = 1.0
    pooled = pool_at_keypoints(maps, [kp(0, 0), kp(3, 3)], Fraction(1))
    assert pooled == pytest.approx([0.5])


def test_toy_alex_descriptor_length_and_blocks(rng):
    spec = toy_alex(k=4, input_size=32)
    params = init_params(spec, seed=0)
    descriptor = build_descriptor(spec, params, rng.random((32, 32)))
    assert descriptor.data.shape == (56,)
    assert descriptor.layer_offsets == [0, 8, 24]
    assert len(descriptor.block(2)) == 32
    assert np.all(np.abs(descriptor.data) <= 1.0)


def test_zero_image_zero_bias_gives_zero_descriptor():
    spec = toy_alex(k=4, input_size=32)
    params = init_params(spec, seed=0)
    descriptor = build_descriptor(spec, params, np.zeros((32, 32)))
    assert descriptor.fallback
    assert np.all(descriptor.data == 0.0)


def test_descriptor_is_deterministic(rng):
    spec = toy_alex(k=4, input_size=32)
    img = rng.random((32, 32))
    first = build_descriptor(spec, init_params(spec, seed=3), img)
    second = build_descriptor(spec, init_params(spec, seed=3), img)
    np.testing.assert_array_equal(first.data, second.data)


def test_explicit_keypoints_are_used():
    spec = NetSpec.parse("conv:1:1:1,flatten,fc:1", (1, 4, 4))
    params = NetParams([np.ones((1, 1, 1, 1)), None, np.zeros((1, 16))], [np.zeros(1), None, np.zeros(1)])
    img = np.zeros((4, 4))
    img[0, 0] = 2.0
    img[3, 3] = 1.0
    descriptor = build_descriptor(spec, params, img, keypoints=[kp(3, 3)])
    assert descriptor.data == pytest.approx([0.5])
    assert not descriptor.fallback
