import numpy as np
import pytest

from sarfah.attention import CBAM, DASS, ChannelAttention, SpatialAttention
from sarfah.autodiff import F, Parameter, Tensor, check_gradients
from sarfah.autodiff.nn import Conv2d, DynamicConv2d


def test_attention_maps_bounded(rng):
    x = Tensor(rng.normal(scale=5, size=(2, 8, 6, 6)))
    ca = ChannelAttention(8, rng=0).weights(x).data
    sa = SpatialAttention(rng=0).weights(x).data
    assert ca.shape == (2, 8, 1, 1) and sa.shape == (2, 1, 6, 6)
    for a in (ca, sa):
        assert np.all((a > 0) & (a < 1))


def test_cbam_shrinks_magnitude(rng):
    x = rng.normal(size=(2, 8, 5, 5))
    y = CBAM(8, rng=0)(Tensor(x)).data
    assert np.all(np.abs(y) <= np.abs(x))


def test_constant_input_gives_constant_spatial_map():
    sa = SpatialAttention(rng=0)
    x = Tensor(np.full((1, 4, 16, 16), 2.5))
    m = sa.weights(x).data[0, 0]
    # interior positions see no zero padding
    np.testing.assert_allclose(m[3:-3, 3:-3], m[8, 8], rtol=0, atol=1e-14)


def test_cbam_grads(rng):
    cb = CBAM(4, reduction=2, rng=0)
    x = Parameter(rng.normal(size=(2, 4, 5, 5)))
    W = rng.normal(size=x.shape)
    for r in check_gradients(lambda: (cb(x) * W).sum(), {"x": x, **dict(cb.named_parameters())}, max_entries=15, rng=0):
        assert r.max_rel_error < 1e-4, r


def test_dass_shape_and_alpha(rng):
    d = DASS(8, rng=0)
    x = Tensor(rng.normal(size=(2, 8, 6, 4)))
    y = d(x)
    assert y.shape == x.shape
    np.testing.assert_allclose(d.fuse.last_alpha.sum(axis=1), 1.0, atol=1e-12)
    assert isinstance(d.fuse, DynamicConv2d) and d.fuse.experts == 4


def test_dass_single_expert_is_plain_fusion(rng):
    d = DASS(4, experts=1, rng=0)
    x = Tensor(rng.normal(size=(2, 4, 4, 4)))
    cat = d.fused_input(x)
    plain = F.conv2d(cat, Tensor(d.fuse.weight.data[0]), Tensor(d.fuse.bias.data[0]))
    expected = F.relu(d.bn(plain)).data
    np.testing.assert_allclose(d(x).data, expected, atol=1e-12)


def test_dass_without_dynamic_conv_is_smaller():
    a = DASS(16, use_dynamic=True, rng=0)
    b = DASS(16, use_dynamic=False, rng=0)
    assert isinstance(b.fuse, Conv2d)
    assert b.num_parameters() < a.num_parameters()


def test_dass_grads(rng):
    d = DASS(4, rng=0)
    for p in d.parameters():
        p.data += rng.normal(scale=0.1, size=p.shape)
    d.bn.momentum = 0.0
    d.vss.ffn_in.weight.data *= 1.0
    x = Parameter(rng.normal(size=(2, 4, 4, 4)))
    W = rng.normal(size=x.shape)
    for r in check_gradients(lambda: (d(x) * W).sum(), {"x": x, **dict(d.named_parameters())}, max_entries=6, rng=0):
        assert r.max_rel_error < 1e-4, r
