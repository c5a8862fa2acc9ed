import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from sarfah.wavelet import HAAR_FILTERS, SubBands, WaveletError, dwt2_cascade, dwt2_haar, idwt2_haar


def test_constant_image_has_only_ll():
    sb = dwt2_haar(np.full((4, 6), 3.0))
    np.testing.assert_allclose(sb.ll, 6.0)
    for plane in sb.high().values():
        np.testing.assert_array_equal(plane, 0.0)


def test_single_block_by_hand():
    a, b, c, d = 1.0, 2.0, 3.0, 4.0
    sb = dwt2_haar(np.array([[a, b], [c, d]]))
    assert sb.ll[0, 0] == pytest.approx((a + b + c + d) / 2)
    assert sb.lh[0, 0] == pytest.approx((a + b - c - d) / 2)
    assert sb.hl[0, 0] == pytest.approx((a - b + c - d) / 2)
    assert sb.hh[0, 0] == pytest.approx((a - b - c + d) / 2)


def test_filters_match_block_formulas(rng):
    # stencil entry (m, n), 1-based, weights pixel (2 - m, 2 - n) of the window
    x = rng.normal(size=(2, 2))
    sb = dwt2_haar(x)
    for name, plane in zip(("LL", "LH", "HL", "HH"), sb.planes()):
        assert plane[0, 0] == pytest.approx(np.sum(HAAR_FILTERS[name][::-1, ::-1] * x))


def test_odd_size_rejected():
    with pytest.raises(WaveletError):
        dwt2_haar(np.zeros((3, 4)))
    with pytest.raises(WaveletError):
        dwt2_haar(np.zeros(4))


def test_batch_axes_carried(rng):
    x = rng.normal(size=(3, 2, 8, 6))
    sb = dwt2_haar(x)
    assert sb.ll.shape == (3, 2, 4, 3)
    np.testing.assert_allclose(dwt2_haar(x[1, 0]).hh, sb.hh[1, 0])
    np.testing.assert_allclose(idwt2_haar(sb), x, atol=1e-12)


def test_mismatched_planes_rejected():
    with pytest.raises(WaveletError):
        SubBands(np.zeros((2, 2)), np.zeros((2, 2)), np.zeros((2, 3)), np.zeros((2, 2)))


@settings(max_examples=50, deadline=None)
@given(
    st.integers(1, 8).flatmap(
        lambda h: st.integers(1, 8).flatmap(
            lambda w: arrays(np.float64, (2 * h, 2 * w), elements=st.floats(-1e3, 1e3, allow_nan=False))
        )
    )
)
def test_round_trip_and_parseval(x):
    sb = dwt2_haar(x)
    np.testing.assert_allclose(idwt2_haar(sb), x, rtol=0, atol=1e-12 * max(1.0, np.abs(x).max()))
    assert sb.energy() == pytest.approx(float(np.sum(x * x)), rel=1e-12, abs=1e-9)


def test_cascade_levels(rng):
    x = rng.normal(size=(16, 16))
    bands, ll = dwt2_cascade(x, 3)
    assert len(bands) == 3 and ll.shape == (2, 2)
    np.testing.assert_allclose(ll, bands[-1].ll)
    # LL at level j sums 4^j pixels with gain 2^-j
    np.testing.assert_allclose(ll[0, 0], x[:8, :8].sum() / 8)
    with pytest.raises(WaveletError):
        dwt2_cascade(np.zeros((12, 12)), 3)
