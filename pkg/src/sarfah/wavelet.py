"""Orthonormal 2D Haar analysis and synthesis at scale 1.

The four stencils are applied by stride-2 correlation.  With 0-based
``k, l`` each output coefficient reads the 2x2 window whose top-left pixel is
``(2k, 2l)``; the stencil entry ``w[m, n]`` (1-based) weights pixel
``(2k + 2 - m, 2l + 2 - n)``, so the first stencil row multiplies the lower
window row.  With ``a, b, c, d`` the top-left, top-right, bottom-left and
bottom-right pixels of a window::

    LL = (a + b + c + d) / 2
    LH = (a + b - c - d) / 2
    HL = (a - b + c - d) / 2
    HH = (a - b - c + d) / 2
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "HAAR_FILTERS",
    "SubBands",
    "WaveletError",
    "dwt2_haar",
    "idwt2_haar",
    "dwt2_cascade",
]


class WaveletError(ValueError):
    """Raised for inputs the transform cannot decompose (odd sizes, mismatched planes)."""


HAAR_FILTERS = {
    "LL": 0.5 * np.array([[1.0, 1.0], [1.0, 1.0]]),
    "LH": 0.5 * np.array([[-1.0, -1.0], [1.0, 1.0]]),
    "HL": 0.5 * np.array([[-1.0, 1.0], [-1.0, 1.0]]),
    "HH": 0.5 * np.array([[1.0, -1.0], [-1.0, 1.0]]),
}


@dataclass(frozen=True)
class SubBands:
    """The four scale-1 coefficient planes, each of size (H/2, W/2)."""

    ll: np.ndarray
    lh: np.ndarray
    hl: np.ndarray
    hh: np.ndarray

    def __post_init__(self):
        shapes = {p.shape for p in self.planes()}
        if len(shapes) != 1:
            raise WaveletError(f"sub-band planes differ in shape: {sorted(shapes)}")

    def planes(self) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        return self.ll, self.lh, self.hl, self.hh

    def high(self) -> dict[str, np.ndarray]:
        return {"LH": self.lh, "HL": self.hl, "HH": self.hh}

    def energy(self) -> float:
        return float(sum(np.sum(p * p) for p in self.planes()))

    def stack(self) -> np.ndarray:
        """Planes stacked on a new axis just before the spatial axes."""
        return np.stack(self.planes(), axis=-3)


def _check_even(shape: tuple[int, ...]) -> None:
    if len(shape) < 2:
        raise WaveletError(f"need at least 2 dimensions, got shape {shape}")
    h, w = shape[-2:]
    if h % 2 or w % 2:
        raise WaveletError(f"image dimensions must be even, got {h}x{w}")


def dwt2_haar(img) -> SubBands:
    """One analysis level.  Leading axes (batch, channel) are carried along."""
    x = np.asarray(img, dtype=np.float64)
    _check_even(x.shape)
    a = x[..., 0::2, 0::2]
    b = x[..., 0::2, 1::2]
    c = x[..., 1::2, 0::2]
    d = x[..., 1::2, 1::2]
    s_top, d_top = a + b, a - b
    s_bot, d_bot = c + d, c - d
    return SubBands(
        ll=0.5 * (s_top + s_bot),
        lh=0.5 * (s_top - s_bot),
        hl=0.5 * (d_top + d_bot),
        hh=0.5 * (d_top - d_bot),
    )


def idwt2_haar(sb: SubBands) -> np.ndarray:
    """Exact inverse of :func:`dwt2_haar`."""
    ll, lh, hl, hh = (np.asarray(p, dtype=np.float64) for p in sb.planes())
    if not (ll.shape == lh.shape == hl.shape == hh.shape):
        raise WaveletError("sub-band planes differ in shape")
    if ll.ndim < 2:
        raise WaveletError("sub-band planes must be at least 2D")
    s1, s2 = ll + lh, ll - lh
    d1, d2 = hl + hh, hl - hh
    out = np.empty(ll.shape[:-2] + (2 * ll.shape[-2], 2 * ll.shape[-1]))
    out[..., 0::2, 0::2] = 0.5 * (s1 + d1)
    out[..., 0::2, 1::2] = 0.5 * (s1 - d1)
    out[..., 1::2, 0::2] = 0.5 * (s2 + d2)
    out[..., 1::2, 1::2] = 0.5 * (s2 - d2)
    return out


def dwt2_cascade(img, levels: int) -> tuple[list[SubBands], np.ndarray]:
    """Apply :func:`dwt2_haar` repeatedly to the LL plane.

    Returns the sub-bands of every level (finest first) and the final LL.
    """
    if levels < 1:
        raise WaveletError(f"levels must be >= 1, got {levels}")
    x = np.asarray(img, dtype=np.float64)
    if x.ndim < 2:
        raise WaveletError("image must be at least 2D")
    step = 2**levels
    h, w = x.shape[-2:]
    if h % step or w % step:
        raise WaveletError(f"{h}x{w} image is not divisible by 2**{levels}")
    bands = []
    for _ in range(levels):
        sb = dwt2_haar(x)
        bands.append(sb)
        x = sb.ll
    return bands, x
