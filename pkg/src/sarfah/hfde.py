"""High-frequency detail enhancer: an asymmetric U-shaped network with a
DASS bottleneck, deformable convolutions and additive skips."""

from __future__ import annotations

from enum import Enum

import numpy as np

from .autodiff import F, Module
from .autodiff.nn import ConvBNReLU, Identity
from .attention import DASS, ChannelAttention
from .speckle import DomainError


class DeformPlacement(str, Enum):
    """Which encoder/decoder convolutions are deformable (the bottleneck
    always holds one deformable convolution)."""

    NONE = "none"
    ENCODER = "encoder"
    DECODER = "decoder"
    BOTH = "both"

    @property
    def encoder(self) -> bool:
        return self in (DeformPlacement.ENCODER, DeformPlacement.BOTH)

    @property
    def decoder(self) -> bool:
        return self in (DeformPlacement.DECODER, DeformPlacement.BOTH)


class HFDE(Module):
    """U-shaped enhancer mapping (N, C, h, w) to (N, C, h, w).

    Widths: stem C -> C/2 (with channel attention), encoder C/2 -> C -> 2C
    with 2x max-pooling, bottleneck at 2C, decoder 2C -> C -> C/2 with
    bilinear 2x upsampling, head C/2 -> C -> C.  Each decoder stage and the
    head consume the sum of the previous output and the same-scale encoder
    feature.
    """

    def __init__(self, channels: int, placement="decoder", use_dass: bool = True,
                 use_dynamic: bool = True, rng=None):
        if channels % 2:
            raise DomainError(f"channel count must be even, got {channels}")
        rng = np.random.default_rng(rng)
        c, c2 = channels, channels // 2
        self.placement = DeformPlacement(placement)
        enc, dec = self.placement.encoder, self.placement.decoder
        self.stem = ConvBNReLU(c, c2, rng=rng)
        self.stem_attention = ChannelAttention(c2, rng=rng)
        self.enc1 = ConvBNReLU(c2, c, deform=enc, rng=rng)
        self.enc2 = ConvBNReLU(c, 2 * c, deform=enc, rng=rng)
        self.bottleneck_conv = ConvBNReLU(2 * c, 2 * c, rng=rng)
        self.bottleneck_deform = ConvBNReLU(2 * c, 2 * c, deform=True, rng=rng)
        self.bottleneck_dass = DASS(2 * c, use_dynamic=use_dynamic, rng=rng) if use_dass else Identity()
        self.dec1 = ConvBNReLU(2 * c, c, deform=dec, rng=rng)
        self.dec2 = ConvBNReLU(c, c2, deform=dec, rng=rng)
        self.head1 = ConvBNReLU(c2, c, rng=rng)
        self.head2 = ConvBNReLU(c, c, rng=rng)

    def encode(self, f):
        """Return the encoder features ``[F0e, F1e, F2e]``."""
        h, w = f.shape[-2:]
        if h % 4 or w % 4:
            raise DomainError(f"HFDE input size {h}x{w} must be divisible by 4")
        e0 = self.stem_attention(self.stem(f))
        e1 = F.max_pool2d(self.enc1(e0))
        e2 = F.max_pool2d(self.enc2(e1))
        return [e0, e1, e2]

    def forward(self, f):
        e0, e1, e2 = self.encode(f)
        d0 = self.bottleneck_dass(self.bottleneck_deform(self.bottleneck_conv(e2)))
        d1 = self.dec1(F.upsample2x(d0 + e2))
        d2 = self.dec2(F.upsample2x(d1 + e1))
        return self.head2(self.head1(d2 + e0))
