"""CBAM attention and the dual-branch DASS block (local CBAM detail branch,
global VSS branch, fused by a dynamic 1x1 convolution)."""

from __future__ import annotations

import numpy as np

from .autodiff import F, Module
from .autodiff.nn import BatchNorm2d, Conv2d, DynamicConv2d, Linear
from .ssm import VSSBlock


class ChannelAttention(Module):
    """``sigmoid(MLP(GAP(x)) + MLP(GMP(x)))`` with a shared two-layer MLP."""

    def __init__(self, channels: int, reduction: int = 16, rng=None):
        rng = np.random.default_rng(rng)
        hidden = max(channels // reduction, 1)
        self.fc1 = Linear(channels, hidden, rng=rng)
        self.fc2 = Linear(hidden, channels, rng=rng, init="linear")

    def weights(self, x):
        """Attention of shape (N, C, 1, 1)."""
        n, c = x.shape[:2]
        avg = F.global_avg_pool(x)
        mx = F.amax(x.reshape(n, c, -1), axis=-1)
        mlp = lambda v: self.fc2(F.relu(self.fc1(v)))  # noqa: E731
        return F.sigmoid(mlp(avg) + mlp(mx)).reshape(n, c, 1, 1)

    def forward(self, x):
        return x * self.weights(x)


class SpatialAttention(Module):
    """``sigmoid(Conv7x7([mean_c(x) || max_c(x)]))``."""

    def __init__(self, kernel: int = 7, rng=None):
        self.conv = Conv2d(2, 1, kernel, rng=rng, init="linear")

    def weights(self, x):
        planes = F.concat([F.mean(x, axis=1, keepdims=True), F.amax(x, axis=1, keepdims=True)], axis=1)
        return F.sigmoid(self.conv(planes))

    def forward(self, x):
        return x * self.weights(x)


class CBAM(Module):
    """Channel attention followed by spatial attention, both multiplicative."""

    def __init__(self, channels: int, reduction: int = 16, rng=None):
        rng = np.random.default_rng(rng)
        self.channel = ChannelAttention(channels, reduction, rng=rng)
        self.spatial = SpatialAttention(rng=rng)

    def forward(self, x):
        return self.spatial(self.channel(x))


class DASS(Module):
    """``ReLU(BN(DConv1x1([CBAM(f) || VSS(f)])))``, mapping C channels to C.

    ``use_dynamic=False`` replaces the dynamic fusion by a plain 1x1 conv.
    """

    def __init__(self, channels: int, experts: int = 4, use_dynamic: bool = True, state: int = 8, rng=None):
        rng = np.random.default_rng(rng)
        self.cbam = CBAM(channels, rng=rng)
        self.vss = VSSBlock(channels, state=state, rng=rng)
        if use_dynamic:
            self.fuse = DynamicConv2d(2 * channels, channels, 1, experts=experts, rng=rng)
        else:
            self.fuse = Conv2d(2 * channels, channels, 1, rng=rng)
        self.bn = BatchNorm2d(channels)
        self.use_dynamic = use_dynamic

    def fused_input(self, f):
        return F.concat([self.cbam(f), self.vss(f)], axis=1)

    def forward(self, f):
        return F.relu(self.bn(self.fuse(self.fused_input(f))))
