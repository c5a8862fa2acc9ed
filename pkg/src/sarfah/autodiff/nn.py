"""Minimal module system and the layers the despeckling network is built from."""

from __future__ import annotations

import math
from collections import OrderedDict
from typing import Iterator

import numpy as np

from . import functional as F
from .tensor import Parameter, ShapeError, Tensor


class Module:
    """Container of parameters, buffers and child modules.

    Attributes holding a :class:`Tensor`, a :class:`Module` or a
    :class:`ModuleList` are discovered by attribute order, which fixes the
    dotted names used in checkpoints.
    """

    training: bool = True

    def forward(self, *args, **kwargs):
        raise NotImplementedError

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    def _children(self) -> Iterator[tuple[str, object]]:
        for name, value in vars(self).items():
            if isinstance(value, (Tensor, Module)):
                yield name, value

    def named_tensors(self, prefix: str = "", _seen=None) -> Iterator[tuple[str, Tensor]]:
        """Parameters and buffers, each shared object reported once."""
        seen = set() if _seen is None else _seen
        for name, value in self._children():
            full = f"{prefix}{name}"
            if id(value) in seen:
                continue
            seen.add(id(value))
            if isinstance(value, Tensor):
                yield full, value
            else:
                yield from value.named_tensors(full + ".", seen)

    def named_parameters(self) -> Iterator[tuple[str, Tensor]]:
        return ((n, t) for n, t in self.named_tensors() if t.requires_grad)

    def parameters(self) -> list[Tensor]:
        return [t for _, t in self.named_parameters()]

    def num_parameters(self) -> int:
        return int(sum(t.size for t in self.parameters()))

    def state_dict(self) -> OrderedDict[str, Tensor]:
        return OrderedDict(self.named_tensors())

    def load_state_dict(self, state: dict[str, np.ndarray], strict: bool = True):
        own = self.state_dict()
        if strict:
            missing = own.keys() - state.keys()
            unexpected = state.keys() - own.keys()
            if missing or unexpected:
                raise KeyError(f"state mismatch: missing={sorted(missing)}, unexpected={sorted(unexpected)}")
        for name, t in own.items():
            if name not in state:
                continue
            arr = np.asarray(state[name].data if isinstance(state[name], Tensor) else state[name], dtype=np.float64)
            if arr.shape != t.shape:
                raise ShapeError(f"{name}: checkpoint shape {arr.shape} != {t.shape}")
            t.data[...] = arr

    def modules(self) -> Iterator[Module]:
        yield self
        seen = {id(self)}
        stack = [self]
        while stack:
            mod = stack.pop()
            for _, child in mod._children():
                if isinstance(child, Module) and id(child) not in seen:
                    seen.add(id(child))
                    yield child
                    stack.append(child)

    def train(self, mode: bool = True):
        for m in self.modules():
            m.training = mode
        return self

    def eval(self):
        return self.train(False)

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None


class ModuleList(Module):
    def __init__(self, modules=()):
        self._items: list[Module] = []
        for m in modules:
            self.append(m)

    def append(self, m: Module):
        self._items.append(m)
        setattr(self, str(len(self._items) - 1), m)

    def __iter__(self):
        return iter(self._items)

    def __len__(self):
        return len(self._items)

    def __getitem__(self, i):
        return self._items[i]

    def _children(self):
        for i, m in enumerate(self._items):
            yield str(i), m


class Identity(Module):
    def forward(self, x, *args, **kwargs):
        return x


def kaiming_normal(rng: np.random.Generator, shape, fan_in: int, gain: float = math.sqrt(2.0)) -> np.ndarray:
    return rng.normal(0.0, gain / math.sqrt(fan_in), size=shape)


class Conv2d(Module):
    def __init__(self, in_ch, out_ch, kernel=3, stride=1, padding=None, groups=1, bias=True, rng=None, init="kaiming"):
        rng = np.random.default_rng(rng)
        if in_ch % groups or out_ch % groups:
            raise ShapeError(f"channels {in_ch}->{out_ch} not divisible by groups={groups}")
        fan_in = in_ch // groups * kernel * kernel
        shape = (out_ch, in_ch // groups, kernel, kernel)
        if init == "zeros":
            w = np.zeros(shape)
        elif init == "linear":
            w = kaiming_normal(rng, shape, fan_in, gain=1.0)
        else:
            w = kaiming_normal(rng, shape, fan_in)
        self.weight = Parameter(w)
        self.bias = Parameter(np.zeros(out_ch)) if bias else None
        self.stride = stride
        self.padding = kernel // 2 if padding is None else padding
        self.groups = groups

    def forward(self, x):
        return F.conv2d(x, self.weight, self.bias, self.stride, self.padding, self.groups)


class DeformConv2d(Module):
    """Deformable convolution whose offsets come from a sibling 3x3 conv on
    the same input, zero-initialised so training starts from a plain conv."""

    def __init__(self, in_ch, out_ch, kernel=3, bias=True, rng=None):
        rng = np.random.default_rng(rng)
        self.weight = Parameter(kaiming_normal(rng, (out_ch, in_ch, kernel, kernel), in_ch * kernel * kernel))
        self.bias = Parameter(np.zeros(out_ch)) if bias else None
        self.offset = Conv2d(in_ch, 2 * kernel * kernel, 3, rng=rng, init="zeros")
        self.kernel = kernel

    def forward(self, x):
        return F.deform_conv2d(x, self.offset(x), self.weight, self.bias, padding=self.kernel // 2)


class BatchNorm2d(Module):
    def __init__(self, channels, momentum=0.1, eps=1e-5):
        self.weight = Parameter(np.ones(channels))
        self.bias = Parameter(np.zeros(channels))
        self.running_mean = Tensor(np.zeros(channels))
        self.running_var = Tensor(np.ones(channels))
        self.momentum = momentum
        self.eps = eps

    def forward(self, x):
        return F.batch_norm(
            x, self.weight, self.bias, self.running_mean.data, self.running_var.data,
            self.training, self.momentum, self.eps,
        )


class LayerNorm2d(Module):
    """LayerNorm over the channel axis of an (N, C, H, W) map, per pixel."""

    def __init__(self, channels, eps=1e-5):
        self.weight = Parameter(np.ones(channels))
        self.bias = Parameter(np.zeros(channels))
        self.eps = eps

    def forward(self, x):
        return F.layer_norm(x, self.weight, self.bias, axis=1, eps=self.eps)


class Linear(Module):
    def __init__(self, in_f, out_f, bias=True, rng=None, init="kaiming"):
        rng = np.random.default_rng(rng)
        if init == "zeros":
            w = np.zeros((out_f, in_f))
        else:
            w = kaiming_normal(rng, (out_f, in_f), in_f, gain=math.sqrt(2.0) if init == "kaiming" else 1.0)
        self.weight = Parameter(w)
        self.bias = Parameter(np.zeros(out_f)) if bias else None

    def forward(self, x):
        return F.linear(x, self.weight, self.bias)


class ConvBNReLU(Module):
    """Conv (plain or deformable) -> BatchNorm -> ReLU."""

    def __init__(self, in_ch, out_ch, kernel=3, deform=False, relu=True, rng=None):
        rng = np.random.default_rng(rng)
        if deform:
            self.conv = DeformConv2d(in_ch, out_ch, kernel, bias=False, rng=rng)
        else:
            self.conv = Conv2d(in_ch, out_ch, kernel, bias=False, rng=rng)
        self.bn = BatchNorm2d(out_ch)
        self.relu = relu

    def forward(self, x):
        y = self.bn(self.conv(x))
        return F.relu(y) if self.relu else y


class DynamicConv2d(Module):
    """Convolution with an input-conditioned convex combination of K expert kernels.

    ``alpha = softmax(FC(ReLU(FC(GAP(x)))))`` weights the experts; each sample
    is convolved with its own aggregated kernel and bias.
    """

    def __init__(self, in_ch, out_ch, kernel=1, experts=4, reduction=16, rng=None):
        if experts < 1:
            raise ShapeError("dynamic convolution needs at least one expert")
        rng = np.random.default_rng(rng)
        hidden = max(in_ch // reduction, 1)
        self.fc1 = Linear(in_ch, hidden, rng=rng)
        self.fc2 = Linear(hidden, experts, rng=rng, init="linear")
        fan_in = in_ch * kernel * kernel
        self.weight = Parameter(kaiming_normal(rng, (experts, out_ch, in_ch, kernel, kernel), fan_in))
        self.bias = Parameter(np.zeros((experts, out_ch)))
        self.kernel = kernel
        self.experts = experts
        self.last_alpha: np.ndarray | None = None

    def attention(self, x) -> Tensor:
        return F.softmax(self.fc2(F.relu(self.fc1(F.global_avg_pool(x)))), axis=-1)

    def forward(self, x):
        alpha = self.attention(x)
        self.last_alpha = alpha.data
        w = F.einsum("nk,koicd->noicd", alpha, self.weight)
        b = F.einsum("nk,ko->no", alpha, self.bias)
        return F.conv2d(x, w, b, padding=self.kernel // 2)
