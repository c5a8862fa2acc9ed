"""Dense float64 tensors with reverse-mode differentiation and layers."""

from . import functional
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .gradcheck import check_gradients, rel_error
from .nn import (
    BatchNorm2d,
    Conv2d,
    ConvBNReLU,
    DeformConv2d,
    DynamicConv2d,
    Identity,
    LayerNorm2d,
    Linear,
    Module,
    ModuleList,
)
from .tensor import Parameter, ShapeError, Tensor, no_grad

F = functional

__all__ = [
    "F",
    "functional",
    "Tensor",
    "Parameter",
    "ShapeError",
    "no_grad",
    "Module",
    "ModuleList",
    "Identity",
    "Conv2d",
    "DeformConv2d",
    "DynamicConv2d",
    "BatchNorm2d",
    "LayerNorm2d",
    "Linear",
    "ConvBNReLU",
    "check_gradients",
    "rel_error",
    "save_checkpoint",
    "load_checkpoint",
    "CheckpointError",
]
