"""Minimal float64 autograd engine used by every model in the package."""

from . import ops
from .gradcheck import check_gradients, numerical_gradient, relative_error
from .nn import BatchNorm, Conv1d, Conv3d, Embedding, Linear, Module, Parameter, WeightNormConv1d
from .tensor import Tensor, grad_enabled, no_grad

__all__ = [
    "ops", "Tensor", "Parameter", "Module", "Linear", "Conv1d", "Conv3d", "WeightNormConv1d",
    "BatchNorm", "Embedding", "no_grad", "grad_enabled", "check_gradients", "numerical_gradient",
    "relative_error",
]
