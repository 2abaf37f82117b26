from .tensor import (Tensor, ShapeError, as_tensor, no_grad, grad_enabled,
                     set_check_finite, check_finite_enabled)
from .module import Parameter, Module, ModuleList, Linear, Conv2d, LayerNorm, he_normal
from .optim import Adam
from .rng import RngState
from .io import (save_tensors, load_tensors, ContainerError, MissingArtifactError,
                 MAGIC, VERSION)
from . import functional
from . import gradcheck

__all__ = [
    "Tensor", "ShapeError", "as_tensor", "no_grad", "grad_enabled",
    "set_check_finite", "check_finite_enabled",
    "Parameter", "Module", "ModuleList", "Linear", "Conv2d", "LayerNorm", "he_normal",
    "Adam", "RngState",
    "save_tensors", "load_tensors", "ContainerError", "MissingArtifactError",
    "MAGIC", "VERSION",
    "functional", "gradcheck",
]
