from . import kernels, layers, optim, tensor
from .checkpoint import load_checkpoint, save_checkpoint
from .gradcheck import grad_check
from .tensor import Tape, Tensor, backward, default_dtype, set_default_dtype

__all__ = [
    "Tape",
    "Tensor",
    "backward",
    "default_dtype",
    "set_default_dtype",
    "grad_check",
    "save_checkpoint",
    "load_checkpoint",
    "kernels",
    "layers",
    "optim",
    "tensor",
]
