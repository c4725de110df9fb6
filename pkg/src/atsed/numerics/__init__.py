"""Small dense-tensor engine with reverse-mode autodiff."""

from . import functional
from .checkpoint import load_arrays, load_model, save_arrays, save_model, import_pretrained
from .functional import avg_pool2d, bigru, conv2d, gru
from .gradcheck import check_gradients, numeric_gradient
from .nn import BatchNorm2d, BiGRU, Conv2d, Dropout, Linear, Module, Parameter
from .optim import Adam, AdamState, adam_step, ema_update
from .tensor import (Tensor, as_tensor, backward, default_dtype, get_default_dtype, no_grad,
                     set_default_dtype)

__all__ = [
    "Adam", "AdamState", "BatchNorm2d", "BiGRU", "Conv2d", "Dropout", "Linear", "Module",
    "Parameter", "Tensor", "adam_step", "as_tensor", "avg_pool2d", "backward", "bigru",
    "check_gradients", "conv2d", "default_dtype", "ema_update", "functional", "get_default_dtype",
    "gru", "import_pretrained", "load_arrays", "load_model", "no_grad", "numeric_gradient",
    "save_arrays", "save_model", "set_default_dtype",
]
