from .core import (
    DEFAULT_DTYPE,
    ContractError,
    DimensionError,
    Tensor,
    as_tensor,
    backward,
    concat,
    matmul,
    no_grad,
    ones,
    pad2d,
    stack,
    tensor,
    where,
    zeros,
)
from .conv import ConvSpec, conv2d, conv_transpose2d
from .fft import dft2_naive, fft2, ifft2, irfft2, rfft2
from .functional import (
    batchnorm2d,
    bce,
    bce_with_logits,
    gelu,
    layernorm,
    leaky_relu,
    log_softmax,
    relu,
    resize_nearest,
    sigmoid,
    softmax,
    softplus,
    tanh,
)
from .gradcheck import grad_check, grad_check_reference

__all__ = [
    "DEFAULT_DTYPE", "ContractError", "DimensionError", "Tensor", "as_tensor", "backward", "concat",
    "matmul", "no_grad", "ones", "pad2d", "stack", "tensor", "where", "zeros",
    "ConvSpec", "conv2d", "conv_transpose2d",
    "dft2_naive", "fft2", "ifft2", "irfft2", "rfft2",
    "batchnorm2d", "bce", "bce_with_logits", "gelu", "layernorm", "leaky_relu", "log_softmax", "relu",
    "resize_nearest", "sigmoid", "softmax", "softplus", "tanh",
    "grad_check", "grad_check_reference",
]
