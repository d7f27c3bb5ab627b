"""Numerical substrate: FFT, layers, densities, Adam, RNG, tensor container."""

from .adam import AdamState, adam_step
from .container import (
    ContainerError,
    DtypeError,
    MagicError,
    TruncatedFileError,
    read_tensors,
    write_tensors,
)
from .fft import fft2, ifft2
from .gaussians import gaussian_logpdf_diag, kl_to_standard_normal
from .layers import (
    LayerParams,
    conv3x3_backward,
    conv3x3_forward,
    dense_backward,
    dense_forward,
    layer_apply,
    layer_backward,
    relu,
    relu_backward,
)
from .rng import Rng, truncated_normal

__all__ = [
    "AdamState",
    "adam_step",
    "ContainerError",
    "DtypeError",
    "MagicError",
    "TruncatedFileError",
    "read_tensors",
    "write_tensors",
    "fft2",
    "ifft2",
    "gaussian_logpdf_diag",
    "kl_to_standard_normal",
    "LayerParams",
    "conv3x3_backward",
    "conv3x3_forward",
    "dense_backward",
    "dense_forward",
    "layer_apply",
    "layer_backward",
    "relu",
    "relu_backward",
    "Rng",
    "truncated_normal",
]
