"""Compress 3D volumes into three-channel 2D surrogates for frozen 2D feature extractors."""

from .network import NetConfig, SurrogateNet, mvsc_forward
from .selection import SelectionConfig, select_topk
from .tensor import Tensor, backward, grad_check, no_grad
from .volume import Volume, load_volume, normalize_intensity, stack_channels, write_volume

__all__ = [
    "NetConfig",
    "SelectionConfig",
    "SurrogateNet",
    "Tensor",
    "Volume",
    "backward",
    "grad_check",
    "load_volume",
    "mvsc_forward",
    "no_grad",
    "normalize_intensity",
    "select_topk",
    "stack_channels",
    "write_volume",
]

__version__ = "0.1.0"
