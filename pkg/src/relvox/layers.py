"""Layer specifications for the volumetric network.

Each spec is a plain dataclass holding its parameters as float32 arrays.
Weight layout follows the channel-major convention: convolution weights are
(Cout, Cin, k, k, k); up-convolution weights are (Cin, Cout, k, k, k), the
transposed-convolution convention.
"""

from dataclasses import dataclass, field
from typing import Optional, Tuple, Union

import numpy as np

from .errors import ShapeError


def _check_cubic(weight, kind):
    if weight.ndim != 5:
        raise ShapeError(f"{kind} weight must have rank 5, got rank {weight.ndim}")
    kd, kh, kw = weight.shape[2:]
    if not (kd == kh == kw):
        raise ShapeError(f"{kind} kernel must be cubic, got {(kd, kh, kw)}")


@dataclass
class Conv3d:
    weight: np.ndarray  # (Cout, Cin, k, k, k)
    bias: np.ndarray    # (Cout,)
    stride: int = 1
    padding: int = 0

    def __post_init__(self):
        _check_cubic(self.weight, "conv3d")
        if self.bias.shape != (self.weight.shape[0],):
            raise ShapeError(
                f"conv3d bias length {self.bias.shape} does not match Cout {self.weight.shape[0]}")

    @property
    def in_channels(self):
        return self.weight.shape[1]

    @property
    def out_channels(self):
        return self.weight.shape[0]

    @property
    def kernel(self):
        return self.weight.shape[2]


@dataclass
class UpConv3d:
    weight: np.ndarray  # (Cin, Cout, k, k, k)
    bias: np.ndarray    # (Cout,)
    stride: int = 2
    crop: Optional[Tuple[int, int, int]] = None  # target spatial dims after up-sampling

    def __post_init__(self):
        _check_cubic(self.weight, "upconv3d")
        if self.bias.shape != (self.weight.shape[1],):
            raise ShapeError(
                f"upconv3d bias length {self.bias.shape} does not match Cout {self.weight.shape[1]}")

    @property
    def in_channels(self):
        return self.weight.shape[0]

    @property
    def out_channels(self):
        return self.weight.shape[1]

    @property
    def kernel(self):
        return self.weight.shape[2]


@dataclass
class BatchNorm:
    """Inference-mode batch normalisation: fixed running statistics."""
    scale: np.ndarray
    shift: np.ndarray
    mean: np.ndarray
    var: np.ndarray
    eps: float = 1e-5

    def __post_init__(self):
        n = self.scale.shape[0]
        for name in ("shift", "mean", "var"):
            if getattr(self, name).shape != (n,):
                raise ShapeError(f"batchnorm {name} must have shape ({n},)")
        if not (self.var > 0).all():
            raise ShapeError("batchnorm running variance must be strictly positive")


@dataclass
class ReLU:
    pass


@dataclass
class Sigmoid:
    pass


@dataclass
class MaxPool3d:
    kernel: int = 2


@dataclass
class Concat:
    """Channel concatenation with the saved output of an earlier layer.

    The saved (skip) tensor provides the first `source_channels` channels of
    the output; the incoming stream tensor provides the rest.
    """
    source: int
    source_channels: int


LayerSpec = Union[Conv3d, UpConv3d, BatchNorm, ReLU, Sigmoid, MaxPool3d, Concat]

PARAM_FIELDS = {
    Conv3d: ("weight", "bias"),
    UpConv3d: ("weight", "bias"),
    BatchNorm: ("scale", "shift", "mean", "var"),
    ReLU: (),
    Sigmoid: (),
    MaxPool3d: (),
    Concat: (),
}

# Parameters the optimiser updates (BatchNorm running stats are frozen).
LEARNABLE_FIELDS = {
    Conv3d: ("weight", "bias"),
    UpConv3d: ("weight", "bias"),
    BatchNorm: ("scale", "shift"),
}


def param_items(layers):
    """Yield (layer_id, field_name, array) over all stored parameters."""
    for lid, spec in enumerate(layers):
        for name in PARAM_FIELDS[type(spec)]:
            yield lid, name, getattr(spec, name)
