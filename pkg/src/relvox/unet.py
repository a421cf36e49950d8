"""3D U-Net construction, initialisation, and weight serialisation.

Block recipe (per encoder level): two (conv3x3x3 -> batchnorm -> ReLU)
pairs; max-pool 2 between levels; each decoder stage is up-conv stride 2,
skip concatenation, then two conv blocks; a final 1x1x1 conv plus sigmoid
produces the per-voxel lesion probability.

Weights file (little-endian):
    magic "NNW1"
    u32 config-JSON length, JSON bytes (config echo)
    u32 tensor count
    per tensor: u16 name length, UTF-8 name, u8 rank, u32 dims[rank], f32 data
"""

import io
import json
import struct
from dataclasses import asdict, dataclass, field
from typing import List, Optional, Tuple

import numpy as np

from .errors import ConfigError, FormatError, ShapeError
from .layers import (BatchNorm, Concat, Conv3d, LayerSpec, MaxPool3d, ReLU,
                     Sigmoid, UpConv3d, param_items)

MAGIC = b"NNW1"


@dataclass
class UNetConfig:
    in_channels: int = 6
    out_channels: int = 1
    depth: int = 2
    base_filters: int = 8
    input_shape: Tuple[int, int, int, int] = (6, 19, 48, 48)

    def validate(self):
        if self.depth < 1:
            raise ConfigError(f"depth must be >= 1, got {self.depth}")
        if self.base_filters < 1:
            raise ConfigError("base_filters must be >= 1")
        if len(self.input_shape) != 4:
            raise ConfigError(f"input_shape must be (C, D, H, W), got {self.input_shape}")
        if self.input_shape[0] != self.in_channels:
            raise ConfigError(
                f"input_shape channel count {self.input_shape[0]} "
                f"does not match in_channels {self.in_channels}")
        dims = list(self.input_shape[1:])
        for level in range(self.depth - 1):
            dims = [(d + 1) // 2 for d in dims]  # replicate-pad then halve
            if min(dims) < 2:
                raise ConfigError(
                    f"input spatial dims {self.input_shape[1:]} collapse below 2 voxels "
                    f"at encoder level {level + 1}")


@dataclass
class Network:
    """Ordered layer list with skip wiring; parameters live in the specs."""
    layers: List[LayerSpec]
    config: Optional[UNetConfig] = None

    @property
    def in_channels(self):
        for spec in self.layers:
            if isinstance(spec, (Conv3d, UpConv3d)):
                return spec.in_channels
        return None

    def equals(self, other):
        if len(self.layers) != len(other.layers):
            return False
        for (_, _, a), (_, _, b) in zip(param_items(self.layers), param_items(other.layers)):
            if a.shape != b.shape or not np.array_equal(a, b):
                return False
        return True


def _zeros(*shape):
    return np.zeros(shape, dtype=np.float32)


def _conv_block(layers, cin, cout):
    layers.append(Conv3d(weight=_zeros(cout, cin, 3, 3, 3), bias=_zeros(cout), padding=1))
    layers.append(BatchNorm(scale=np.ones(cout, np.float32), shift=_zeros(cout),
                            mean=_zeros(cout), var=np.ones(cout, np.float32)))
    layers.append(ReLU())


def build(config: UNetConfig) -> Network:
    """Construct the network with zero conv weights (see init_kaiming)."""
    config.validate()
    layers: List[LayerSpec] = []
    dims = tuple(config.input_shape[1:])
    level_dims = []
    skip_ids = []

    ch = config.in_channels
    for level in range(config.depth):
        filters = config.base_filters * (2 ** level)
        _conv_block(layers, ch, filters)
        _conv_block(layers, filters, filters)
        ch = filters
        if level < config.depth - 1:
            level_dims.append(dims)
            skip_ids.append(len(layers) - 1)  # trailing ReLU of this level
            layers.append(MaxPool3d())
            dims = tuple((d + 1) // 2 for d in dims)

    for level in range(config.depth - 2, -1, -1):
        filters = config.base_filters * (2 ** level)
        target = level_dims[level]
        up_full = tuple(2 * d for d in dims)
        crop = target if up_full != target else None
        layers.append(UpConv3d(weight=_zeros(ch, filters, 2, 2, 2), bias=_zeros(filters),
                               stride=2, crop=crop))
        # ReLU before the concat keeps every activation in the network
        # non-negative, which the relevance redistribution rule needs to
        # conserve its totals.
        layers.append(ReLU())
        layers.append(Concat(source=skip_ids[level], source_channels=filters))
        _conv_block(layers, 2 * filters, filters)
        _conv_block(layers, filters, filters)
        ch = filters
        dims = target

    layers.append(Conv3d(weight=_zeros(config.out_channels, ch, 1, 1, 1),
                         bias=_zeros(config.out_channels), padding=0))
    layers.append(Sigmoid())
    return Network(layers=layers, config=config)


def expected_layer_count(depth):
    """Layer count emitted by the block recipe above."""
    return 16 * (depth - 1) + 8


def init_kaiming(net: Network, seed: int) -> Network:
    """He-normal conv/up-conv weights (variance 2/fan_in), zero biases.

    fan_in counts the inputs feeding one output unit: Cin*k^3 for a conv,
    Cin*(k/stride)^3 for an up-conv.
    """
    rng = np.random.default_rng(seed)
    for spec in net.layers:
        if isinstance(spec, Conv3d):
            fan_in = spec.in_channels * spec.kernel ** 3
            spec.weight = rng.normal(0.0, np.sqrt(2.0 / fan_in),
                                     size=spec.weight.shape).astype(np.float32)
            spec.bias = np.zeros_like(spec.bias)
        elif isinstance(spec, UpConv3d):
            fan_in = spec.in_channels * (spec.kernel ** 3) // (spec.stride ** 3)
            spec.weight = rng.normal(0.0, np.sqrt(2.0 / max(fan_in, 1)),
                                     size=spec.weight.shape).astype(np.float32)
            spec.bias = np.zeros_like(spec.bias)
    return net


def kaiming_fan_in(spec):
    if isinstance(spec, Conv3d):
        return spec.in_channels * spec.kernel ** 3
    if isinstance(spec, UpConv3d):
        return spec.in_channels * (spec.kernel ** 3) // (spec.stride ** 3)
    raise TypeError(type(spec).__name__)


# ---------------------------------------------------------------------------
# serialisation


def _param_name(lid, field_name):
    return f"layer{lid:03d}.{field_name}"


def save_weights(net: Network, path):
    if net.config is None:
        raise ConfigError("only networks built from a UNetConfig can be saved")
    tensors = [(_param_name(lid, name), arr) for lid, name, arr in param_items(net.layers)]
    cfg = json.dumps(asdict(net.config)).encode("utf-8")
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", len(cfg)))
        f.write(cfg)
        f.write(struct.pack("<I", len(tensors)))
        for name, arr in tensors:
            nb = name.encode("utf-8")
            f.write(struct.pack("<H", len(nb)))
            f.write(nb)
            f.write(struct.pack("<B", arr.ndim))
            f.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            f.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


class _Reader:
    def __init__(self, data):
        self.data = data
        self.off = 0

    def take(self, n, what):
        if self.off + n > len(self.data):
            raise FormatError(f"truncated weights file while reading {what}", offset=self.off)
        chunk = self.data[self.off:self.off + n]
        self.off += n
        return chunk

    def unpack(self, fmt, what):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))


def load_weights(path, config: Optional[UNetConfig] = None) -> Network:
    """Rebuild a network from a weights file; bitwise round trip of save_weights.

    When `config` is given it must match the stored config echo.
    """
    with open(path, "rb") as f:
        r = _Reader(f.read())
    if r.take(4, "magic") != MAGIC:
        raise FormatError("bad magic, not a NNW1 weights file", offset=0)
    (cfg_len,) = r.unpack("<I", "config length")
    try:
        echo = json.loads(r.take(cfg_len, "config echo").decode("utf-8"))
        stored = UNetConfig(in_channels=echo["in_channels"], out_channels=echo["out_channels"],
                            depth=echo["depth"], base_filters=echo["base_filters"],
                            input_shape=tuple(echo["input_shape"]))
    except (KeyError, ValueError, UnicodeDecodeError) as e:
        raise FormatError(f"unreadable config echo: {e}", offset=8) from e
    if config is not None and asdict(config) != asdict(stored):
        raise ConfigError(f"stored config {asdict(stored)} does not match requested {asdict(config)}")

    net = build(stored)
    expected = {_param_name(lid, name): (lid, name, arr.shape)
                for lid, name, arr in param_items(net.layers)}
    (count,) = r.unpack("<I", "tensor count")
    if count != len(expected):
        raise FormatError(
            f"file holds {count} tensors, network needs {len(expected)}", offset=r.off - 4)
    for _ in range(count):
        (name_len,) = r.unpack("<H", "tensor name length")
        name = r.take(name_len, "tensor name").decode("utf-8")
        (rank,) = r.unpack("<B", "tensor rank")
        dims = r.unpack(f"<{rank}I", "tensor dims")
        if name not in expected:
            raise ShapeError(f"unexpected tensor '{name}' for this configuration")
        lid, fname, shape = expected.pop(name)
        if tuple(dims) != shape:
            raise ShapeError(f"tensor '{name}' has dims {tuple(dims)}, network expects {shape}")
        n = int(np.prod(dims)) if rank else 1
        raw = r.take(4 * n, f"tensor '{name}' payload")
        arr = np.frombuffer(raw, dtype="<f4").reshape(dims).astype(np.float32)
        setattr(net.layers[lid], fname, arr)
    if expected:
        missing = sorted(expected)[0]
        raise ShapeError(f"weights file is missing tensor '{missing}'")
    return net
