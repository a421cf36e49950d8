"""Forward/backward numerical kernels for every layer type.

All public tensors are float32 in (C, D, H, W) layout.  Reductions
(convolution dot products, channel sums) run in float64 and are rounded
back to float32 once per operation, so results do not depend on thread
count or accumulation order tricks.

Convolutions use the im2col/col2im pair; the up-convolution is implemented
as the exact adjoint (matmul followed by col2im scatter), which keeps the
LRP and gradient paths symmetric.
"""

from dataclasses import dataclass
from typing import Dict, List, Tuple

import numpy as np

from .errors import ConsistencyError, NonFiniteError, ShapeError
from .layers import (BatchNorm, Concat, Conv3d, MaxPool3d, ReLU, Sigmoid,
                     UpConv3d)


# ---------------------------------------------------------------------------
# im2col / col2im


def _out_dim(n, k, stride):
    return (n - k) // stride + 1


def _im2col(xp, k, stride):
    """Unfold padded (C, D, H, W) into (C*k^3, L) kernel windows."""
    c, dp, hp, wp = xp.shape
    do, ho, wo = _out_dim(dp, k, stride), _out_dim(hp, k, stride), _out_dim(wp, k, stride)
    cols = np.empty((c, k, k, k, do, ho, wo), dtype=xp.dtype)
    for kd in range(k):
        for kh in range(k):
            for kw in range(k):
                cols[:, kd, kh, kw] = xp[:, kd:kd + stride * do:stride,
                                            kh:kh + stride * ho:stride,
                                            kw:kw + stride * wo:stride]
    return cols.reshape(c * k ** 3, do * ho * wo), (do, ho, wo)


def _col2im(cols, c, dp, hp, wp, k, stride):
    """Scatter-add (C*k^3, L) windows back into a (C, Dp, Hp, Wp) volume."""
    do, ho, wo = _out_dim(dp, k, stride), _out_dim(hp, k, stride), _out_dim(wp, k, stride)
    out = np.zeros((c, dp, hp, wp), dtype=np.float64)
    colsr = cols.reshape(c, k, k, k, do, ho, wo)
    for kd in range(k):
        for kh in range(k):
            for kw in range(k):
                out[:, kd:kd + stride * do:stride,
                       kh:kh + stride * ho:stride,
                       kw:kw + stride * wo:stride] += colsr[:, kd, kh, kw]
    return out


def _pad_zeros(x, p):
    if p == 0:
        return x
    return np.pad(x, ((0, 0), (p, p), (p, p), (p, p)))


# ---------------------------------------------------------------------------
# convolution


def _check_conv_input(x, spec, kind):
    if x.ndim != 4:
        raise ShapeError(f"{kind} input must have rank 4, got shape {x.shape}")
    if x.shape[0] != spec.in_channels:
        raise ShapeError(
            f"{kind} input has {x.shape[0]} channels on the channel axis, expected {spec.in_channels}")


def _conv_raw(x, weight, bias, stride, padding):
    """Convolution with float64 accumulation; returns float64."""
    k = weight.shape[2]
    cout = weight.shape[0]
    xp = _pad_zeros(x, padding).astype(np.float64)
    for i, n in enumerate(xp.shape[1:]):
        if n < k:
            name = ("depth", "height", "width")[i]
            raise ShapeError(
                f"conv3d kernel {k} does not fit along the {name} axis (padded size {n})")
    cols, (do, ho, wo) = _im2col(xp, k, stride)
    w2 = weight.reshape(cout, -1).astype(np.float64)
    out = w2 @ cols
    if bias is not None:
        out += bias.astype(np.float64)[:, None]
    return out.reshape(cout, do, ho, wo)


def conv3d(x, spec: Conv3d):
    """Dense 3D convolution.  Output spatial dim: (n + 2*pad - k)//stride + 1."""
    _check_conv_input(x, spec, "conv3d")
    return _conv_raw(x, spec.weight, spec.bias, spec.stride, spec.padding).astype(np.float32)


def _conv_backward(a, spec: Conv3d, g_out):
    """Gradients of a conv layer: (g_input, g_weight, g_bias)."""
    k, p, s = spec.kernel, spec.padding, spec.stride
    cout = spec.out_channels
    ap = _pad_zeros(a, p).astype(np.float64)
    cols, _ = _im2col(ap, k, s)
    g_flat = g_out.reshape(cout, -1).astype(np.float64)
    g_w = (g_flat @ cols.T).reshape(spec.weight.shape)
    g_b = g_flat.sum(axis=1)
    w2 = spec.weight.reshape(cout, -1).astype(np.float64)
    g_cols = w2.T @ g_flat
    g_xp = _col2im(g_cols, a.shape[0], *ap.shape[1:], k, s)
    g_x = g_xp[:, p:p + a.shape[1], p:p + a.shape[2], p:p + a.shape[3]] if p else g_xp
    return (g_x.astype(np.float32), g_w.astype(np.float32), g_b.astype(np.float32))


# ---------------------------------------------------------------------------
# up-convolution (transposed)


def _upconv_raw(x, weight, bias, stride, crop):
    """Transposed convolution; float64 result.  Output dim: stride*(n-1) + k."""
    cin, cout = weight.shape[0], weight.shape[1]
    k = weight.shape[2]
    d, h, w = x.shape[1:]
    full = (stride * (d - 1) + k, stride * (h - 1) + k, stride * (w - 1) + k)
    w2 = weight.reshape(cin, -1).astype(np.float64)          # (Cin, Cout*k^3)
    cols = w2.T @ x.reshape(cin, -1).astype(np.float64)      # (Cout*k^3, L)
    out = _col2im(cols, cout, *full, k, stride)
    if crop is not None:
        cd, ch, cw = crop
        if cd > full[0] or ch > full[1] or cw > full[2]:
            raise ShapeError(f"upconv3d crop {crop} exceeds full output {full}")
        out = out[:, :cd, :ch, :cw]
    if bias is not None:
        out = out + bias.astype(np.float64)[:, None, None, None]
    return out


def upconv3d(x, spec: UpConv3d):
    """Transposed 3D convolution with optional trailing crop."""
    _check_conv_input(x, spec, "upconv3d")
    return _upconv_raw(x, spec.weight, spec.bias, spec.stride, spec.crop).astype(np.float32)


def _embed_crop(g, spec: UpConv3d, full):
    """Zero-embed a cropped-gradient tensor back into the full output shape."""
    if spec.crop is None:
        return g
    out = np.zeros((g.shape[0],) + full, dtype=g.dtype)
    out[:, :g.shape[1], :g.shape[2], :g.shape[3]] = g
    return out


def _upconv_backward(a, spec: UpConv3d, g_out):
    k, s = spec.kernel, spec.stride
    d, h, w = a.shape[1:]
    full = (s * (d - 1) + k, s * (h - 1) + k, s * (w - 1) + k)
    g_b = g_out.astype(np.float64).sum(axis=(1, 2, 3))
    g_full = _embed_crop(g_out, spec, full).astype(np.float64)
    g_cols, _ = _im2col(g_full, k, s)                        # (Cout*k^3, L)
    w2 = spec.weight.reshape(spec.in_channels, -1).astype(np.float64)
    g_x = (w2 @ g_cols).reshape(a.shape)
    g_w = (a.reshape(a.shape[0], -1).astype(np.float64) @ g_cols.T).reshape(spec.weight.shape)
    return (g_x.astype(np.float32), g_w.astype(np.float32), g_b.astype(np.float32))


# ---------------------------------------------------------------------------
# pooling


def maxpool3d(x, k=2):
    """Max pooling with replicate padding on odd trailing faces.

    Returns (pooled, winners) where winners holds, for every output voxel,
    the flat index into the *unpadded* input of its maximum.  Ties go to the
    lowest flat index.
    """
    if x.ndim != 4:
        raise ShapeError(f"maxpool3d input must have rank 4, got shape {x.shape}")
    c, d, h, w = x.shape
    pads = ((0, 0), (0, (-d) % k), (0, (-h) % k), (0, (-w) % k))
    xp = np.pad(x, pads, mode="edge")
    idx = np.arange(x.size, dtype=np.int64).reshape(x.shape)
    idxp = np.pad(idx, pads, mode="edge")
    do, ho, wo = xp.shape[1] // k, xp.shape[2] // k, xp.shape[3] // k

    def windows(v):
        return (v.reshape(c, do, k, ho, k, wo, k)
                 .transpose(0, 1, 3, 5, 2, 4, 6)
                 .reshape(c, do, ho, wo, k ** 3))

    win = windows(xp)
    arg = win.argmax(axis=-1)[..., None]  # first occurrence = lowest flat index
    out = np.take_along_axis(win, arg, axis=-1)[..., 0]
    winners = np.take_along_axis(windows(idxp), arg, axis=-1)[..., 0]
    return out, winners


def maxpool3d_backward(winners, g_out, input_shape):
    g = np.zeros(int(np.prod(input_shape)), dtype=np.float32)
    np.add.at(g, winners.ravel(), g_out.ravel())
    return g.reshape(input_shape)


# ---------------------------------------------------------------------------
# elementwise layers


def relu(x):
    return np.maximum(x, 0.0).astype(np.float32, copy=False)


def sigmoid(x):
    z = np.exp(-np.abs(x.astype(np.float64)))
    out = np.where(x >= 0, 1.0 / (1.0 + z), z / (1.0 + z))
    return out.astype(np.float32)


def batchnorm_infer(x, spec: BatchNorm):
    """(x - mean) / sqrt(var + eps) * scale + shift, per channel."""
    if x.shape[0] != spec.scale.shape[0]:
        raise ShapeError(
            f"batchnorm input has {x.shape[0]} channels on the channel axis, "
            f"expected {spec.scale.shape[0]}")
    inv = (spec.scale / np.sqrt(spec.var + spec.eps)).astype(np.float32)
    b = (spec.shift - spec.mean * inv).astype(np.float32)
    return x * inv[:, None, None, None] + b[:, None, None, None]


def concat_channels(a, b):
    """Channel-wise concatenation, `a`'s channels first."""
    if a.shape[1:] != b.shape[1:]:
        for i in range(3):
            if a.shape[1 + i] != b.shape[1 + i]:
                name = ("depth", "height", "width")[i]
                raise ShapeError(
                    f"concat spatial mismatch on the {name} axis: {a.shape[1:]} vs {b.shape[1:]}")
    return np.concatenate([a, b], axis=0)


# ---------------------------------------------------------------------------
# whole-network forward / backward


@dataclass
class ActivationCache:
    """Per-layer forward inputs, in execution order, plus pooling winners."""
    inputs: List[np.ndarray]
    winners: Dict[int, np.ndarray]

    def __len__(self):
        return len(self.inputs)


def apply_layer(spec, x, skip=None):
    if isinstance(spec, Conv3d):
        return conv3d(x, spec)
    if isinstance(spec, UpConv3d):
        return upconv3d(x, spec)
    if isinstance(spec, ReLU):
        return relu(x)
    if isinstance(spec, Sigmoid):
        return sigmoid(x)
    if isinstance(spec, BatchNorm):
        return batchnorm_infer(x, spec)
    if isinstance(spec, Concat):
        return concat_channels(skip, x)
    raise TypeError(f"unsupported layer spec {type(spec).__name__}")


def forward(net, x) -> Tuple[np.ndarray, ActivationCache]:
    """Run the network, recording each layer's input and pooling winners."""
    layers = net.layers
    if not layers:
        raise ShapeError("network has no layers")
    x = np.ascontiguousarray(x, dtype=np.float32)
    if x.ndim != 4:
        raise ShapeError(f"network input must have rank 4, got shape {x.shape}")
    needed = {spec.source for spec in layers if isinstance(spec, Concat)}
    saved = {}
    inputs = []
    winners = {}
    cur = x
    for lid, spec in enumerate(layers):
        inputs.append(cur)
        try:
            if isinstance(spec, MaxPool3d):
                cur, win = maxpool3d(cur, spec.kernel)
                winners[lid] = win
            elif isinstance(spec, Concat):
                if spec.source not in saved:
                    raise ConsistencyError(
                        f"concat source {spec.source} does not precede its consumer")
                cur = apply_layer(spec, cur, skip=saved[spec.source])
            else:
                cur = apply_layer(spec, cur)
        except ShapeError as e:
            raise ShapeError(f"layer {lid} ({type(spec).__name__}): {e}") from e
        if lid in saved:
            raise ConsistencyError("duplicate layer id in wiring")
        if lid in needed:
            saved[lid] = cur
    if not np.isfinite(cur).all():
        raise NonFiniteError("network output contains NaN or Inf")
    return cur, ActivationCache(inputs=inputs, winners=winners)


def check_cache(net, cache):
    if len(cache) != len(net.layers):
        raise ConsistencyError(
            f"cache has {len(cache)} entries for a network with {len(net.layers)} layers")
    for lid, spec in enumerate(net.layers):
        if isinstance(spec, (Conv3d, UpConv3d)) and cache.inputs[lid].shape[0] != spec.in_channels:
            raise ConsistencyError(
                f"cache entry {lid} has {cache.inputs[lid].shape[0]} channels, "
                f"layer expects {spec.in_channels}")
        if isinstance(spec, MaxPool3d) and lid not in cache.winners:
            raise ConsistencyError(f"cache is missing pooling winners for layer {lid}")


def backward(net, cache: ActivationCache, g_output):
    """Parameter gradients for a forward pass recorded in `cache`.

    Returns {layer_id: {field_name: gradient}} for every learnable
    parameter, each gradient shaped like the parameter itself.
    """
    check_cache(net, cache)
    layers = net.layers
    last = len(layers) - 1
    grad_at = {last: np.ascontiguousarray(g_output, dtype=np.float32)}
    grads = {}
    for lid in range(last, -1, -1):
        spec = layers[lid]
        g = grad_at.pop(lid)
        a = cache.inputs[lid]
        if isinstance(spec, Conv3d):
            g_in, g_w, g_b = _conv_backward(a, spec, g)
            grads[lid] = {"weight": g_w, "bias": g_b}
        elif isinstance(spec, UpConv3d):
            g_in, g_w, g_b = _upconv_backward(a, spec, g)
            grads[lid] = {"weight": g_w, "bias": g_b}
        elif isinstance(spec, ReLU):
            g_in = g * (a > 0)
        elif isinstance(spec, Sigmoid):
            s = sigmoid(a)
            g_in = g * s * (1.0 - s)
        elif isinstance(spec, BatchNorm):
            inv = (spec.scale / np.sqrt(spec.var + spec.eps)).astype(np.float64)
            xhat = ((a - spec.mean[:, None, None, None])
                    / np.sqrt(spec.var + spec.eps)[:, None, None, None]).astype(np.float64)
            g64 = g.astype(np.float64)
            grads[lid] = {
                "scale": (g64 * xhat).sum(axis=(1, 2, 3)).astype(np.float32),
                "shift": g64.sum(axis=(1, 2, 3)).astype(np.float32),
            }
            g_in = (g64 * inv[:, None, None, None]).astype(np.float32)
        elif isinstance(spec, MaxPool3d):
            if g.shape != cache.winners[lid].shape:
                raise ConsistencyError(
                    f"gradient shape {g.shape} does not match pooling output "
                    f"{cache.winners[lid].shape} at layer {lid}: stale cache?")
            g_in = maxpool3d_backward(cache.winners[lid], g, a.shape)
        elif isinstance(spec, Concat):
            ca = spec.source_channels
            _accumulate(grad_at, spec.source, g[:ca])
            g_in = g[ca:]
        else:
            raise TypeError(f"unsupported layer spec {type(spec).__name__}")
        if lid > 0:
            _accumulate(grad_at, lid - 1, g_in)
    return grads


def _accumulate(store, key, value):
    if key in store:
        store[key] = store[key] + value
    else:
        store[key] = value
