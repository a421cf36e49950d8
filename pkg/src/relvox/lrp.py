"""Backward relevance propagation through the volumetric network.

The redistribution rule keeps only non-negative weights: with a the cached
layer input and w+ = max(w, 0),

    R_i = sum_j  a_i w+_ij / (sum_k a_k w+_kj + eps)  *  R_j

applied in the linearised form of each layer (conv, up-conv, or dense).
Biases are ignored.  Activation and batch-norm layers pass relevance
through unchanged; max-pooling routes each output's relevance entirely to
the winning input voxel; channel concatenation is reversed by cleaving the
relevance tensor into the two concatenated parts.

Output units whose positive pre-activation sum is exactly zero absorb their
relevance; these events are counted and reported on the RelevanceMap.
"""

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple, Union

import numpy as np

from .errors import ConsistencyError, ShapeError
from .filters import FilterSpec, apply_filtered
from .kernels import (ActivationCache, _col2im, _conv_raw, _embed_crop,
                      _im2col, _upconv_raw, apply_layer, check_cache)
from .layers import (BatchNorm, Concat, Conv3d, MaxPool3d, ReLU, Sigmoid,
                     UpConv3d)

EPS_STAB = 1e-9

FINAL = "final"

PREDICTED_POSITIVE = "predicted_positive"
FULL_OUTPUT = "full_output"
MASKED = "masked"


@dataclass(frozen=True)
class SeedSpec:
    """How the network output becomes the initial relevance R at the top.

    predicted_positive: output values on voxels predicted above `threshold`,
    zero elsewhere.  full_output: the raw output everywhere.  masked: output
    gated by a caller-supplied binary mask.
    """
    mode: str = PREDICTED_POSITIVE
    threshold: float = 0.5
    mask: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.mode not in (PREDICTED_POSITIVE, FULL_OUTPUT, MASKED):
            raise ShapeError(f"unknown seed mode '{self.mode}'")
        if self.mode == MASKED and self.mask is None:
            raise ShapeError("masked seeding requires a mask")


def seed_relevance(output, spec: SeedSpec) -> Tuple[np.ndarray, bool]:
    """Build R at the output layer.  Returns (relevance, warned) where
    `warned` flags a predicted_positive seed with no voxel above threshold."""
    output = np.asarray(output, dtype=np.float32)
    if spec.mode == FULL_OUTPUT:
        return output.copy(), False
    if spec.mode == MASKED:
        mask = np.asarray(spec.mask)
        if mask.shape != output.shape:
            raise ShapeError(
                f"seed mask shape {mask.shape} does not match output shape {output.shape}")
        return (output * (mask != 0)).astype(np.float32), False
    gate = output > spec.threshold
    return (output * gate).astype(np.float32), not bool(gate.any())


# FilterPlan: insertion point (layer id, or FINAL for the input-level map)
# to the FilterSpec applied there.
FilterPlan = Dict[Union[int, str], FilterSpec]


@dataclass
class RelevanceMap:
    """Per-layer relevance from the output back to the input.

    `entries` holds (layer_id, relevance-at-that-layer's-input) in traversal
    order (deepest layer first); `seed` is the output-level relevance; the
    input-level map R at the network input is `input_relevance`.
    """
    seed: np.ndarray
    entries: List[Tuple[int, np.ndarray]]
    absorbed: int = 0
    seed_warning: bool = False

    @property
    def input_relevance(self):
        return self.entries[-1][1]

    def layer_relevance(self, lid):
        for i, r in self.entries:
            if i == lid:
                return r
        raise KeyError(lid)


def relprop_zplus(a, weights, r_next, eps_stab=EPS_STAB):
    """Dense-matrix form of the rule: weights (n_out, n_in), a (n_in,)."""
    a = np.asarray(a, dtype=np.float64)
    w = np.asarray(weights, dtype=np.float64)
    r = np.asarray(r_next, dtype=np.float64)
    wp = np.maximum(w, 0.0)
    z = wp @ a
    s = np.where(z == 0.0, 0.0, r / (z + eps_stab))
    return (a * (wp.T @ s)).astype(np.float32)


def count_absorbed(z, r_next):
    return int(np.count_nonzero((z == 0.0) & (np.asarray(r_next) != 0.0)))


def relprop_conv3d(a, spec: Conv3d, r_next, eps_stab=EPS_STAB):
    """Conv layer under the non-negative-weight rule; returns (R, absorbed)."""
    wp = np.maximum(spec.weight, 0.0).astype(np.float64)
    z = _conv_raw(a, wp, None, spec.stride, spec.padding)
    if r_next.shape != z.shape:
        raise ShapeError(f"relevance shape {r_next.shape} does not match layer output {z.shape}")
    absorbed = count_absorbed(z, r_next)
    s = np.where(z == 0.0, 0.0, r_next.astype(np.float64) / (z + eps_stab))
    k, p = spec.kernel, spec.padding
    w2 = wp.reshape(spec.out_channels, -1)
    g_cols = w2.T @ s.reshape(spec.out_channels, -1)
    cp = _col2im(g_cols, a.shape[0], a.shape[1] + 2 * p, a.shape[2] + 2 * p,
                 a.shape[3] + 2 * p, k, spec.stride)
    c = cp[:, p:p + a.shape[1], p:p + a.shape[2], p:p + a.shape[3]] if p else cp
    return (a.astype(np.float64) * c).astype(np.float32), absorbed


def relprop_upconv3d(a, spec: UpConv3d, r_next, eps_stab=EPS_STAB):
    """Up-conv layer: same rule under the transposed linear map."""
    wp = np.maximum(spec.weight, 0.0).astype(np.float64)
    z = _upconv_raw(a, wp, None, spec.stride, spec.crop)
    if r_next.shape != z.shape:
        raise ShapeError(f"relevance shape {r_next.shape} does not match layer output {z.shape}")
    absorbed = count_absorbed(z, r_next)
    s = np.where(z == 0.0, 0.0, r_next.astype(np.float64) / (z + eps_stab))
    k, st = spec.kernel, spec.stride
    d, h, w = a.shape[1:]
    full = (st * (d - 1) + k, st * (h - 1) + k, st * (w - 1) + k)
    s_full = _embed_crop(s, spec, full)
    s_cols, _ = _im2col(s_full, k, st)
    w2 = wp.reshape(spec.in_channels, -1)
    c = (w2 @ s_cols).reshape(a.shape)
    return (a.astype(np.float64) * c).astype(np.float32), absorbed


def relprop_maxpool(winners, r_next, input_shape):
    """Route each output's relevance to its winning input voxel."""
    if winners.shape != r_next.shape:
        raise ConsistencyError(
            f"winner index shape {winners.shape} does not match relevance {r_next.shape}: "
            "stale cache?")
    out = np.zeros(int(np.prod(input_shape)), dtype=np.float32)
    np.add.at(out, winners.ravel(), r_next.ravel())
    return out.reshape(input_shape)


def relprop_concat_split(r, shape_a, shape_b):
    """Cleave relevance into the two concatenated parts (a's channels first)."""
    ca, cb = shape_a[0], shape_b[0]
    if r.shape[0] != ca + cb:
        raise ShapeError(
            f"relevance has {r.shape[0]} channels, expected {ca} + {cb} from the concat parts")
    if r.shape[1:] != tuple(shape_a[1:]) or r.shape[1:] != tuple(shape_b[1:]):
        raise ShapeError(
            f"relevance spatial dims {r.shape[1:]} do not match concat parts "
            f"{tuple(shape_a[1:])} / {tuple(shape_b[1:])}")
    return r[:ca].copy(), r[ca:].copy()


def relprop_passthrough(r_next):
    """Identity rule for activation and batch-norm layers."""
    return r_next


def normalize_abs(r_c):
    """Divide a single-channel map by its max magnitude; all-zero stays zero."""
    r_c = np.asarray(r_c, dtype=np.float32)
    m = float(np.abs(r_c).max()) if r_c.size else 0.0
    if m == 0.0:
        return np.zeros_like(r_c)
    return (r_c / np.float32(m)).astype(np.float32)


def _apply_plan_filter(r, spec: FilterSpec):
    if r.ndim == 4:
        return np.stack([apply_filtered(r[c], spec) for c in range(r.shape[0])])
    return apply_filtered(r, spec)


def run_lrp(net, cache: ActivationCache, seed: SeedSpec = SeedSpec(),
            plan: Optional[FilterPlan] = None, eps_stab=EPS_STAB) -> RelevanceMap:
    """Traverse the network in reverse, redistributing relevance layer by layer.

    `plan` maps insertion points to filters applied (in normalised form) to
    the relevance computed at that point; FINAL means the input-level map.
    """
    check_cache(net, cache)
    layers = net.layers
    plan = dict(plan or {})
    for key in plan:
        if key != FINAL and not (isinstance(key, int) and 0 <= key < len(layers)):
            raise ShapeError(f"filter plan references unknown layer '{key}'")

    last = len(layers) - 1
    if isinstance(layers[last], (MaxPool3d, Concat)):
        raise ShapeError("networks ending in a pooling or concat layer are not supported by run_lrp")
    output = apply_layer(layers[last], cache.inputs[last])
    r_seed, warned = seed_relevance(output, seed)

    rel_at = {last: r_seed.copy()}
    entries = []
    absorbed = 0
    for lid in range(last, -1, -1):
        spec = layers[lid]
        r_out = rel_at.pop(lid)
        a = cache.inputs[lid]
        if isinstance(spec, Conv3d):
            r_in, n_abs = relprop_conv3d(a, spec, r_out, eps_stab)
            absorbed += n_abs
        elif isinstance(spec, UpConv3d):
            r_in, n_abs = relprop_upconv3d(a, spec, r_out, eps_stab)
            absorbed += n_abs
        elif isinstance(spec, MaxPool3d):
            r_in = relprop_maxpool(cache.winners[lid], r_out, a.shape)
        elif isinstance(spec, Concat):
            shape_a = (spec.source_channels,) + a.shape[1:]
            r_a, r_in = relprop_concat_split(r_out, shape_a, a.shape)
            _merge(rel_at, spec.source, r_a)
        elif isinstance(spec, (ReLU, Sigmoid, BatchNorm)):
            r_in = relprop_passthrough(r_out)
        else:
            raise TypeError(f"unsupported layer spec {type(spec).__name__}")
        if lid in plan:
            r_in = _apply_plan_filter(r_in, plan[lid])
        entries.append((lid, r_in))
        if lid > 0:
            _merge(rel_at, lid - 1, r_in)
    if FINAL in plan:
        r0 = _apply_plan_filter(entries[-1][1], plan[FINAL])
        entries[-1] = (0, r0)
    return RelevanceMap(seed=r_seed, entries=entries, absorbed=absorbed, seed_warning=warned)


def _merge(store, key, value):
    if key in store:
        store[key] = store[key] + value
    else:
        store[key] = value
