"""Inclusivity coefficients, binarisation, per-channel signal statistics,
and the alpha-sweep harness.

Inclusivity D(a, b) = |a n b| / (|b| + eps) measures how much of mask b the
mask a covers.  Signal statistics are taken on the normalised (max-magnitude
1) channel after filtering: mu is the spatial mean, area the spatial mean of
magnitudes, and omega_tilde the pre-filter fraction of voxels above the
filter's upper amplitude.
"""

import csv
from dataclasses import dataclass
from typing import List, Optional, Sequence, Union

import numpy as np

from .errors import ShapeError
from .filters import CLAMP, PASS, FilterSpec, apply_filtered
from .kernels import forward
from .lrp import SeedSpec, normalize_abs, run_lrp
from .training import dice

INCLUSIVITY_EPS = 1e-6

# Default binarisation: input channels keep their high-intensity half;
# relevance maps count any surviving non-zero signal.
THETA_INPUT = 0.5
THETA_RELEVANCE = 0.0

SWEEP_HEADER = ["case", "channel", "alpha_lo", "alpha_hi", "filter_kind",
                "mu", "area", "omega_tilde", "incl_x", "incl_gt", "dice", "valid"]


def binarize(vol, theta_rel):
    """Mask of voxels with |v| >= theta_rel * max|v|, excluding exact zeros."""
    if not (0.0 <= theta_rel <= 1.0):
        raise ShapeError(f"theta_rel must lie in [0, 1], got {theta_rel}")
    mag = np.abs(np.asarray(vol, dtype=np.float32))
    m = float(mag.max()) if mag.size else 0.0
    return (mag >= theta_rel * m) & (mag > 0)


def inclusivity(a, b, eps=INCLUSIVITY_EPS):
    """|a n b| / (|b| + eps) for binary masks of equal shape."""
    a = np.asarray(a, dtype=bool)
    b = np.asarray(b, dtype=bool)
    if a.shape != b.shape:
        raise ShapeError(f"mask shapes differ: {a.shape} vs {b.shape}")
    return float(int((a & b).sum()) / (int(b.sum()) + eps))


@dataclass
class SignalStats:
    mu: float
    area: float
    omega_tilde: float
    max_abs: float
    valid: bool


def signal_stats(r_c, spec: FilterSpec, position_weighted=False) -> SignalStats:
    """Normalise a single-channel map, filter it, and summarise it.

    `position_weighted` switches mu to the index-weighted spatial mean
    (weights rise linearly from 0 to 1 across the flattened volume).
    """
    r_c = np.asarray(r_c, dtype=np.float32)
    max_abs = float(np.abs(r_c).max()) if r_c.size else 0.0
    if max_abs == 0.0:
        return SignalStats(mu=0.0, area=0.0, omega_tilde=0.0, max_abs=0.0, valid=False)
    v = normalize_abs(r_c)
    filtered = spec(v).astype(np.float64)
    if position_weighted:
        w = np.linspace(0.0, 1.0, v.size)
        mu = float((w * filtered.ravel()).mean())
    else:
        mu = float(filtered.mean())
    area = float(np.abs(filtered).mean())
    omega = float((np.abs(v) > spec.hi).mean())
    return SignalStats(mu=mu, area=area, omega_tilde=omega, max_abs=max_abs, valid=True)


@dataclass
class InclusivityRow:
    case_id: str
    channel: int
    spec: FilterSpec
    incl_x: float
    incl_gt: float
    theta_x: float
    theta_lrp: float
    valid: bool


def inclusivity_report(relevance, image, gt_mask, spec: Optional[FilterSpec],
                       case_id="case", theta_x=THETA_INPUT,
                       theta_lrp=THETA_RELEVANCE) -> List[InclusivityRow]:
    """Per-channel input- and ground-truth inclusivity of a relevance map.

    `spec` of None means the raw (unfiltered) map.
    """
    if relevance.shape != image.shape:
        raise ShapeError(
            f"relevance shape {relevance.shape} does not match image shape {image.shape}")
    rows = []
    echo = spec if spec is not None else FilterSpec(PASS, 0.0, 1.0)
    for c in range(relevance.shape[0]):
        r_c = relevance[c] if spec is None else apply_filtered(relevance[c], spec)
        valid = bool(np.abs(relevance[c]).max() > 0)
        lrp_mask = binarize(r_c, theta_lrp)
        rows.append(InclusivityRow(
            case_id=case_id, channel=c, spec=echo,
            incl_x=inclusivity(lrp_mask, binarize(image[c], theta_x)),
            incl_gt=inclusivity(lrp_mask, np.asarray(gt_mask, dtype=bool)),
            theta_x=theta_x, theta_lrp=theta_lrp, valid=valid))
    return rows


@dataclass
class SweepRow:
    case_id: str
    channel: int
    spec: FilterSpec
    stats: SignalStats
    incl_x: float
    incl_gt: float
    dice: float


AlphaLike = Union[float, Sequence[float]]


def make_filter(family: str, alpha: AlphaLike) -> FilterSpec:
    if family == CLAMP:
        return FilterSpec(CLAMP, hi=float(alpha))
    if isinstance(alpha, (tuple, list)):
        lo, hi = alpha
        return FilterSpec(PASS, float(lo), float(hi))
    return FilterSpec(PASS, 0.0, float(alpha))


def alpha_sweep(net, dataset, filter_family: str, alphas: Sequence[AlphaLike],
                seed_spec: SeedSpec = SeedSpec(), theta_x=THETA_INPUT,
                theta_lrp=THETA_RELEVANCE, threshold=0.5) -> List[SweepRow]:
    """One row per (case, channel, alpha), in that sorted order.

    Each case gets a single forward+LRP pass; filters are applied to the
    input-level relevance per channel.  All-zero relevance channels are
    flagged invalid and keep zero statistics.
    """
    if not dataset:
        raise ShapeError("alpha_sweep needs a nonempty dataset")
    specs = [make_filter(filter_family, a) for a in alphas]
    rows = []
    for case in dataset:
        out, cache = forward(net, case.image)
        case_dice = dice(out[0] > threshold, case.mask)
        rmap = run_lrp(net, cache, seed=seed_spec)
        r0 = rmap.input_relevance
        gt = np.asarray(case.mask, dtype=bool)
        for c in range(r0.shape[0]):
            x_mask = binarize(case.image[c], theta_x)
            for spec in specs:
                stats = signal_stats(r0[c], spec)
                if stats.valid:
                    filtered = apply_filtered(r0[c], spec)
                    lrp_mask = binarize(filtered, theta_lrp)
                    incl_x = inclusivity(lrp_mask, x_mask)
                    incl_gt = inclusivity(lrp_mask, gt)
                else:
                    incl_x = 0.0
                    incl_gt = 0.0
                rows.append(SweepRow(case_id=case.case_id, channel=c, spec=spec,
                                     stats=stats, incl_x=incl_x, incl_gt=incl_gt,
                                     dice=case_dice))
    return rows


def write_sweep_csv(rows: Sequence[SweepRow], path):
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(SWEEP_HEADER)
        for r in rows:
            w.writerow([r.case_id, r.channel, f"{r.spec.lo:g}", f"{r.spec.hi:g}",
                        r.spec.kind, f"{r.stats.mu:.9g}", f"{r.stats.area:.9g}",
                        f"{r.stats.omega_tilde:.9g}", f"{r.incl_x:.9g}",
                        f"{r.incl_gt:.9g}", f"{r.dice:.9g}", int(r.stats.valid)])


def write_inclusivity_csv(rows: Sequence[InclusivityRow], path):
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["case", "channel", "filter_kind", "alpha_lo", "alpha_hi",
                    "incl_x", "incl_gt", "theta_x", "theta_lrp", "valid"])
        for r in rows:
            w.writerow([r.case_id, r.channel, r.spec.kind, f"{r.spec.lo:g}",
                        f"{r.spec.hi:g}", f"{r.incl_x:.9g}", f"{r.incl_gt:.9g}",
                        f"{r.theta_x:g}", f"{r.theta_lrp:g}", int(r.valid)])
