"""Synthetic multi-modal volumes with ellipsoid lesions.

Each case carries a 6-channel float32 image in [0, 1] and a binary lesion
mask.  Channels mimic modalities through distinct intensity offsets inside
the lesion (some brighter, some darker than the surrounding tissue), on top
of a smooth low-frequency background.  Generation is a pure function of the
seed; lesions occupy between 0.5% and 10% of the volume.
"""

import json
import os
from dataclasses import dataclass
from typing import List, Sequence, Tuple

import numpy as np

from .errors import ConfigError, FormatError
from .volio import read_volume, write_volume

N_MODALITIES = 6

# Per-channel lesion offsets: sign and magnitude differ per pseudo-modality.
CHANNEL_OFFSETS = (0.45, 0.30, -0.30, -0.25, 0.40, 0.35)
# Background mean level per channel; darkened-lesion channels sit higher.
CHANNEL_BASE = (0.30, 0.30, 0.55, 0.50, 0.30, 0.30)

LESION_FRACTION = (0.005, 0.10)


@dataclass
class SyntheticCase:
    case_id: str
    image: np.ndarray  # (6, D, H, W) float32 in [0, 1]
    mask: np.ndarray   # (D, H, W) uint8
    seed: int


def _smooth_background(rng, base, dims):
    d, h, w = dims
    zz, yy, xx = np.meshgrid(np.linspace(0, 1, d), np.linspace(0, 1, h),
                             np.linspace(0, 1, w), indexing="ij")
    bg = np.full(dims, base, dtype=np.float64)
    for _ in range(3):
        freq = rng.uniform(0.5, 3.0, size=3)
        phase = rng.uniform(0.0, 2.0 * np.pi)
        amp = rng.uniform(0.02, 0.06)
        bg += amp * np.cos(2.0 * np.pi * (freq[0] * zz + freq[1] * yy + freq[2] * xx) + phase)
    bg += rng.normal(0.0, 0.01, size=dims)
    return bg


def _ellipsoid_mask(dims, center, radii):
    d, h, w = dims
    zz, yy, xx = np.meshgrid(np.arange(d), np.arange(h), np.arange(w), indexing="ij")
    return (((zz - center[0]) / radii[0]) ** 2
            + ((yy - center[1]) / radii[1]) ** 2
            + ((xx - center[2]) / radii[2]) ** 2) <= 1.0


def _sample_lesions(rng, dims):
    d, h, w = dims
    total = d * h * w
    for _ in range(64):
        mask = np.zeros(dims, dtype=bool)
        n_lesions = int(rng.integers(1, 3))
        for _ in range(n_lesions):
            radii = (float(rng.uniform(1.5, max(2.0, d / 5))),
                     float(rng.uniform(3.0, max(4.0, h / 6))),
                     float(rng.uniform(3.0, max(4.0, w / 6))))
            center = tuple(float(rng.uniform(r + 1, n - r - 1))
                           for r, n in zip(radii, dims))
            mask |= _ellipsoid_mask(dims, center, radii)
        frac = mask.sum() / total
        if LESION_FRACTION[0] <= frac <= LESION_FRACTION[1]:
            return mask
    raise ConfigError(f"could not place a lesion within the fraction bounds in dims {dims}")


def make_case(entropy, case_id, shape, seed=-1) -> SyntheticCase:
    rng = np.random.default_rng(entropy)
    dims = tuple(shape[1:])
    mask = _sample_lesions(rng, dims)
    channels = []
    for c in range(shape[0]):
        base = CHANNEL_BASE[c % N_MODALITIES]
        offset = CHANNEL_OFFSETS[c % N_MODALITIES] * float(rng.uniform(0.85, 1.15))
        bg = _smooth_background(rng, base, dims)
        channels.append(np.clip(bg + offset * mask, 0.0, 1.0))
    image = np.stack(channels).astype(np.float32)
    return SyntheticCase(case_id=case_id, image=image,
                         mask=mask.astype(np.uint8), seed=seed)


def gen_synthetic(seed, n_cases, shape=(6, 19, 48, 48)) -> List[SyntheticCase]:
    """Deterministic dataset of `n_cases` volumes at the given (C, D, H, W)."""
    if len(shape) != 4:
        raise ConfigError(f"shape must be (C, D, H, W), got {shape}")
    if min(shape[1:]) < 8:
        raise ConfigError(f"spatial dims must be >= 8, got {shape[1:]}")
    if n_cases < 1:
        raise ConfigError("n_cases must be >= 1")
    children = np.random.SeedSequence(seed).spawn(n_cases)
    return [make_case(child, f"case{idx:03d}", shape, seed=seed)
            for idx, child in enumerate(children)]


# ---------------------------------------------------------------------------
# on-disk dataset layout: <dir>/manifest.json + per-case image/mask volumes


def save_dataset(dataset: Sequence[SyntheticCase], directory):
    os.makedirs(directory, exist_ok=True)
    manifest = {"cases": []}
    for case in dataset:
        img = f"{case.case_id}_img.vol"
        msk = f"{case.case_id}_mask.vol"
        write_volume(case.image, os.path.join(directory, img))
        write_volume(case.mask, os.path.join(directory, msk))
        manifest["cases"].append({"id": case.case_id, "image": img, "mask": msk})
    with open(os.path.join(directory, "manifest.json"), "w") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
        f.write("\n")


def load_dataset(directory) -> List[SyntheticCase]:
    path = os.path.join(directory, "manifest.json")
    try:
        with open(path) as f:
            manifest = json.load(f)
    except FileNotFoundError:
        raise FormatError(f"no dataset manifest at {path}")
    except json.JSONDecodeError as e:
        raise FormatError(f"unreadable dataset manifest {path}: {e}")
    cases = []
    for entry in manifest.get("cases", []):
        image = read_volume(os.path.join(directory, entry["image"]))
        mask = read_volume(os.path.join(directory, entry["mask"]))
        cases.append(SyntheticCase(case_id=entry["id"], image=image, mask=mask, seed=-1))
    if not cases:
        raise FormatError(f"dataset manifest {path} lists no cases")
    return cases
