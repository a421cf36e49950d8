"""Amplitude pass and clamp filters on normalised signals.

A pass filter keeps values whose magnitude lies inside [lo, hi] (boundaries
inclusive) and zeroes the rest.  A clamp filter saturates magnitudes above
hi to +/-hi, preserving sign.  Raw (unnormalised) signals are handled by
the N * F[raw / N] convention with N the per-channel max magnitude.
"""

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ShapeError

NORM_SLACK = 1e-6

PASS = "pass"
CLAMP = "clamp"


@dataclass(frozen=True)
class FilterSpec:
    """Pass band [lo, hi] or clamp at hi; 0 <= lo < hi <= 1."""
    kind: str
    lo: float = 0.0
    hi: float = 1.0

    def __post_init__(self):
        if self.kind not in (PASS, CLAMP):
            raise ConfigError(f"unknown filter kind '{self.kind}'")
        if self.kind == CLAMP:
            if self.lo != 0.0:
                raise ConfigError("clamp filters take a single upper amplitude, not a range")
            if not (0.0 < self.hi <= 1.0):
                raise ConfigError(f"clamp amplitude must lie in (0, 1], got {self.hi}")
        else:
            if not (0.0 <= self.lo < self.hi <= 1.0):
                raise ConfigError(f"pass band must satisfy 0 <= lo < hi <= 1, got [{self.lo}, {self.hi}]")

    def __call__(self, v):
        """Apply to an already-normalised array (|v| <= 1 up to slack)."""
        if self.kind == PASS:
            return pass_band(v, self.lo, self.hi)
        return clamp(v, self.hi)

    def label(self):
        if self.kind == PASS:
            return f"pass:{self.lo:g}:{self.hi:g}"
        return f"clamp:{self.hi:g}"


def _as_float(v):
    """Floating arrays keep their dtype; everything else becomes float32."""
    v = np.asarray(v)
    if not np.issubdtype(v.dtype, np.floating):
        v = v.astype(np.float32)
    return v


def _check_normalised(v):
    if v.size and float(np.abs(v).max()) > 1.0 + NORM_SLACK:
        raise ShapeError("filter input is not normalised to [-1, 1]")


def pass_band(v, lo, hi):
    """Keep v where lo <= |v| <= hi, zero elsewhere."""
    FilterSpec(PASS, lo, hi)  # revalidate the band
    v = _as_float(v)
    _check_normalised(v)
    mag = np.abs(v)
    return np.where((mag >= lo) & (mag <= hi), v, v.dtype.type(0.0))


def clamp(v, hi):
    """Saturate |v| above hi to +/-hi, preserving sign."""
    FilterSpec(CLAMP, hi=hi)
    v = _as_float(v)
    _check_normalised(v)
    return np.clip(v, v.dtype.type(-hi), v.dtype.type(hi))


def apply_filtered(raw, spec: FilterSpec):
    """N * F[raw / N] with N = max|raw|; all-zero input stays all-zero."""
    raw = np.asarray(raw, dtype=np.float32)
    n = float(np.abs(raw).max()) if raw.size else 0.0
    if n == 0.0:
        return np.zeros_like(raw)
    return (np.float32(n) * spec(raw / np.float32(n))).astype(np.float32)


def apply_filtered_channels(vol, spec: FilterSpec):
    """apply_filtered per channel of a (C, ...) volume."""
    return np.stack([apply_filtered(vol[c], spec) for c in range(vol.shape[0])])


def parse_filter(text):
    """Parse the CLI syntax: 'pass:LO:HI' or 'clamp:HI', optional '@layer=<id|final>'.

    Returns (FilterSpec, insertion) where insertion is an int layer id or 'final'.
    """
    insertion = "final"
    if "@" in text:
        text, _, where = text.partition("@")
        if not where.startswith("layer="):
            raise ConfigError(f"bad filter suffix '@{where}', expected '@layer=<id|final>'")
        where = where[len("layer="):]
        insertion = "final" if where == "final" else _parse_layer_id(where)
    parts = text.split(":")
    try:
        if parts[0] == PASS and len(parts) == 3:
            spec = FilterSpec(PASS, float(parts[1]), float(parts[2]))
        elif parts[0] == CLAMP and len(parts) == 2:
            spec = FilterSpec(CLAMP, hi=float(parts[1]))
        else:
            raise ConfigError(
                f"bad filter '{text}': expected 'pass:LO:HI' or 'clamp:HI'")
    except ValueError as e:
        raise ConfigError(f"bad filter '{text}': {e}") from e
    return spec, insertion


def _parse_layer_id(text):
    try:
        return int(text)
    except ValueError as e:
        raise ConfigError(f"bad layer id '{text}' in filter suffix") from e
