"""Binary volume files and heatmap slice export.

Volume file layout (little-endian):
    magic "VOL1"
    u8 rank
    u32 dims[rank]
    u8 dtype tag: 0 = float32, 1 = uint8 mask
    payload, row-major

Slices export as PPM (P6) for signed float data -- positive values ramp to
red, negative to blue, scaled by the slice's max magnitude -- or PGM (P5)
min-max scaled for uint8 data.  Overlay mode averages the heatmap colours
with a grayscale base slice.
"""

import struct

import numpy as np

from .errors import FormatError, ShapeError

MAGIC = b"VOL1"
DTYPE_F32 = 0
DTYPE_U8 = 1

_TAG_TO_DTYPE = {DTYPE_F32: np.dtype("<f4"), DTYPE_U8: np.dtype("u1")}

MAX_DIM = 2 ** 31  # guards the u32 dims against absurd declarations


def write_volume(vol, path):
    vol = np.asarray(vol)
    if vol.dtype == np.uint8 or vol.dtype == bool:
        tag, arr = DTYPE_U8, vol.astype("u1")
    elif np.issubdtype(vol.dtype, np.floating):
        tag, arr = DTYPE_F32, vol.astype("<f4")
    else:
        raise ShapeError(f"volumes must be float or uint8 mask data, got {vol.dtype}")
    if vol.ndim < 1 or vol.ndim > 5:
        raise ShapeError(f"volume rank must be 1..5, got {vol.ndim}")
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<B", arr.ndim))
        f.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        f.write(struct.pack("<B", tag))
        f.write(np.ascontiguousarray(arr).tobytes())


def read_volume(path):
    with open(path, "rb") as f:
        data = f.read()
    off = 0

    def take(n, what):
        nonlocal off
        if off + n > len(data):
            raise FormatError(f"truncated volume file while reading {what}", offset=off)
        chunk = data[off:off + n]
        off += n
        return chunk

    if take(4, "magic") != MAGIC:
        raise FormatError("bad magic, not a VOL1 volume", offset=0)
    (rank,) = struct.unpack("<B", take(1, "rank"))
    if rank < 1 or rank > 5:
        raise FormatError(f"volume rank must be 1..5, got {rank}", offset=4)
    dims = struct.unpack(f"<{rank}I", take(4 * rank, "dims"))
    if any(d == 0 or d > MAX_DIM for d in dims):
        raise FormatError(f"dimension overflow in {dims}", offset=5)
    (tag,) = struct.unpack("<B", take(1, "dtype tag"))
    if tag not in _TAG_TO_DTYPE:
        raise FormatError(f"unknown dtype tag {tag}", offset=off - 1)
    dtype = _TAG_TO_DTYPE[tag]
    n = int(np.prod(dims))
    payload = take(n * dtype.itemsize, "payload")
    if off != len(data):
        raise FormatError("trailing bytes after volume payload", offset=off)
    arr = np.frombuffer(payload, dtype=dtype).reshape(dims)
    return arr.astype(np.float32) if tag == DTYPE_F32 else arr.copy()


# ---------------------------------------------------------------------------
# slice export


def _heat_colors(sl):
    """Signed slice to (H, W, 3) uint8: red ramp positive, blue ramp negative."""
    m = float(np.abs(sl).max())
    v = sl / m if m > 0 else np.zeros_like(sl, dtype=np.float64)
    rgb = np.zeros(sl.shape + (3,), dtype=np.uint8)
    rgb[..., 0] = np.round(255.0 * np.clip(v, 0.0, 1.0)).astype(np.uint8)
    rgb[..., 2] = np.round(255.0 * np.clip(-v, 0.0, 1.0)).astype(np.uint8)
    return rgb


def _gray_levels(sl):
    """Min-max scale a slice to uint8."""
    sl = sl.astype(np.float64)
    lo, hi = float(sl.min()), float(sl.max())
    if hi == lo:
        return np.zeros(sl.shape, dtype=np.uint8)
    return np.round(255.0 * (sl - lo) / (hi - lo)).astype(np.uint8)


def write_ppm(rgb, path):
    h, w, _ = rgb.shape
    with open(path, "wb") as f:
        f.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        f.write(np.ascontiguousarray(rgb, dtype=np.uint8).tobytes())


def write_pgm(gray, path):
    h, w = gray.shape
    with open(path, "wb") as f:
        f.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        f.write(np.ascontiguousarray(gray, dtype=np.uint8).tobytes())


def export_slice(vol_c, depth_index, path, base=None):
    """Write one depth slice of a single-channel volume as a PPM/PGM image.

    Float volumes become signed heatmaps (P6); uint8 volumes become
    grayscale (P5).  When `base` (a float volume of the same shape) is
    given, the heatmap is blended 50/50 over the grayscale base slice.
    """
    vol_c = np.asarray(vol_c)
    if vol_c.ndim != 3:
        raise ShapeError(f"export_slice expects a single-channel (D, H, W) volume, got {vol_c.shape}")
    if not (0 <= depth_index < vol_c.shape[0]):
        raise ShapeError(
            f"depth index {depth_index} out of range for depth {vol_c.shape[0]}")
    sl = vol_c[depth_index]
    if vol_c.dtype == np.uint8 or vol_c.dtype == bool:
        write_pgm(_gray_levels(sl.astype(np.float64)), path)
        return
    heat = _heat_colors(sl.astype(np.float64))
    if base is not None:
        base = np.asarray(base)
        if base.shape != vol_c.shape:
            raise ShapeError(f"overlay base shape {base.shape} does not match {vol_c.shape}")
        gray = _gray_levels(base[depth_index].astype(np.float64))
        heat = ((gray[..., None].astype(np.uint16) + heat.astype(np.uint16)) // 2).astype(np.uint8)
    write_ppm(heat, path)
