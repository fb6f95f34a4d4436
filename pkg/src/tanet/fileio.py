"""Binary tensor files (TSR) and PGM grayscale feature-map export.

TSR layout (all integers little-endian):

    magic   4 bytes  b"TSR1"
    dtype   u8       0=f32, 1=f64, 2=u8, 3=i64
    rank    u8
    dims    rank x u64
    payload row-major values, little-endian

Round trips are bit-exact for every supported dtype.
"""

from __future__ import annotations

import struct

import numpy as np

from tanet import tensor as T

MAGIC = b"TSR1"

_CODE_TO_DTYPE = {
    0: np.dtype("<f4"),
    1: np.dtype("<f8"),
    2: np.dtype("u1"),
    3: np.dtype("<i8"),
}
_KIND_TO_CODE = {("f", 4): 0, ("f", 8): 1, ("u", 1): 2, ("i", 8): 3}


class TsrError(ValueError):
    """Malformed or unsupported TSR content."""


def tsr_write(path, array):
    """Write a tensor or ndarray; returns the byte count written."""
    if isinstance(array, T.Tensor):
        array = array.data
    arr = np.ascontiguousarray(array)
    key = (arr.dtype.kind, arr.dtype.itemsize)
    if key not in _KIND_TO_CODE:
        raise TsrError(f"unsupported dtype {arr.dtype}")
    code = _KIND_TO_CODE[key]
    payload = arr.astype(_CODE_TO_DTYPE[code], copy=False).tobytes()
    header = MAGIC + struct.pack("<BB", code, arr.ndim)
    header += struct.pack(f"<{arr.ndim}Q", *arr.shape)
    blob = header + payload
    with open(path, "wb") as fh:
        fh.write(blob)
    return len(blob)


def tsr_read(path):
    """Read a TSR file into an ndarray (native byte order)."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 6 or blob[:4] != MAGIC:
        raise TsrError(f"{path}: bad magic {blob[:4]!r}, expected {MAGIC!r}")
    code, rank = struct.unpack_from("<BB", blob, 4)
    if code not in _CODE_TO_DTYPE:
        raise TsrError(f"{path}: unknown dtype code {code}")
    head_end = 6 + 8 * rank
    if len(blob) < head_end:
        raise TsrError(f"{path}: truncated header ({len(blob)} bytes)")
    dims = struct.unpack_from(f"<{rank}Q", blob, 6)
    dtype = _CODE_TO_DTYPE[code]
    expected = head_end + int(np.prod(dims, dtype=np.int64)) * dtype.itemsize
    if len(blob) != expected:
        raise TsrError(
            f"{path}: payload length mismatch, expected {expected} bytes "
            f"total, found {len(blob)}"
        )
    arr = np.frombuffer(blob, dtype=dtype, offset=head_end).reshape(dims)
    return np.ascontiguousarray(arr).astype(arr.dtype.newbyteorder("="), copy=False)


def export_pgm(f, path, channel=None):
    """Min-max normalize a 2-D map to [0, 255] and write binary (P5) PGM.

    For rank-3 input, ``channel`` selects one plane; ``None`` takes the
    mean over channels.  A constant map exports as all zeros.
    """
    arr = f.data if isinstance(f, T.Tensor) else np.asarray(f)
    if arr.ndim == 3:
        plane = arr.astype(np.float64).mean(axis=0) if channel is None else \
            arr[int(channel)].astype(np.float64)
    elif arr.ndim == 2:
        plane = arr.astype(np.float64)
    else:
        raise T.ShapeError(f"export_pgm expects a 2-D or 3-D map, got {arr.shape}")
    lo, hi = plane.min(), plane.max()
    if hi > lo:
        scaled = np.round((plane - lo) / (hi - lo) * 255.0)
    else:
        scaled = np.zeros_like(plane)
    pixels = scaled.clip(0, 255).astype(np.uint8)
    h, w = pixels.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(pixels.tobytes())


def read_pgm(path):
    """Read a binary (P5) PGM back into a uint8 array (tests, round trips)."""
    with open(path, "rb") as fh:
        blob = fh.read()
    parts = blob.split(b"\n", 3)
    if len(parts) < 4 or parts[0] != b"P5":
        raise TsrError(f"{path}: not a binary PGM")
    w, h = (int(v) for v in parts[1].split())
    maxval = int(parts[2])
    if maxval != 255:
        raise TsrError(f"{path}: unsupported max value {maxval}")
    data = parts[3]
    if len(data) != w * h:
        raise TsrError(f"{path}: expected {w * h} pixel bytes, found {len(data)}")
    return np.frombuffer(data, dtype=np.uint8).reshape(h, w)
