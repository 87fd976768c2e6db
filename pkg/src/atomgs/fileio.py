"""PNG export and a small self-describing float-map format.

Float-map layout (little-endian): 4-byte magic ``AGFM``, then uint32 height,
width and channel count, then ``height * width * channels`` float32 values in
row-major (row, column, channel) order.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np
from PIL import Image

MAGIC = b"AGFM"
_HEADER = struct.Struct("<4sIII")


def save_png(path: str | Path, rgb: np.ndarray) -> None:
    """8-bit PNG; values are clamped to [0, 1] here and nowhere earlier."""
    img = np.clip(np.asarray(rgb, dtype=np.float64), 0.0, 1.0)
    Image.fromarray(np.round(img * 255.0).astype(np.uint8)).save(path)


def load_png(path: str | Path) -> np.ndarray:
    """RGB image as float64 in [0, 1]; an alpha channel, if any, is dropped."""
    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"), dtype=np.float64) / 255.0


def save_float_map(path: str | Path, data: np.ndarray) -> None:
    arr = np.asarray(data, dtype="<f4")
    if arr.ndim == 2:
        arr = arr[..., None]
    if arr.ndim != 3:
        raise ValueError(f"float map must be HxW or HxWxC, got shape {arr.shape}")
    h, w, c = arr.shape
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, h, w, c))
        fh.write(np.ascontiguousarray(arr).tobytes())


def load_float_map(path: str | Path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise ValueError(f"{path}: too short for a float-map header")
    magic, h, w, c = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise ValueError(f"{path}: bad magic {magic!r}")
    data = np.frombuffer(raw, dtype="<f4", offset=_HEADER.size)
    if data.size != h * w * c:
        raise ValueError(f"{path}: expected {h * w * c} values, found {data.size}")
    data = data.reshape(h, w, c).astype(np.float32)
    return data[..., 0] if c == 1 else data
