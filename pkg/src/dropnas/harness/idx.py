"""Reader for the IDX image/label format used by MNIST.

Images: big-endian ``0x00000803``, u32 count, u32 rows, u32 cols, then one
byte per pixel.  Labels: ``0x00000801``, u32 count, then one byte per label.
Files ending in ``.gz`` are decompressed transparently.
"""

from __future__ import annotations

import gzip
import struct
from pathlib import Path

import numpy as np

from ..errors import FormatError

IMAGE_MAGIC = 0x00000803
LABEL_MAGIC = 0x00000801


def _read(path) -> bytes:
    path = Path(path)
    if path.suffix == ".gz":
        with gzip.open(path, "rb") as f:
            return f.read()
    return path.read_bytes()


def _header(buf: bytes, magic: int, n_dims: int, what: str):
    need = 4 * (1 + n_dims)
    if len(buf) < 4:
        raise FormatError(f"{what} file truncated before magic number", len(buf))
    got = struct.unpack_from(">I", buf, 0)[0]
    if got != magic:
        raise FormatError(f"{what} file has magic 0x{got:08x}, expected 0x{magic:08x}", 0)
    if len(buf) < need:
        raise FormatError(f"{what} file truncated inside header", len(buf))
    return struct.unpack_from(f">{n_dims}I", buf, 4), need


def read_images(path) -> np.ndarray:
    buf = _read(path)
    (count, rows, cols), off = _header(buf, IMAGE_MAGIC, 3, "image")
    size = count * rows * cols
    if len(buf) < off + size:
        raise FormatError(f"image payload truncated: need {size} bytes", len(buf))
    return np.frombuffer(buf, dtype=np.uint8, count=size, offset=off).reshape(count, rows, cols)


def read_labels(path) -> np.ndarray:
    buf = _read(path)
    (count,), off = _header(buf, LABEL_MAGIC, 1, "label")
    if len(buf) < off + count:
        raise FormatError(f"label payload truncated: need {count} bytes", len(buf))
    return np.frombuffer(buf, dtype=np.uint8, count=count, offset=off)


def load_idx(images_path, labels_path) -> tuple[np.ndarray, np.ndarray]:
    """Return images as float32 ``(n, 1, rows, cols)`` in [0, 1] and int64 labels."""
    images = read_images(images_path)
    labels = read_labels(labels_path)
    if len(images) != len(labels):
        raise FormatError(f"image count {len(images)} does not match label count {len(labels)}", 4)
    x = (images.astype(np.float32) / np.float32(255.0))[:, None, :, :]
    return x, labels.astype(np.int64)


def write_idx(images: np.ndarray, labels: np.ndarray, images_path, labels_path) -> None:
    """Write uint8 images ``(n, rows, cols)`` and labels as uncompressed IDX files."""
    images = np.asarray(images, dtype=np.uint8)
    labels = np.asarray(labels, dtype=np.uint8)
    n, rows, cols = images.shape
    Path(images_path).write_bytes(struct.pack(">IIII", IMAGE_MAGIC, n, rows, cols) + images.tobytes())
    Path(labels_path).write_bytes(struct.pack(">II", LABEL_MAGIC, len(labels)) + labels.tobytes())
