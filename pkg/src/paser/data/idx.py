"""IDX (MNIST) file parsing."""

import struct
from pathlib import Path

import numpy as np

from ..errors import FormatError

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


def read_idx(path: str | Path) -> np.ndarray:
    """Parse an unsigned-byte IDX file.

    Data format (big endian):
        u32 | magic (0x00000803 images, 0x00000801 labels)
        u32 | size of each dimension
        u8[] | payload, row-major

    Returns:
        Images as float32 scaled to [0, 1]; labels as int64 class indices

    Raises:
        FormatError: On an unknown magic number or a truncated file
    """
    raw = Path(path).read_bytes()
    if len(raw) < 4:
        raise FormatError(f"IDX file {path} is truncated (no header)", path=str(path))
    (magic,) = struct.unpack(">I", raw[:4])
    if magic not in (IDX_IMAGES_MAGIC, IDX_LABELS_MAGIC):
        raise FormatError(f"IDX file {path} has bad magic 0x{magic:08x}", path=str(path))

    ndim = magic & 0xFF
    header_end = 4 + 4 * ndim
    if len(raw) < header_end:
        raise FormatError(f"IDX file {path} is truncated (dimensions)", path=str(path))
    dims = struct.unpack(f">{ndim}I", raw[4:header_end])
    count = int(np.prod(dims))
    if len(raw) - header_end < count:
        raise FormatError(
            f"IDX file {path} is truncated: expected {count} bytes of data, "
            f"found {len(raw) - header_end}",
            path=str(path),
        )
    values = np.frombuffer(raw, dtype=np.uint8, count=count, offset=header_end).reshape(dims)
    if magic == IDX_IMAGES_MAGIC:
        return values.astype(np.float32) / 255.0
    return values.astype(np.int64)
