"""PASR1 checkpoints: a named tensor table plus the hash of the config that produced it.

Data format (little endian):
    5 bytes  | magic b"PASR1"
    u32      | format version
    64 bytes | config hash, ASCII hex
    u32      | tensor count
    per tensor:
        u16      | name length, then UTF-8 name
        u8       | dtype code (0 = f32, 1 = f64)
        u8       | rank, then rank x u32 dims
        payload  | row-major values
"""

import logging
import struct
from collections.abc import Mapping
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import FormatError
from .tensorkit import Graph

logger = logging.getLogger(__name__)

MAGIC = b"PASR1"
VERSION = 1
HASH_BYTES = 64
DTYPE_CODES = {np.dtype("<f4"): 0, np.dtype("<f8"): 1}
CODE_DTYPES = {code: dtype for dtype, code in DTYPE_CODES.items()}


@dataclass(frozen=True, eq=False)
class Checkpoint:
    tensors: dict[str, np.ndarray]
    config_hash: str


def save_checkpoint(
    path: str | Path, tensors: Mapping[str, np.ndarray], config_hash: str
) -> None:
    if len(config_hash) != HASH_BYTES:
        raise ValueError(f"Config hash must be {HASH_BYTES} hex characters")
    chunks = [MAGIC, struct.pack("<I", VERSION), config_hash.encode("ascii")]
    chunks.append(struct.pack("<I", len(tensors)))
    for name, value in tensors.items():
        array = np.asarray(value)
        dtype = array.dtype.newbyteorder("<")
        if dtype not in DTYPE_CODES:
            raise ValueError(f"Tensor '{name}' has unsupported dtype {array.dtype}")
        encoded = name.encode("utf-8")
        chunks.append(struct.pack("<H", len(encoded)) + encoded)
        chunks.append(struct.pack("<BB", DTYPE_CODES[dtype], array.ndim))
        chunks.append(struct.pack(f"<{array.ndim}I", *array.shape))
        chunks.append(np.ascontiguousarray(array, dtype=dtype).tobytes())

    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(b"".join(chunks))
    logger.debug(f"Saved {len(tensors)} tensors to {path}")


class _Reader:
    def __init__(self, raw: bytes, path: Path):
        self.raw = raw
        self.path = path
        self.offset = 0

    def take(self, count: int) -> bytes:
        if self.offset + count > len(self.raw):
            raise FormatError(f"Checkpoint {self.path} is truncated", path=str(self.path))
        chunk = self.raw[self.offset : self.offset + count]
        self.offset += count
        return chunk

    def unpack(self, fmt: str) -> tuple:
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def load_checkpoint(path: str | Path, expected_hash: str | None = None) -> Checkpoint:
    """Read a checkpoint; a config hash differing from ``expected_hash`` only logs a warning.

    Raises:
        FormatError: On a bad magic number, unknown version or dtype, or truncation
    """
    path = Path(path)
    reader = _Reader(path.read_bytes(), path)
    if reader.take(len(MAGIC)) != MAGIC:
        raise FormatError(f"{path} is not a PASR1 checkpoint", path=str(path))
    (version,) = reader.unpack("<I")
    if version != VERSION:
        raise FormatError(f"{path} has unsupported version {version}", path=str(path))
    config_hash = reader.take(HASH_BYTES).decode("ascii", errors="replace")
    (count,) = reader.unpack("<I")

    tensors: dict[str, np.ndarray] = {}
    for _ in range(count):
        (length,) = reader.unpack("<H")
        name = reader.take(length).decode("utf-8")
        code, rank = reader.unpack("<BB")
        if code not in CODE_DTYPES:
            raise FormatError(f"{path}: tensor '{name}' has dtype code {code}", path=str(path))
        dims = reader.unpack(f"<{rank}I")
        dtype = CODE_DTYPES[code]
        size = int(np.prod(dims)) * dtype.itemsize
        tensors[name] = np.frombuffer(reader.take(size), dtype=dtype).reshape(dims).copy()
    if reader.offset != len(reader.raw):
        raise FormatError(f"{path} has trailing bytes", path=str(path))

    if expected_hash is not None and expected_hash != config_hash:
        logger.warning(
            f"Checkpoint {path} was written under config {config_hash[:12]}, "
            f"current config is {expected_hash[:12]}"
        )
    return Checkpoint(tensors, config_hash)


def save_graph(path: str | Path, graph: Graph, config_hash: str) -> None:
    save_checkpoint(path, graph.state_dict(), config_hash)


def load_graph(path: str | Path, graph: Graph, expected_hash: str | None = None) -> Graph:
    """Load parameters into ``graph`` and mark it trained."""
    checkpoint = load_checkpoint(path, expected_hash)
    graph.load_state_dict(checkpoint.tensors)
    graph.trained = True
    return graph
